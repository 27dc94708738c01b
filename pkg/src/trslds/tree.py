"""Binary tree over the discrete states.

Nodes are integers 0..n_nodes-1 with the root at 0.  Leaves carry the
operative dynamics and are ordered left to right; the position of a leaf in
``leaves`` is its discrete-state index.  Internal nodes carry gating
hyperplanes and are enumerated (in increasing node id) by
``internal_nodes``; ``internal_index[node]`` maps a node id to that
position.
"""

from __future__ import annotations

import numpy as np

ROOT = 0


class TreeTopology:
    """Immutable binary tree with parent/child/leaf/path/depth queries."""

    def __init__(self, parent, children):
        # parent: list with parent[0] == -1; children: dict node -> (left, right)
        self.parent = tuple(parent)
        self.children = {int(n): (int(l), int(r)) for n, (l, r) in children.items()}
        self.n_nodes = len(self.parent)

        depth = [0] * self.n_nodes
        for n in range(1, self.n_nodes):
            depth[n] = depth[self.parent[n]] + 1
        self.depth = tuple(depth)

        # left-to-right leaf order via a left-first depth-first walk
        leaves = []
        stack = [ROOT]
        while stack:
            n = stack.pop()
            if n in self.children:
                left, right = self.children[n]
                stack.append(right)
                stack.append(left)
            else:
                leaves.append(n)
        self.leaves = tuple(leaves)
        self.internal_nodes = tuple(n for n in range(self.n_nodes) if n in self.children)
        self.n_leaves = len(self.leaves)
        self.n_internal = len(self.internal_nodes)

        self.leaf_index = {n: k for k, n in enumerate(self.leaves)}
        self.internal_index = {n: i for i, n in enumerate(self.internal_nodes)}

        self._check()
        self._routing = self._build_routing()

    def _check(self):
        assert self.n_internal == self.n_leaves - 1
        for n, (l, r) in self.children.items():
            assert self.parent[l] == n and self.parent[r] == n
            assert self.depth[l] == self.depth[n] + 1
            assert self.depth[r] == self.depth[n] + 1

    def _build_routing(self):
        # routing[k, i] = +1 if leaf k's path turns left at internal node i,
        # -1 if it turns right, 0 if the node is off the path.
        signs = np.zeros((self.n_leaves, self.n_internal), dtype=np.int8)
        for k, leaf in enumerate(self.leaves):
            n = leaf
            while n != ROOT:
                par = self.parent[n]
                signs[k, self.internal_index[par]] = 1 if self.children[par][0] == n else -1
                n = par
        return signs

    @property
    def routing_signs(self):
        """(n_leaves, n_internal) matrix of +1 (left), -1 (right), 0 (off path)."""
        return self._routing

    def is_leaf(self, n):
        return n not in self.children

    def path(self, n):
        """Node ids from the root to ``n`` (inclusive)."""
        if not 0 <= n < self.n_nodes:
            raise ValueError(f"unknown node {n}")
        out = []
        while n != ROOT:
            out.append(n)
            n = self.parent[n]
        out.append(ROOT)
        return out[::-1]

    def path_internal_indices(self, leaf):
        """Positions (into internal_nodes) of the internal nodes on path(leaf)."""
        k = self.leaf_index[leaf]
        return np.nonzero(self._routing[k])[0]

    def nodes_at_depth(self, d):
        return tuple(n for n in range(self.n_nodes) if self.depth[n] == d)

    def frontier(self, d):
        """Nodes representing their subtree at depth ``d``: nodes at that depth
        plus any leaf shallower than ``d``."""
        return tuple(
            n for n in range(self.n_nodes)
            if self.depth[n] == d or (self.is_leaf(n) and self.depth[n] < d)
        )

    def subtree_leaves(self, n):
        """Leaf indices (positions) under node ``n``."""
        if self.is_leaf(n):
            return [self.leaf_index[n]]
        out = []
        stack = [n]
        while stack:
            m = stack.pop()
            if self.is_leaf(m):
                out.append(self.leaf_index[m])
            else:
                stack.extend(self.children[m])
        return sorted(out)

    @property
    def max_depth(self):
        return max(self.depth)

    def to_dict(self):
        return {"parent": list(self.parent)}

    @classmethod
    def from_dict(cls, d):
        parent = d["parent"]
        children = {}
        for n, p in enumerate(parent):
            if p >= 0:
                children.setdefault(p, []).append(n)
        kids = {}
        for p, cs in children.items():
            if len(cs) != 2:
                raise ValueError(f"node {p} has {len(cs)} children, expected 2")
            kids[p] = (min(cs), max(cs))
        return cls(parent, kids)

    def __eq__(self, other):
        return isinstance(other, TreeTopology) and self.parent == other.parent \
            and self.children == other.children

    def __repr__(self):
        return f"TreeTopology(n_leaves={self.n_leaves}, max_depth={self.max_depth})"


def build_tree(num_leaves):
    """Binary tree with ``num_leaves`` leaves.

    Powers of two give a balanced tree; otherwise the construction is
    left-leaning (the larger half of the leaves goes to the left child),
    so the deepest subtrees sit on the left.  ``num_leaves == 1`` yields a
    single node that is both root and leaf.
    """
    if num_leaves < 1:
        raise ValueError("num_leaves must be >= 1")
    parent = [-1]
    children = {}
    # breadth-first expansion; each queue entry carries its subtree leaf count
    queue = [(0, num_leaves)]
    while queue:
        node, k = queue.pop(0)
        if k == 1:
            continue
        left = len(parent)
        parent.append(node)
        right = len(parent)
        parent.append(node)
        children[node] = (left, right)
        k_left = (k + 1) // 2
        queue.append((left, k_left))
        queue.append((right, k - k_left))
    return TreeTopology(parent, children)


def build_comb(num_leaves):
    """Right-leaning comb tree: leaf k hangs left at depth k-1.

    Tree-structured stick breaking on this topology reproduces sequential
    stick breaking exactly: the leaf at position k-1 gets probability
    sigma(nu_k) * prod_{j<k} sigma(-nu_j), with nu ordered by depth.
    """
    if num_leaves < 1:
        raise ValueError("num_leaves must be >= 1")
    parent = [-1]
    children = {}
    node = 0
    for _ in range(num_leaves - 1):
        left = len(parent)
        parent.append(node)
        right = len(parent)
        parent.append(node)
        children[node] = (left, right)
        node = right
    return TreeTopology(parent, children)
