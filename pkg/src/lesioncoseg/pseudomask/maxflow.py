"""Max-flow / min-cut on directed networks with real capacities (Dinic's algorithm)."""
from __future__ import annotations

import numba
import numpy as np


class FlowNetwork:
    """Directed network; each added arc also stores its paired reverse arc.

    Nodes are integers ``0..n_nodes-1``; ``source`` and ``sink`` are chosen
    at construction.
    """

    def __init__(self, n_nodes: int, source: int, sink: int):
        if source == sink:
            raise ValueError("source and sink must differ")
        if not (0 <= source < n_nodes and 0 <= sink < n_nodes):
            raise ValueError("terminal index out of range")
        self.n_nodes = n_nodes
        self.source = source
        self.sink = sink
        self._tails: list[np.ndarray] = []
        self._heads: list[np.ndarray] = []
        self._caps: list[np.ndarray] = []
        self._rcaps: list[np.ndarray] = []

    def add_edge(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> None:
        self.add_edges([u], [v], [cap], [rev_cap])

    def add_edges(self, tails, heads, caps, rev_caps=None) -> None:
        tails = np.asarray(tails, dtype=np.int64).ravel()
        heads = np.asarray(heads, dtype=np.int64).ravel()
        caps = np.asarray(caps, dtype=np.float64).ravel()
        rev = np.zeros_like(caps) if rev_caps is None else np.asarray(rev_caps, dtype=np.float64).ravel()
        if not (len(tails) == len(heads) == len(caps) == len(rev)):
            raise ValueError("edge arrays differ in length")
        if np.any(caps < 0) or np.any(rev < 0) or not np.all(np.isfinite(caps)) or not np.all(np.isfinite(rev)):
            raise ValueError("capacities must be finite and non-negative")
        if len(tails) and (min(tails.min(), heads.min()) < 0 or max(tails.max(), heads.max()) >= self.n_nodes):
            raise ValueError("node index out of range")
        self._tails.append(tails)
        self._heads.append(heads)
        self._caps.append(caps)
        self._rcaps.append(rev)

    def arrays(self):
        """Arc arrays with each arc at even index ``2k`` and its reverse at ``2k+1``."""
        if self._tails:
            t = np.concatenate(self._tails)
            h = np.concatenate(self._heads)
            c = np.concatenate(self._caps)
            rc = np.concatenate(self._rcaps)
        else:
            t = h = np.zeros(0, dtype=np.int64)
            c = rc = np.zeros(0, dtype=np.float64)
        m = len(t)
        tail = np.empty(2 * m, dtype=np.int64)
        head = np.empty(2 * m, dtype=np.int64)
        cap = np.empty(2 * m, dtype=np.float64)
        tail[0::2], tail[1::2] = t, h
        head[0::2], head[1::2] = h, t
        cap[0::2], cap[1::2] = c, rc
        return tail, head, cap


def max_flow(net: FlowNetwork):
    """Return ``(flow_value, source_side)``.

    ``source_side`` is a boolean array marking nodes reachable from the source
    in the final residual graph, i.e. the minimal source set of a minimum cut.
    """
    tail, head, cap = net.arrays()
    order = np.argsort(tail, kind="stable")
    start = np.zeros(net.n_nodes + 1, dtype=np.int64)
    np.add.at(start, tail + 1, 1)
    start = np.cumsum(start)
    eps = 1e-12 * max(1.0, float(cap.max()) if len(cap) else 1.0)
    residual = cap.copy()
    flow = _dinic(net.n_nodes, net.source, net.sink, order, start, head, residual, eps)
    side = _reachable(net.n_nodes, net.source, order, start, head, residual, eps)
    return flow, side


@numba.njit(cache=True)
def _bfs_levels(n, s, order, start, head, residual, eps, level, queue):
    level[:] = -1
    level[s] = 0
    qh = 0
    qt = 1
    queue[0] = s
    while qh < qt:
        u = queue[qh]
        qh += 1
        for k in range(start[u], start[u + 1]):
            a = order[k]
            v = head[a]
            if level[v] < 0 and residual[a] > eps:
                level[v] = level[u] + 1
                queue[qt] = v
                qt += 1
    return level


@numba.njit(cache=True)
def _dinic(n, s, t, order, start, head, residual, eps):
    level = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    it = np.empty(n, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)  # arc ids along current DFS path
    total = 0.0
    while True:
        _bfs_levels(n, s, order, start, head, residual, eps, level, queue)
        if level[t] < 0:
            break
        for u in range(n):
            it[u] = start[u]
        depth = 0
        u = s
        while True:
            if u == t:
                # bottleneck along path, then augment
                f = np.inf
                for d in range(depth):
                    if residual[path[d]] < f:
                        f = residual[path[d]]
                for d in range(depth):
                    a = path[d]
                    residual[a] -= f
                    residual[a ^ 1] += f
                total += f
                # retreat to the first saturated arc
                back = depth
                for d in range(depth):
                    if residual[path[d]] <= eps:
                        back = d
                        break
                depth = back
                u = s if depth == 0 else head[path[depth - 1]]
                continue
            advanced = False
            while it[u] < start[u + 1]:
                a = order[it[u]]
                v = head[a]
                if residual[a] > eps and level[v] == level[u] + 1:
                    path[depth] = a
                    depth += 1
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if advanced:
                continue
            # dead end: prune u and step back
            level[u] = -1
            if depth == 0:
                break
            depth -= 1
            prev = head[path[depth] ^ 1]
            it[prev] += 1
            u = prev
    return total


@numba.njit(cache=True)
def _reachable(n, s, order, start, head, residual, eps):
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    seen[s] = True
    stack[0] = s
    top = 1
    while top > 0:
        top -= 1
        u = stack[top]
        for k in range(start[u], start[u + 1]):
            a = order[k]
            v = head[a]
            if not seen[v] and residual[a] > eps:
                seen[v] = True
                stack[top] = v
                top += 1
    return seen


def cut_capacity(net: FlowNetwork, source_side: np.ndarray) -> float:
    """Total capacity of arcs leaving ``source_side``."""
    tail, head, cap = net.arrays()
    crossing = source_side[tail] & ~source_side[head]
    return float(cap[crossing].sum())
