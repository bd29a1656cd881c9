"""Ring membership from bridge detection."""

from __future__ import annotations


def ring_bond_flags(n_atoms: int, edges: list[tuple[int, int]]) -> list[bool]:
    """Return, per edge, whether it lies on a cycle (i.e. is not a bridge).

    Iterative Tarjan low-link so deep chains do not hit the recursion limit.
    """
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_atoms)]
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))

    disc = [-1] * n_atoms
    low = [0] * n_atoms
    is_bridge = [False] * len(edges)
    timer = 0
    for root in range(n_atoms):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # frames: (vertex, edge used to enter, neighbor iterator position)
        stack = [(root, -1, 0)]
        while stack:
            v, parent_edge, pos = stack[-1]
            if pos < len(adj[v]):
                stack[-1] = (v, parent_edge, pos + 1)
                u, k = adj[v][pos]
                if k == parent_edge:
                    continue
                if disc[u] < 0:
                    disc[u] = low[u] = timer
                    timer += 1
                    stack.append((u, k, 0))
                else:
                    low[v] = min(low[v], disc[u])
            else:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[v])
                    if low[v] > disc[p]:
                        is_bridge[parent_edge] = True
    return [not b for b in is_bridge]


def ring_atom_flags(n_atoms: int, edges: list[tuple[int, int]], bond_flags=None) -> list[bool]:
    if bond_flags is None:
        bond_flags = ring_bond_flags(n_atoms, edges)
    flags = [False] * n_atoms
    for (a, b), in_ring in zip(edges, bond_flags):
        if in_ring:
            flags[a] = flags[b] = True
    return flags
