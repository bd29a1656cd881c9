"""Murcko scaffolds and an order-independent text key for them."""

from __future__ import annotations

from molalign.chem.smiles import BondOrder, Molecule

_BOND_LABEL = {
    BondOrder.SINGLE: "-",
    BondOrder.DOUBLE: "=",
    BondOrder.TRIPLE: "#",
    BondOrder.AROMATIC: ":",
}


def scaffold_atoms(mol: Molecule) -> list[int]:
    """Indices of atoms left after repeatedly stripping non-ring atoms of degree <= 1."""
    in_ring = [False] * mol.num_atoms
    for bond in mol.bonds:
        if bond.in_ring:
            in_ring[bond.a] = in_ring[bond.b] = True
    alive = [True] * mol.num_atoms
    degree = [mol.degree(i) for i in range(mol.num_atoms)]
    queue = [i for i in range(mol.num_atoms) if not in_ring[i] and degree[i] <= 1]
    while queue:
        v = queue.pop()
        if not alive[v]:
            continue
        alive[v] = False
        for u, _ in mol.neighbors(v):
            if alive[u]:
                degree[u] -= 1
                if not in_ring[u] and degree[u] <= 1:
                    queue.append(u)
    return [i for i in range(mol.num_atoms) if alive[i]]


def _atom_label(atom) -> str:
    label = atom.element.lower() if atom.aromatic else atom.element
    if atom.formal_charge:
        label += f"{atom.formal_charge:+d}"
    return label


def _rerank(signatures: list) -> list[int]:
    order = {sig: r for r, sig in enumerate(sorted(set(signatures)))}
    return [order[s] for s in signatures]


def _refine(colors: list[int], adj: list[list[tuple[int, str]]]) -> list[int]:
    n_classes = len(set(colors))
    while True:
        sigs = [
            (colors[v], tuple(sorted((lab, colors[u]) for u, lab in adj[v])))
            for v in range(len(colors))
        ]
        new = _rerank(sigs)
        n_new = len(set(new))
        if n_new == n_classes:
            return new
        colors, n_classes = new, n_new


def _encode(colors, labels, adj):
    order = sorted(range(len(colors)), key=lambda v: colors[v])
    pos = {v: p for p, v in enumerate(order)}
    atoms = tuple(labels[v] for v in order)
    edges = sorted(
        (min(pos[v], pos[u]), max(pos[v], pos[u]), lab)
        for v in range(len(adj))
        for u, lab in adj[v]
        if v < u
    )
    return atoms, tuple(edges)


def _canonical(colors, labels, adj):
    colors = _refine(colors, adj)
    if len(set(colors)) == len(colors):
        return _encode(colors, labels, adj)
    counts: dict[int, int] = {}
    for c in colors:
        counts[c] = counts.get(c, 0) + 1
    target = min(c for c, n in counts.items() if n > 1)
    best = None
    for v in range(len(colors)):
        if colors[v] != target:
            continue
        split = _rerank([(c, 1 if (c == target and u != v) else 0) for u, c in enumerate(colors)])
        enc = _canonical(split, labels, adj)
        if best is None or enc < best:
            best = enc
    return best


def canonical_key(mol: Molecule, atoms: list[int]) -> str:
    """Canonical text for the subgraph induced by ``atoms``.

    Colors are refined by neighborhood signatures; remaining ties are broken
    by individualizing each candidate and keeping the lexicographically
    smallest encoding, so the result does not depend on input atom order.
    """
    if not atoms:
        return ""
    local = {a: i for i, a in enumerate(atoms)}
    labels = [_atom_label(mol.atoms[a]) for a in atoms]
    adj: list[list[tuple[int, str]]] = [[] for _ in atoms]
    for bond in mol.bonds:
        if bond.a in local and bond.b in local:
            i, j = local[bond.a], local[bond.b]
            lab = _BOND_LABEL[bond.order]
            adj[i].append((j, lab))
            adj[j].append((i, lab))
    atom_part, edge_part = _canonical(_rerank(labels), labels, adj)
    bonds = ",".join(f"{i}{lab}{j}" for i, j, lab in edge_part)
    return ".".join(atom_part) + "|" + bonds


def murcko_scaffold(mol: Molecule) -> str:
    """Scaffold key of ``mol``; the empty string for acyclic molecules."""
    return canonical_key(mol, scaffold_atoms(mol))
