"""A small SMARTS subset for atom typing.

Covers what atom-contribution tables need: bracket expressions with
``! & , ;`` logic over element symbols, ``#n``, ``H``, ``X``, ``D``,
``A``/``a`` and charges; bare organic/aromatic atoms; bonds ``- = # : ~``
with the SMARTS default (single or aromatic); and branches. Ring closures
and recursive SMARTS are not supported.

Patterns are matched against a :class:`HydrogenExpandedView`, in which every
hydrogen is an explicit node, so ``H`` and ``X`` count the same hydrogens
they would after adding hydrogens to the molecule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from molalign.chem.elements import ATOMIC_NUMBER
from molalign.chem.smiles import BondOrder, Molecule, implicit_hydrogens


class SmartsError(ValueError):
    pass


@dataclass(frozen=True)
class AtomView:
    atomic_number: int
    aromatic: bool
    charge: int
    hcount: int
    connectivity: int
    degree: int


class HydrogenExpandedView:
    """Molecule with implicit hydrogens materialized as extra nodes.

    Node ``i < mol.num_atoms`` is atom ``i`` of ``mol``; later nodes are the
    added hydrogens.
    """

    def __init__(self, mol: Molecule):
        n = mol.num_atoms
        self.parent: list[int] = list(range(n))
        self.adj: list[list[tuple[int, BondOrder]]] = [[] for _ in range(n)]
        for bond in mol.bonds:
            self.adj[bond.a].append((bond.b, bond.order))
            self.adj[bond.b].append((bond.a, bond.order))
        z = [a.atomic_number for a in mol.atoms]
        aromatic = [a.aromatic for a in mol.atoms]
        charge = [a.formal_charge for a in mol.atoms]
        for i in range(n):
            for _ in range(implicit_hydrogens(mol, i)):
                h = len(self.adj)
                self.adj.append([(i, BondOrder.SINGLE)])
                self.adj[i].append((h, BondOrder.SINGLE))
                self.parent.append(i)
                z.append(1)
                aromatic.append(False)
                charge.append(0)
        self.atoms = [
            AtomView(
                atomic_number=z[i],
                aromatic=aromatic[i],
                charge=charge[i],
                hcount=sum(1 for j, _ in self.adj[i] if z[j] == 1),
                connectivity=len(self.adj[i]),
                degree=len(self.adj[i]),
            )
            for i in range(len(self.adj))
        ]
        self.num_heavy_source = n

    def __len__(self) -> int:
        return len(self.atoms)


AtomPredicate = Callable[[AtomView], bool]
BondPredicate = Callable[[BondOrder], bool]


def _bond_query(symbol: str | None) -> BondPredicate:
    if symbol is None:
        return lambda o: o in (BondOrder.SINGLE, BondOrder.AROMATIC)
    if symbol == "-":
        return lambda o: o is BondOrder.SINGLE
    if symbol == "=":
        return lambda o: o is BondOrder.DOUBLE
    if symbol == "#":
        return lambda o: o is BondOrder.TRIPLE
    if symbol == ":":
        return lambda o: o is BondOrder.AROMATIC
    if symbol == "~":
        return lambda o: True
    raise SmartsError(f"unsupported bond symbol {symbol!r}")


def _element(z: int, aromatic: bool | None) -> AtomPredicate:
    if aromatic is None:
        return lambda a: a.atomic_number == z
    return lambda a: a.atomic_number == z and a.aromatic == aromatic


_ALIPHATIC_SYMBOLS = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_SYMBOLS = ("c", "n", "o", "s", "p", "b")


class _BracketParser:
    """Recursive descent over ``[...]`` contents with SMARTS precedence."""

    def __init__(self, text: str, pattern: str):
        self.t = text
        self.i = 0
        self.pattern = pattern

    def fail(self, msg):
        return SmartsError(f"{msg} in {self.pattern!r}")

    def parse(self) -> AtomPredicate:
        pred = self.low()
        if self.i != len(self.t):
            raise self.fail(f"trailing text {self.t[self.i:]!r}")
        return pred

    def low(self):
        parts = [self.or_()]
        while self.peek() == ";":
            self.i += 1
            parts.append(self.or_())
        return parts[0] if len(parts) == 1 else (lambda a, p=tuple(parts): all(f(a) for f in p))

    def or_(self):
        parts = [self.and_()]
        while self.peek() == ",":
            self.i += 1
            parts.append(self.and_())
        return parts[0] if len(parts) == 1 else (lambda a, p=tuple(parts): any(f(a) for f in p))

    def and_(self):
        parts = [self.unary()]
        while self.peek() not in ("", ";", ","):
            if self.peek() == "&":
                self.i += 1
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else (lambda a, p=tuple(parts): all(f(a) for f in p))

    def unary(self):
        if self.peek() == "!":
            self.i += 1
            inner = self.unary()
            return lambda a: not inner(a)
        return self.primitive()

    def peek(self) -> str:
        return self.t[self.i] if self.i < len(self.t) else ""

    def number(self, default=None):
        j = self.i
        while j < len(self.t) and self.t[j].isdigit():
            j += 1
        if j == self.i:
            if default is None:
                raise self.fail("expected a number")
            return default
        value = int(self.t[self.i:j])
        self.i = j
        return value

    def primitive(self) -> AtomPredicate:
        c = self.peek()
        if c == "#":
            self.i += 1
            z = self.number()
            return _element(z, None)
        if c in "+-":
            sign = 1 if c == "+" else -1
            self.i += 1
            if self.peek().isdigit():
                charge = sign * self.number()
            else:
                n = 1
                while self.peek() == c:
                    n += 1
                    self.i += 1
                charge = sign * n
            return lambda a: a.charge == charge
        if c == "H":
            self.i += 1
            n = self.number(default=1)
            return lambda a: a.hcount == n
        if c == "X":
            self.i += 1
            n = self.number(default=1)
            return lambda a: a.connectivity == n
        if c == "D":
            self.i += 1
            n = self.number(default=1)
            return lambda a: a.degree == n
        if c == "A":
            self.i += 1
            return lambda a: not a.aromatic
        if c == "a":
            self.i += 1
            return lambda a: a.aromatic
        for sym in _ALIPHATIC_SYMBOLS:
            if self.t.startswith(sym, self.i):
                self.i += len(sym)
                return _element(ATOMIC_NUMBER[sym], False)
        for sym in _AROMATIC_SYMBOLS:
            if self.t.startswith(sym, self.i):
                self.i += len(sym)
                return _element(ATOMIC_NUMBER[sym.upper()], True)
        raise self.fail(f"unsupported primitive at {self.t[self.i:]!r}")


@dataclass
class Pattern:
    """Tree-shaped query: ``parents[k]`` is the earlier atom that query atom
    ``k`` hangs from (``-1`` for the root) via ``bonds[k]``."""

    source: str
    atoms: list[AtomPredicate]
    parents: list[int]
    bonds: list[BondPredicate | None]

    def matches_at(self, view: HydrogenExpandedView, root: int) -> bool:
        if not self.atoms[0](view.atoms[root]):
            return False
        mapping = [root] + [-1] * (len(self.atoms) - 1)
        used = {root}

        def extend(k: int) -> bool:
            if k == len(self.atoms):
                return True
            anchor = mapping[self.parents[k]]
            for nbr, order in view.adj[anchor]:
                if nbr in used or not self.bonds[k](order) or not self.atoms[k](view.atoms[nbr]):
                    continue
                mapping[k] = nbr
                used.add(nbr)
                if extend(k + 1):
                    return True
                used.discard(nbr)
            mapping[k] = -1
            return False

        return extend(1)


def compile_smarts(smarts: str) -> Pattern:
    atoms: list[AtomPredicate] = []
    parents: list[int] = []
    bonds: list[BondPredicate | None] = []
    stack: list[int] = []
    prev = -1
    pending: str | None = None
    i = 0
    while i < len(smarts):
        c = smarts[i]
        if c == "(":
            stack.append(prev)
            i += 1
            continue
        if c == ")":
            if not stack:
                raise SmartsError(f"unbalanced ')' in {smarts!r}")
            prev = stack.pop()
            i += 1
            continue
        if c in "-=#:~":
            pending = c
            i += 1
            continue
        if c == "[":
            end = smarts.find("]", i)
            if end < 0:
                raise SmartsError(f"unterminated bracket in {smarts!r}")
            pred = _BracketParser(smarts[i + 1:end], smarts).parse()
            i = end + 1
        else:
            pred = None
            if c == "A":
                pred, i = (lambda a: not a.aromatic), i + 1
            elif c == "a":
                pred, i = (lambda a: a.aromatic), i + 1
            else:
                for sym in _ALIPHATIC_SYMBOLS:
                    if smarts.startswith(sym, i):
                        pred, i = _element(ATOMIC_NUMBER[sym], False), i + len(sym)
                        break
                else:
                    for sym in _AROMATIC_SYMBOLS:
                        if smarts.startswith(sym, i):
                            pred, i = _element(ATOMIC_NUMBER[sym.upper()], True), i + len(sym)
                            break
            if pred is None:
                raise SmartsError(f"unsupported token at {smarts[i:]!r} in {smarts!r}")
        atoms.append(pred)
        parents.append(prev)
        bonds.append(None if prev < 0 else _bond_query(pending))
        pending = None
        prev = len(atoms) - 1
    if stack:
        raise SmartsError(f"unbalanced '(' in {smarts!r}")
    if not atoms:
        raise SmartsError("empty SMARTS")
    return Pattern(smarts, atoms, parents, bonds)
