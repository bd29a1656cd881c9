"""SMILES parsing into an atom/bond graph.

Supports the organic subset, bracket atoms (isotope, chirality, explicit H,
charge, atom class), the bond symbols ``- = # : / \\``, branches, ring
closures (including ``%nn``) and disconnected components joined by ``.``.
Aromaticity is read from the input; no perception or kekulization is done.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from molalign.chem.elements import (
    AROMATIC_BRACKET,
    AROMATIC_ORGANIC,
    ATOMIC_NUMBER,
    NORMAL_VALENCES,
    ORGANIC_SUBSET,
)
from molalign.chem.rings import ring_bond_flags


class SmilesError(ValueError):
    """Base class for SMILES parse failures; ``position`` is a 0-based offset."""

    def __init__(self, message: str, smiles: str = "", position: Optional[int] = None):
        if position is not None:
            message = f"{message} at position {position} in {smiles!r}"
        super().__init__(message)
        self.smiles = smiles
        self.position = position


class EmptySmilesError(SmilesError):
    pass


class UnbalancedParenthesesError(SmilesError):
    pass


class RingClosureError(SmilesError):
    pass


class UnknownElementError(SmilesError):
    pass


class ValenceError(SmilesError):
    pass


class BracketAtomError(SmilesError):
    pass


class DanglingBondError(SmilesError):
    pass


class UnexpectedCharacterError(SmilesError):
    pass


class Chirality(enum.IntEnum):
    NONE = 0
    CLOCKWISE = 1  # '@@'
    COUNTERCLOCKWISE = 2  # '@'


class BondOrder(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def valence(self) -> int:
        """Contribution to the bonded order sum; aromatic counts as 1."""
        return _ORDER_VALENCE[self]


_ORDER_VALENCE = {
    BondOrder.SINGLE: 1,
    BondOrder.DOUBLE: 2,
    BondOrder.TRIPLE: 3,
    BondOrder.AROMATIC: 1,
}


class BondDirection(enum.IntEnum):
    NONE = 0
    UP = 1  # '/'
    DOWN = 2  # '\'

    def mirrored(self) -> "BondDirection":
        if self is BondDirection.UP:
            return BondDirection.DOWN
        if self is BondDirection.DOWN:
            return BondDirection.UP
        return self


@dataclass
class Atom:
    element: str
    atomic_number: int
    formal_charge: int = 0
    isotope: Optional[int] = None
    aromatic: bool = False
    chirality: Chirality = Chirality.NONE
    explicit_h: Optional[int] = None  # set only for bracket atoms

    @property
    def is_bracket(self) -> bool:
        return self.explicit_h is not None


@dataclass
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE
    direction: BondDirection = BondDirection.NONE
    in_ring: bool = False

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass
class Molecule:
    atoms: list[Atom]
    bonds: list[Bond]
    smiles_source: str = ""
    _neighbors: Optional[list[list[tuple[int, int]]]] = field(
        default=None, repr=False, compare=False
    )

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def neighbors(self, idx: int) -> list[tuple[int, int]]:
        """(neighbor atom index, bond index) pairs of atom ``idx``."""
        if self._neighbors is None:
            adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
            for k, bond in enumerate(self.bonds):
                adj[bond.a].append((bond.b, k))
                adj[bond.b].append((bond.a, k))
            self._neighbors = adj
        return self._neighbors[idx]

    def degree(self, idx: int) -> int:
        return len(self.neighbors(idx))

    def bonded_order_sum(self, idx: int) -> int:
        return sum(self.bonds[k].order.valence for _, k in self.neighbors(idx))

    def num_components(self) -> int:
        seen = [False] * len(self.atoms)
        count = 0
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                v = stack.pop()
                for u, _ in self.neighbors(v):
                    if not seen[u]:
                        seen[u] = True
                        stack.append(u)
        return count


_BOND_SYMBOLS = {
    "-": (BondOrder.SINGLE, BondDirection.NONE),
    "=": (BondOrder.DOUBLE, BondDirection.NONE),
    "#": (BondOrder.TRIPLE, BondDirection.NONE),
    ":": (BondOrder.AROMATIC, BondDirection.NONE),
    "/": (BondOrder.SINGLE, BondDirection.UP),
    "\\": (BondOrder.SINGLE, BondDirection.DOWN),
}


class _Parser:
    def __init__(self, smiles: str):
        self.s = smiles
        self.i = 0
        self.atoms: list[Atom] = []
        self.bonds: list[Bond] = []
        # bond index -> True when no bond symbol was written
        self.implicit: list[bool] = []
        self.pairs: set[tuple[int, int]] = set()

    def error(self, cls, message, position=None):
        pos = self.i if position is None else position
        return cls(message, self.s, pos)

    def parse(self) -> Molecule:
        s = self.s
        prev: Optional[int] = None
        pending_bond: Optional[str] = None
        pending_pos = 0
        branch_stack: list[tuple[int, int]] = []  # (atom index, open position)
        open_rings: dict[int, tuple[int, Optional[str], int]] = {}
        expect_atom_after_dot = False

        while self.i < len(s):
            ch = s[self.i]
            if ch == "(":
                if prev is None:
                    raise self.error(UnbalancedParenthesesError, "branch opened before any atom")
                if pending_bond is not None:
                    raise self.error(DanglingBondError, "bond symbol before branch")
                branch_stack.append((prev, self.i))
                self.i += 1
                if self.i < len(s) and s[self.i] == ")":
                    raise self.error(UnbalancedParenthesesError, "empty branch")
                continue
            if ch == ")":
                if not branch_stack:
                    raise self.error(UnbalancedParenthesesError, "unmatched ')'")
                if pending_bond is not None:
                    raise self.error(DanglingBondError, "bond symbol not followed by an atom", pending_pos)
                prev, _ = branch_stack.pop()
                self.i += 1
                continue
            if ch in _BOND_SYMBOLS:
                if prev is None:
                    raise self.error(DanglingBondError, "bond symbol without a preceding atom")
                if pending_bond is not None:
                    raise self.error(UnexpectedCharacterError, "two consecutive bond symbols")
                pending_bond, pending_pos = ch, self.i
                self.i += 1
                continue
            if ch == ".":
                if prev is None or pending_bond is not None or expect_atom_after_dot:
                    raise self.error(UnexpectedCharacterError, "misplaced '.'")
                if branch_stack:
                    raise self.error(UnexpectedCharacterError, "'.' inside a branch")
                prev = None
                expect_atom_after_dot = True
                self.i += 1
                continue
            if ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error(RingClosureError, "ring-closure digit without a preceding atom")
                start = self.i
                num = self._ring_number()
                if num in open_rings:
                    other, other_bond, _ = open_rings.pop(num)
                    self._close_ring(other, other_bond, prev, pending_bond, start)
                else:
                    open_rings[num] = (prev, pending_bond, start)
                pending_bond = None
                continue
            if ch == "[" or ch.isalpha() or ch == "*":
                idx = self._atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending_bond, pending_pos)
                elif pending_bond is not None:
                    raise self.error(DanglingBondError, "bond symbol without a preceding atom", pending_pos)
                pending_bond = None
                prev = idx
                expect_atom_after_dot = False
                continue
            raise self.error(UnexpectedCharacterError, f"unexpected character {ch!r}")

        if pending_bond is not None:
            raise self.error(DanglingBondError, "bond symbol not followed by an atom", pending_pos)
        if branch_stack:
            raise self.error(UnbalancedParenthesesError, "unclosed '('", branch_stack[-1][1])
        if open_rings:
            num, (_, _, pos) = min(open_rings.items(), key=lambda kv: kv[1][2])
            raise self.error(RingClosureError, f"unpaired ring-closure {num}", pos)
        if expect_atom_after_dot:
            raise self.error(UnexpectedCharacterError, "trailing '.'", len(s) - 1)

        flags = ring_bond_flags(len(self.atoms), [(b.a, b.b) for b in self.bonds])
        for bond, in_ring, implicit in zip(self.bonds, flags, self.implicit):
            bond.in_ring = in_ring
            # An unmarked bond between aromatic atoms outside any ring
            # (biphenyl-style linkers) is a single bond.
            if implicit and bond.order is BondOrder.AROMATIC and not in_ring:
                bond.order = BondOrder.SINGLE

        mol = Molecule(self.atoms, self.bonds, self.s)
        self._check_valence(mol)
        return mol

    def _ring_number(self) -> int:
        s = self.s
        if s[self.i] == "%":
            digits = s[self.i + 1:self.i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.error(RingClosureError, "'%' must be followed by two digits")
            self.i += 3
            return int(digits)
        num = int(s[self.i])
        self.i += 1
        return num

    def _bond_spec(self, symbol, a, b):
        if symbol is None:
            if self.atoms[a].aromatic and self.atoms[b].aromatic:
                return BondOrder.AROMATIC, BondDirection.NONE
            return BondOrder.SINGLE, BondDirection.NONE
        return _BOND_SYMBOLS[symbol]

    def _add_bond(self, a, b, symbol, pos):
        if a == b:
            raise self.error(RingClosureError, "atom bonded to itself", pos)
        key = (min(a, b), max(a, b))
        if key in self.pairs:
            raise self.error(RingClosureError, "duplicate bond between the same atoms", pos)
        self.pairs.add(key)
        order, direction = self._bond_spec(symbol, a, b)
        self.bonds.append(Bond(a, b, order, direction))
        self.implicit.append(symbol is None)

    def _close_ring(self, opener, open_sym, closer, close_sym, pos):
        if open_sym is not None and close_sym is not None and open_sym != close_sym:
            if _BOND_SYMBOLS[open_sym][0] != _BOND_SYMBOLS[close_sym][0]:
                raise self.error(RingClosureError, "conflicting ring-closure bond symbols", pos)
        if close_sym is not None:
            self._add_bond(closer, opener, close_sym, pos)
        else:
            self._add_bond(opener, closer, open_sym, pos)

    def _atom(self) -> int:
        s = self.s
        if s[self.i] == "[":
            atom = self._bracket_atom()
        else:
            start = self.i
            two = s[self.i:self.i + 2]
            if two in ("Cl", "Br"):
                symbol = two
                self.i += 2
            else:
                symbol = s[self.i]
                self.i += 1
            if symbol in ORGANIC_SUBSET:
                atom = Atom(symbol, ATOMIC_NUMBER[symbol])
            elif symbol in AROMATIC_ORGANIC:
                element = symbol.upper()
                atom = Atom(element, ATOMIC_NUMBER[element], aromatic=True)
            else:
                raise self.error(UnknownElementError, f"unknown element {symbol!r}", start)
        self.atoms.append(atom)
        return len(self.atoms) - 1

    def _bracket_atom(self) -> Atom:
        s = self.s
        start = self.i
        end = s.find("]", start)
        if end < 0:
            raise self.error(BracketAtomError, "unterminated bracket atom", start)
        body = s[start + 1:end]
        self.i = end + 1
        j = 0

        k = j
        while k < len(body) and body[k].isdigit():
            k += 1
        isotope = int(body[j:k]) if k > j else None
        j = k

        symbol = None
        aromatic = False
        for cand in (body[j:j + 2], body[j:j + 1]):
            if not cand:
                continue
            if cand in ATOMIC_NUMBER:
                symbol = cand
                break
            if cand in AROMATIC_BRACKET:
                symbol, aromatic = cand.capitalize(), True
                break
        if symbol is None:
            raise self.error(UnknownElementError, f"unknown element in [{body}]", start)
        j += len(symbol)

        chirality = Chirality.NONE
        if body[j:j + 1] == "@":
            if body[j:j + 2] == "@@":
                chirality = Chirality.CLOCKWISE
                j += 2
            elif body[j:j + 4] in ("@TH1", "@TH2"):
                chirality = (
                    Chirality.COUNTERCLOCKWISE if body[j + 3] == "1" else Chirality.CLOCKWISE
                )
                j += 4
            elif body[j + 1:j + 2].isalpha() and body[j + 1] != "H":
                raise self.error(BracketAtomError, "only tetrahedral chirality is supported", start)
            else:
                chirality = Chirality.COUNTERCLOCKWISE
                j += 1

        hcount = 0
        if body[j:j + 1] == "H":
            j += 1
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            hcount = int(body[j:k]) if k > j else 1
            j = k

        charge = 0
        if body[j:j + 1] in ("+", "-"):
            sign = 1 if body[j] == "+" else -1
            sym = body[j]
            j += 1
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            if k > j:
                charge = sign * int(body[j:k])
                j = k
            else:
                n = 1
                while body[j:j + 1] == sym:
                    n += 1
                    j += 1
                charge = sign * n

        if body[j:j + 1] == ":":
            k = j + 1
            while k < len(body) and body[k].isdigit():
                k += 1
            if k == j + 1:
                raise self.error(BracketAtomError, "atom class requires digits", start)
            j = k

        if j != len(body):
            raise self.error(BracketAtomError, f"malformed bracket atom [{body}]", start)
        return Atom(
            symbol,
            ATOMIC_NUMBER[symbol],
            formal_charge=charge,
            isotope=isotope,
            aromatic=aromatic,
            chirality=chirality,
            explicit_h=hcount,
        )

    def _check_valence(self, mol: Molecule) -> None:
        for idx, atom in enumerate(mol.atoms):
            if atom.is_bracket:
                continue
            total = mol.bonded_order_sum(idx)
            if total > NORMAL_VALENCES[atom.element][-1]:
                raise ValenceError(
                    f"valence overflow on atom {idx} ({atom.element}, bond order sum {total})",
                    self.s,
                )


def parse_smiles(smiles: str) -> Molecule:
    """Parse a SMILES string into a :class:`Molecule`.

    Raises a :class:`SmilesError` subclass describing the first problem found.
    """
    if smiles is None or not smiles.strip():
        raise EmptySmilesError("empty SMILES input")
    return _Parser(smiles.strip()).parse()


def implicit_hydrogens(mol: Molecule, idx: int) -> int:
    """Hydrogen count of atom ``idx`` that is not written as a separate atom.

    Bracket atoms report their written H count. Organic-subset atoms fill up to
    the smallest normal valence that accommodates their bonds; an aromatic atom
    counts one extra unit for ring participation and only fills its lowest
    valence, so thiophene sulfur carries no hydrogen.
    """
    if not 0 <= idx < len(mol.atoms):
        raise IndexError(f"atom index {idx} out of range for {len(mol.atoms)} atoms")
    atom = mol.atoms[idx]
    if atom.explicit_h is not None:
        return atom.explicit_h
    valences = NORMAL_VALENCES[atom.element]
    total = mol.bonded_order_sum(idx)
    if atom.aromatic:
        return max(0, valences[0] - (total + 1))
    for v in valences:
        if v >= total:
            return v - total
    return 0


def total_hydrogens(mol: Molecule, idx: int) -> int:
    """Implicit plus bracket H plus explicit ``[H]`` neighbor atoms."""
    attached = sum(1 for j, _ in mol.neighbors(idx) if mol.atoms[j].atomic_number == 1)
    return implicit_hydrogens(mol, idx) + attached
