"""Proof trees produced by the solver and replayed by the certificate checker.

A proof speaks about one quantifier block at a time:

* ``Choose`` picks a point for the block's variables (an existential witness,
  or a counterexample to a universal block);
* ``Split``/``Cell`` partition the block's box, each cell carrying a proof for
  the remaining blocks;
* ``Leaf`` says the quantifier-free matrix is decided on the current box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union


@dataclass(frozen=True)
class Leaf:
    pass


@dataclass(frozen=True)
class Choose:
    point: Tuple[Tuple[str, float], ...]
    sub: "Proof"


@dataclass(frozen=True)
class Cell:
    box: Tuple[Tuple[str, float, float], ...]
    sub: "Proof"


@dataclass(frozen=True)
class Split:
    var: str
    at: float
    left: "Proof"
    right: "Proof"


Proof = Union[Leaf, Choose, Cell, Split]


def count_cells(p: Proof) -> int:
    if isinstance(p, Split):
        return count_cells(p.left) + count_cells(p.right)
    if isinstance(p, Cell):
        return 1
    return 0
