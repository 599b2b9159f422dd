"""Abelian gauge groups and their link-space operators.

Irreps are plain integers; the :class:`GroupSpec` decides the arithmetic.
Two families are supported:

* ``CyclicN``: the cyclic group Z_N, irreps ``0 .. N-1`` fused modulo N.
* ``TruncatedU1``: U(1) with the representation basis cut to
  ``-J_max .. J_max``.

Every link Hilbert space is spanned by one state per irrep, ordered as
:attr:`GroupSpec.labels`. All operators are complex matrices in that basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class GroupKind(str, Enum):
    CYCLIC = "CyclicN"
    TRUNCATED_U1 = "TruncatedU1"


@dataclass(frozen=True)
class GroupSpec:
    """An abelian gauge group in the representation basis.

    Args:
        kind: ``GroupKind.CYCLIC`` or ``GroupKind.TRUNCATED_U1``.
        order: N for Z_N, or the cutoff J_max for truncated U(1).
    """

    kind: GroupKind
    order: int

    def __post_init__(self):
        if self.kind == GroupKind.CYCLIC and self.order < 2:
            raise ValueError(f"Z_N needs N >= 2, got {self.order}")
        if self.kind == GroupKind.TRUNCATED_U1 and self.order < 1:
            raise ValueError(f"truncated U(1) needs J_max >= 1, got {self.order}")

    @classmethod
    def cyclic(cls, n: int) -> GroupSpec:
        return cls(GroupKind.CYCLIC, int(n))

    @classmethod
    def truncated_u1(cls, j_max: int) -> GroupSpec:
        return cls(GroupKind.TRUNCATED_U1, int(j_max))

    @classmethod
    def parse(cls, text: str) -> GroupSpec:
        """Parse ``Z2``, ``Z3``, ... or ``U1(2)`` / ``U1:2``."""
        s = text.strip().replace(" ", "")
        up = s.upper()
        if up.startswith("Z") and up[1:].isdigit():
            return cls.cyclic(int(up[1:]))
        if up.startswith("U1"):
            rest = up[2:].strip("():")
            if rest.isdigit():
                return cls.truncated_u1(int(rest))
        raise ValueError(f"unrecognised group {text!r}; expected e.g. Z2 or U1(2)")

    @property
    def is_cyclic(self) -> bool:
        return self.kind == GroupKind.CYCLIC

    @property
    def dim(self) -> int:
        """Number of irreps, i.e. the dimension of one link space."""
        return self.order if self.is_cyclic else 2 * self.order + 1

    @property
    def labels(self) -> tuple[int, ...]:
        if self.is_cyclic:
            return tuple(range(self.order))
        return tuple(range(-self.order, self.order + 1))

    @property
    def name(self) -> str:
        return f"Z{self.order}" if self.is_cyclic else f"U1({self.order})"

    def __str__(self) -> str:
        return self.name

    def contains(self, j: int) -> bool:
        if self.is_cyclic:
            return 0 <= j < self.order
        return -self.order <= j <= self.order

    def check(self, j: int) -> int:
        j = int(j)
        if not self.contains(j):
            raise ValueError(f"irrep {j} out of range for {self.name}")
        return j

    def index(self, j: int) -> int:
        """Position of irrep ``j`` in the link basis."""
        return self.check(j) if self.is_cyclic else self.check(j) + self.order

    def reduce(self, j: int) -> int:
        """Bring an integer charge into canonical form (no-op for U(1))."""
        return j % self.order if self.is_cyclic else j

    def group_elements(self) -> tuple[int, ...]:
        """Element labels used for gauge rotations.

        For truncated U(1) the circle is sampled at ``4 J_max + 1`` angles,
        enough to detect any vertex charge ``r + u - l - d`` of the cut space.
        """
        return tuple(range(self.rotation_period()))

    def rotation_period(self) -> int:
        return self.order if self.is_cyclic else 4 * self.order + 1


def fuse(j1: int, j2: int, g: GroupSpec) -> int:
    """Fusion product of two irreps (no cutoff handling for U(1))."""
    return g.reduce(g.check(j1) + g.check(j2))


def conjugate(j: int, g: GroupSpec) -> int:
    return g.reduce(-g.check(j))


def gauss_charge(r: int, u: int, l: int, d: int, g: GroupSpec) -> int:
    """Net charge ``r + u - l - d`` at a vertex; zero for allowed elements."""
    return g.reduce(r + u - l - d)


class LinkKind(str, Enum):
    IDENTITY = "Identity"
    FLUX_U = "FluxU"
    FLUX_U_DAGGER = "FluxUdagger"
    GAUGE_ROTATION = "GaugeRotation"


@dataclass(frozen=True, eq=False)
class LinkOperator:
    """A single-link operator and the matrix representing it."""

    kind: LinkKind
    label: int
    matrix: np.ndarray = field(repr=False)

    def __matmul__(self, other: LinkOperator) -> np.ndarray:
        return self.matrix @ other.matrix


def identity_operator(g: GroupSpec) -> LinkOperator:
    return LinkOperator(LinkKind.IDENTITY, 0, np.eye(g.dim, dtype=complex))


def flux_operator(g: GroupSpec, j: int, dagger: bool = False) -> LinkOperator:
    """Group element operator U^j (or its adjoint) acting on one link.

    ``U^j |J> = |J + j>``; for truncated U(1) targets beyond the cutoff are
    dropped, so the matrix is not unitary there.
    """
    j = g.check(j)
    shift = conjugate(j, g) if dagger else j
    mat = np.zeros((g.dim, g.dim), dtype=complex)
    for big_j in g.labels:
        target = big_j + shift
        if g.is_cyclic:
            target %= g.order
        if g.contains(target):
            mat[g.index(target), g.index(big_j)] = 1.0
    kind = LinkKind.FLUX_U_DAGGER if dagger else LinkKind.FLUX_U
    return LinkOperator(kind, j, mat)


def gauge_rotation(g: GroupSpec, group_element: int) -> LinkOperator:
    """Diagonal gauge rotation ``exp(2 pi i j g / N)`` in the irrep basis."""
    period = g.rotation_period()
    if g.is_cyclic and not 0 <= group_element < period:
        raise ValueError(f"group element {group_element} out of range for {g.name}")
    phases = np.array(
        [_root_of_unity(j * group_element, period) for j in g.labels], dtype=complex
    )
    return LinkOperator(LinkKind.GAUGE_ROTATION, int(group_element), np.diag(phases))


def _root_of_unity(k: int, n: int) -> complex:
    # exact values on the axes so products of rotations compare bit-for-bit
    k %= n
    if 4 * k % n == 0:
        return (1, 1j, -1, -1j)[4 * k // n]
    return complex(np.exp(2j * np.pi * k / n))
