"""Gauge-invariant PEPS site tensors.

A site owns the two outgoing links (side ``s`` to the right, top ``t``
upwards). For abelian groups the physical labels are forced to equal the
outgoing virtual labels (``s = r``, ``t = u``), so an element is fully keyed
by the virtual tuple ``(r, u, l, d)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .symmetry import GroupSpec, gauge_rotation, gauss_charge

Key = tuple[int, int, int, int]


class SelectionRuleError(ValueError):
    """A tensor element violates the vertex Gauss law."""


@dataclass(frozen=True)
class GaugeTensor:
    """Sparse gauge-invariant site tensor.

    Attributes:
        group: gauge group of every leg.
        elements: map ``(r, u, l, d) -> amplitude``; only nonzero entries.
        physical_equals_outgoing: structural flag recording ``s = r``,
            ``t = u``. Always true for tensors built here; a tensor read from
            elsewhere keeps it so downstream code knows how to rebuild the
            physical sums.
    """

    group: GroupSpec
    elements: Mapping[Key, complex]
    physical_equals_outgoing: bool = True
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        clean = {}
        for key, val in self.elements.items():
            key = tuple(int(k) for k in key)
            if len(key) != 4:
                raise ValueError(f"element key {key} must have four labels (r, u, l, d)")
            for j in key:
                self.group.check(j)
            val = complex(val)
            if val != 0:
                clean[key] = val
        object.__setattr__(self, "elements", dict(sorted(clean.items())))
        object.__setattr__(self, "_dense", None)

    @property
    def nnz(self) -> int:
        return len(self.elements)

    def __getitem__(self, key: Key) -> complex:
        return self.elements.get(tuple(key), 0j)

    def dense(self) -> np.ndarray:
        """Dense array ``A[r, u, l, d]`` indexed by link-basis positions."""
        if self._dense is None:
            g = self.group
            arr = np.zeros((g.dim,) * 4, dtype=complex)
            for (r, u, l, d), val in self.elements.items():
                arr[g.index(r), g.index(u), g.index(l), g.index(d)] = val
            arr.setflags(write=False)
            object.__setattr__(self, "_dense", arr)
        return self._dense

    def scaled(self, c: complex) -> GaugeTensor:
        return GaugeTensor(self.group, {k: c * v for k, v in self.elements.items()})

    def with_element(self, key: Key, value: complex) -> GaugeTensor:
        """Copy with one element overwritten, bypassing the selection rule.

        Meant for negative controls; the result may well be invalid.
        """
        elements = dict(self.elements)
        elements[tuple(key)] = value
        return GaugeTensor(self.group, elements)

    # -- text format -----------------------------------------------------

    def to_text(self) -> str:
        lines = [f"# group {self.group.name}", "# j_r j_u j_l j_d re im"]
        for (r, u, l, d), val in self.elements.items():
            lines.append(f"{r} {u} {l} {d} {val.real:.17g} {val.imag:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> GaugeTensor:
        group = None
        elements: dict[Key, complex] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                words = line[1:].split()
                if len(words) == 2 and words[0].lower() == "group":
                    group = GroupSpec.parse(words[1])
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"line {lineno}: expected 6 fields, got {len(parts)}")
            try:
                key = tuple(int(p) for p in parts[:4])
                val = complex(float(parts[4]), float(parts[5]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            elements[key] = elements.get(key, 0) + val
        if group is None:
            raise ValueError("missing '# group <name>' header")
        return cls(group, elements)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> GaugeTensor:
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class Z2Params:
    """Amplitudes of the rotation-invariant Z2 family.

    alpha: no flux through the site; beta: a corner; gamma: one straight
    line; delta: two crossing lines.
    """

    alpha: complex
    beta: complex
    gamma: complex
    delta: complex

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            object.__setattr__(self, name, complex(getattr(self, name)))
        if not any((self.alpha, self.beta, self.gamma, self.delta)):
            raise ValueError("Z2 parameters are all zero")

    def as_tuple(self) -> tuple[complex, complex, complex, complex]:
        return (self.alpha, self.beta, self.gamma, self.delta)


def z2_coefficients(p: Z2Params) -> dict[Key, complex]:
    """The eight symmetry-allowed Z2 elements keyed by ``(r, u, l, d)``."""
    a, b, c, d = p.as_tuple()
    return {
        (0, 0, 0, 0): a,
        # corners: flux enters on one leg and turns
        (0, 0, 1, 1): b,  # left -> down
        (1, 0, 0, 1): b,  # down -> right
        (1, 1, 0, 0): b,  # right -> up
        (0, 1, 1, 0): b,  # left -> up
        # straight lines
        (0, 1, 0, 1): c,  # vertical
        (1, 0, 1, 0): c,  # horizontal
        (1, 1, 1, 1): d,
    }


def build_z2_tensor(p: Z2Params) -> GaugeTensor:
    return GaugeTensor(GroupSpec.cyclic(2), z2_coefficients(p))


def build_zn_tensor(g: GroupSpec, coeffs: Mapping[Key, complex]) -> GaugeTensor:
    """Tensor whose elements are the given representation coefficients.

    Abelian Clebsch-Gordan factors are Kronecker deltas, so each element is
    just its coefficient. Every key must obey ``r + u - l - d = 0``.
    """
    for key in coeffs:
        if len(key) != 4:
            raise ValueError(f"coefficient key {key} must be (j_r, j_u, j_l, j_d)")
        r, u, l, d = (g.check(j) for j in key)
        if gauss_charge(r, u, l, d, g) != 0:
            raise SelectionRuleError(
                f"coefficient {tuple(key)} violates the selection rule "
                f"({r}+{u}-{l}-{d} != 0 in {g.name})"
            )
    return GaugeTensor(g, coeffs)


def random_zn_tensor(g: GroupSpec, rng: np.random.Generator, complex_values: bool = True) -> GaugeTensor:
    """Random tensor with every symmetry-allowed element populated."""
    coeffs = {}
    for key in itertools.product(g.labels, repeat=4):
        if gauss_charge(*key, g) == 0:
            val = rng.normal()
            if complex_values:
                val = val + 1j * rng.normal()
            coeffs[key] = val
    return build_zn_tensor(g, coeffs)


@dataclass
class SymmetryReport:
    ok: bool
    violations: list[dict] = field(default_factory=list)


def check_gauge_symmetry(t: GaugeTensor, rtol: float = 1e-12) -> SymmetryReport:
    """Verify the three site symmetry conditions by explicit transformation.

    The tensor is materialised with its physical legs ``A[s, t, r, u, l, d]``
    (``s``, ``t`` copied from ``r``, ``u`` when the physical-equals-outgoing
    structure is declared) and every group element is applied as a matrix:

    1. rotating both physical legs equals rotating the two ingoing legs;
    2. rotating the side leg equals rotating the right leg;
    3. rotating the top leg equals rotating the up leg.

    Offending element positions are reported with the condition number.
    Mismatches are measured relative to the largest element.
    """
    if not t.physical_equals_outgoing:
        raise ValueError("tensors without s=r, t=u structure are not supported")
    g = t.group
    eye = np.eye(g.dim)
    # A[s, t, r, u, l, d] = delta(s, r) delta(t, u) core[r, u, l, d]
    full = np.einsum("sr,tu,ruld->struld", eye, eye, t.dense())
    tol = rtol * float(np.max(np.abs(full), initial=0.0))

    violations: list[dict] = []
    labels = g.labels
    for h in g.group_elements():
        rot = gauge_rotation(g, h).matrix
        # condition 1: rotating s and t equals rotating l and d
        lhs = np.einsum("as,bt,struld->abruld", rot, rot, full)
        rhs = np.einsum("xl,yd,struld->struxy", rot, rot, full)
        # condition 2: acting on s equals acting on r
        lhs2 = np.einsum("as,struld->atruld", rot, full)
        rhs2 = np.einsum("ar,struld->stauld", rot, full)
        # condition 3: acting on t equals acting on u
        lhs3 = np.einsum("at,struld->saruld", rot, full)
        rhs3 = np.einsum("au,struld->strald", rot, full)
        for cond, (x, y) in enumerate(((lhs, rhs), (lhs2, rhs2), (lhs3, rhs3)), 1):
            bad = np.argwhere(np.abs(x - y) > tol)
            for pos in bad:
                s, tt, r, u, l, d = (labels[i] for i in pos)
                violations.append(
                    {
                        "condition": cond,
                        "group_element": h,
                        "element": (r, u, l, d),
                        "physical": (s, tt),
                        "mismatch": float(abs(x[tuple(pos)] - y[tuple(pos)])),
                    }
                )
    return SymmetryReport(ok=not violations, violations=violations)
