"""Doubled-leg transfer operators and their symmetry reductions.

A transfer operator sums a site tensor against its conjugate over the
physical legs, optionally with flux operators inserted on the two links the
site owns. Each virtual leg then carries a ket label ``j`` and a bra label
``j'``; we store that pair as a sector ``k = j - j'`` plus a spin ``j``.
Fixing the sector of every leg turns the operator into a dense
``(l, r, d, u)`` tensor over spins, which is what rows are built from.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .symmetry import GroupSpec, LinkKind, flux_operator, identity_operator
from .tensor import GaugeTensor

# relative tolerance for grouping degenerate eigenvalues
DEGENERACY_RTOL = 1e-9
SYMMETRY_ATOL = 1e-12


class SectorError(ValueError):
    """Requested input sectors cannot feed the given flux configuration."""


@dataclass(frozen=True)
class DoubledLegBasis:
    """Ordered ``(j, j')`` states of one doubled virtual leg."""

    group: GroupSpec

    @property
    def states(self) -> list[tuple[int, int]]:
        return [(j, jp) for j in self.group.labels for jp in self.group.labels]

    @property
    def dim(self) -> int:
        return self.group.dim ** 2

    def position(self, j: int, jp: int) -> int:
        g = self.group
        return g.index(j) * g.dim + g.index(jp)

    def sector(self, j: int, jp: int) -> int:
        return self.group.reduce(j - jp)

    def partner(self, spin: int, sector: int) -> int | None:
        """Bra label for a given ket spin in a sector, or None if cut off."""
        g = self.group
        jp = g.reduce(spin - sector)
        return jp if g.contains(jp) else None

    def singlets(self) -> list[int]:
        return [self.position(j, j) for j in self.group.labels]


class FluxKind(str, Enum):
    NONE = "None"
    RIGHT = "Right"
    LEFT = "Left"
    UP = "Up"
    DOWN = "Down"
    CORNER_LOWER_LEFT = "CornerLowerLeft"


@dataclass(frozen=True)
class FluxSpec:
    """Which flux operators act on the side and top links of a site.

    ``Right``/``Up`` apply ``U^J`` on side/top; ``Left``/``Down`` apply the
    adjoint. The lower-left corner applies ``U^J`` on the side and the
    adjoint on the top, matching a counter-clockwise loop.
    """

    kind: FluxKind = FluxKind.NONE
    J: int = 0

    @classmethod
    def none(cls) -> FluxSpec:
        return cls(FluxKind.NONE, 0)

    @property
    def label(self) -> str:
        return self.kind.value if self.kind == FluxKind.NONE else f"{self.kind.value}({self.J})"

    def link_kinds(self) -> tuple[LinkKind, LinkKind]:
        """(side, top) operator kinds."""
        idn, u, ud = LinkKind.IDENTITY, LinkKind.FLUX_U, LinkKind.FLUX_U_DAGGER
        return {
            FluxKind.NONE: (idn, idn),
            FluxKind.RIGHT: (u, idn),
            FluxKind.LEFT: (ud, idn),
            FluxKind.UP: (idn, u),
            FluxKind.DOWN: (idn, ud),
            FluxKind.CORNER_LOWER_LEFT: (u, ud),
        }[self.kind]

    @classmethod
    def from_link_kinds(cls, side: LinkKind, top: LinkKind, J: int) -> FluxSpec:
        for kind in FluxKind:
            candidate = cls(kind, J if kind != FluxKind.NONE else 0)
            if candidate.link_kinds() == (side, top):
                return candidate
        raise ValueError(f"no flux kind has side={side.value}, top={top.value}")

    def is_vertical(self) -> bool:
        return self.kind in (FluxKind.UP, FluxKind.DOWN)

    def is_straight(self) -> bool:
        return self.kind in (FluxKind.RIGHT, FluxKind.LEFT, FluxKind.UP, FluxKind.DOWN)


def _link_matrix(g: GroupSpec, kind: LinkKind, J: int) -> np.ndarray:
    if kind == LinkKind.IDENTITY:
        return identity_operator(g).matrix
    return flux_operator(g, J, dagger=kind == LinkKind.FLUX_U_DAGGER).matrix


def _flux_of(side: LinkKind, top: LinkKind, J: int) -> FluxSpec:
    if (side, top) == (LinkKind.IDENTITY, LinkKind.IDENTITY):
        return FluxSpec.none()
    return FluxSpec.from_link_kinds(side, top, J)


def link_sector(g: GroupSpec, kind: LinkKind, J: int) -> int:
    """Sector ``j - j'`` forced on a link by its operator.

    ``<j'|U^J|j>`` is nonzero only for ``j' = j + J``, i.e. sector ``-J``.
    """
    if kind == LinkKind.IDENTITY or J == 0:
        return 0
    return g.reduce(-J if kind == LinkKind.FLUX_U else J)


@dataclass(frozen=True, eq=False)
class TransferOperator:
    """Full doubled-leg transfer tensor ``T[l, r, d, u]``, each leg of dim D^2."""

    group: GroupSpec
    elements: np.ndarray = field(repr=False)
    flux: FluxSpec
    side: LinkKind
    top: LinkKind

    @property
    def basis(self) -> DoubledLegBasis:
        return DoubledLegBasis(self.group)

    def output_sectors(self) -> tuple[int, int]:
        g, J = self.group, self.flux.J
        return link_sector(g, self.side, J), link_sector(g, self.top, J)


def build_transfer_for_links(
    t: GaugeTensor, side: LinkKind, top: LinkKind, J: int
) -> TransferOperator:
    g = t.group
    g.check(J)
    a = t.dense()  # [r, u, l, d]
    o_side = _link_matrix(g, side, J)
    o_top = _link_matrix(g, top, J)
    # <psi'| O |psi>: bra labels are the row index of the operator
    full = np.einsum("ruld,RULD,Rr,Uu->lLrRdDuU", a, a.conj(), o_side, o_top)
    D2 = g.dim ** 2
    return TransferOperator(g, full.reshape(D2, D2, D2, D2), _flux_of(side, top, J), side, top)


def build_transfer(t: GaugeTensor, f: FluxSpec) -> TransferOperator:
    side, top = f.link_kinds()
    op = build_transfer_for_links(t, side, top, f.J)
    return TransferOperator(op.group, op.elements, f, side, top)


@dataclass(frozen=True, eq=False)
class ReducedTransfer:
    """Sector-fixed transfer operator over spins.

    Attributes:
        tensor: ``R[l, r, d, u]`` indexed by ket spins (link-basis positions).
        sectors: ``(k_l, k_r, k_d, k_u)``.
    """

    group: GroupSpec
    tensor: np.ndarray = field(repr=False)
    sectors: tuple[int, int, int, int]
    flux: FluxSpec

    @property
    def dim(self) -> int:
        return self.group.dim

    @property
    def matrix(self) -> np.ndarray:
        """Rows ``(l, r)``, columns ``(d, u)``."""
        D = self.dim
        return self.tensor.reshape(D * D, D * D)

    def to_csv(self) -> str:
        labels = self.group.labels
        k_l, k_r, k_d, k_u = self.sectors
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [f"d={jd}[k{k_d}];u={ju}[k{k_u}]" for jd in labels for ju in labels]
        w.writerow([f"{self.flux.label}"] + cols)
        mat = self.matrix
        for i, (jl, jr) in enumerate((a, b) for a in labels for b in labels):
            row = [f"l={jl}[k{k_l}];r={jr}[k{k_r}]"]
            row += [_fmt_complex(v) for v in mat[i]]
            w.writerow(row)
        return buf.getvalue()

    def dump_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def _fmt_complex(v: complex) -> str:
    if v.imag == 0:
        return f"{v.real:.17g}"
    return f"{v.real:.17g}{v.imag:+.17g}j"


def project(op: TransferOperator, in_sectors: tuple[int, int]) -> ReducedTransfer:
    """Restrict ``op`` to fixed input sectors ``(k_left, k_down)``."""
    g = op.group
    k_l, k_d = (g.reduce(k) for k in in_sectors)
    k_r, k_u = op.output_sectors()
    if g.reduce(k_l + k_d - k_r - k_u) != 0:
        raise SectorError(
            f"inputs (left={k_l}, down={k_d}) cannot produce outputs "
            f"(right={k_r}, up={k_u}) for flux {op.flux.label}"
        )
    basis = op.basis
    D = g.dim
    # map spin index -> doubled-leg position, -1 where the partner is cut off
    def positions(k):
        out = np.full(D, -1)
        for i, j in enumerate(g.labels):
            jp = basis.partner(j, k)
            if jp is not None:
                out[i] = basis.position(j, jp)
        return out

    pl, pr, pd, pu = positions(k_l), positions(k_r), positions(k_d), positions(k_u)
    padded = np.zeros(tuple(s + 1 for s in op.elements.shape), dtype=complex)
    padded[:-1, :-1, :-1, :-1] = op.elements
    red = padded[np.ix_(pl, pr, pd, pu)]  # index -1 hits the zero padding
    red.setflags(write=False)
    return ReducedTransfer(g, red, (k_l, k_r, k_d, k_u), op.flux)


def reduce_site(
    t: GaugeTensor, side: LinkKind, top: LinkKind, J: int, k_left: int, k_down: int
) -> ReducedTransfer:
    """Build and project in one step, skipping the full D^8 tensor."""
    g = t.group
    k_l, k_d = g.reduce(k_left), g.reduce(k_down)
    k_r, k_u = link_sector(g, side, J), link_sector(g, top, J)
    flux = _flux_of(side, top, J)
    if g.reduce(k_l + k_d - k_r - k_u) != 0:
        raise SectorError(
            f"inputs (left={k_l}, down={k_d}) cannot produce outputs "
            f"(right={k_r}, up={k_u}) for flux {flux.label}"
        )
    a = t.dense()
    D = g.dim
    o_side = _link_matrix(g, side, J)
    o_top = _link_matrix(g, top, J)

    def partner_index(k):
        idx = np.full(D, D)  # D points at a zero pad row
        for i, j in enumerate(g.labels):
            jp = g.reduce(j - k)
            if g.contains(jp):
                idx[i] = g.index(jp)
        return idx

    il, ir, id_, iu = (partner_index(k) for k in (k_l, k_r, k_d, k_u))
    ap = np.zeros((D + 1,) * 4, dtype=complex)
    ap[:D, :D, :D, :D] = a
    bra = ap[np.ix_(ir, iu, il, id_)].conj()  # conj A(r', u', l', d') on ket spins
    osp = np.zeros((D + 1, D), dtype=complex)
    osp[:D] = o_side
    otp = np.zeros((D + 1, D), dtype=complex)
    otp[:D] = o_top
    side_el = osp[ir, np.arange(D)]  # <r'|O|r>
    top_el = otp[iu, np.arange(D)]
    red = np.einsum("ruld,ruld,r,u->lrdu", a, bra, side_el, top_el)
    red.setflags(write=False)
    return ReducedTransfer(g, red, (k_l, k_r, k_d, k_u), flux)


def tau0(t: GaugeTensor) -> ReducedTransfer:
    return reduce_site(t, LinkKind.IDENTITY, LinkKind.IDENTITY, 0, 0, 0)


def straight_flux_reduction(t: GaugeTensor, f: FluxSpec) -> ReducedTransfer:
    """Straight flux fed by a charged input along the flux and singlets across."""
    if not f.is_straight():
        raise ValueError(f"{f.label} is not a straight flux")
    g = t.group
    side, top = f.link_kinds()
    k_flux = link_sector(g, side if not f.is_vertical() else top, f.J)
    if f.is_vertical():
        return reduce_site(t, side, top, f.J, 0, k_flux)
    return reduce_site(t, side, top, f.J, k_flux, 0)


@dataclass(frozen=True)
class Tau0Block:
    """Block of the flux-free singlet reduction at horizontal shift ``k``.

    Rows are ``(l, r)`` spin pairs with ``j_l - j_r = k``; columns are
    ``(d, u)`` pairs with ``j_d - j_u = -k``.
    """

    k: int
    rows: tuple[tuple[int, int], ...]
    cols: tuple[tuple[int, int], ...]
    matrix: np.ndarray


def tau0_blocks(r: ReducedTransfer) -> list[Tau0Block]:
    """Split the singlet reduction into its charge-shift blocks.

    The zeroth block comes first, then pairs ``B_k``, ``B_{-k}`` with
    ``B_k = B_{-k}^T`` for reflection-symmetric tensors.
    """
    if any(r.sectors) or r.flux.kind != FluxKind.NONE:
        raise ValueError("tau0_blocks needs the flux-free singlet reduction")
    g = r.group
    labels = g.labels
    ks = sorted({g.reduce(a - b) for a in labels for b in labels}, key=lambda k: (abs(_centered(k, g)), -_centered(k, g)))
    mat = r.tensor
    blocks = []
    for k in ks:
        rows = tuple((a, b) for a in labels for b in labels if g.reduce(a - b) == k)
        cols = tuple((a, b) for a in labels for b in labels if g.reduce(a - b) == g.reduce(-k))
        block = np.array(
            [[mat[g.index(a), g.index(b), g.index(c), g.index(d)] for c, d in cols] for a, b in rows]
        )
        blocks.append(Tau0Block(k, rows, cols, block))
    return blocks


def _centered(k: int, g: GroupSpec) -> int:
    # representative of a Z_N charge closest to zero, positive on ties
    if not g.is_cyclic:
        return k
    n = g.order
    k %= n
    return k - n if k > n // 2 else k


@dataclass
class SpectralReduction:
    """``values`` with left/right factor matrices.

    For the flux-free reduction ``values`` are eigenvalues and
    ``left == right == M``. For flux reductions they are singular values with
    ``left = K`` (along the flux) and ``right = L`` (transverse).
    """

    values: np.ndarray
    left: list[np.ndarray]
    right: list[np.ndarray]
    kind: str

    def reconstruct(self) -> np.ndarray:
        """Sum of ``value * left (x) right`` as a ``(D^2, D^2)`` matrix."""
        if len(self.values) == 0:
            return np.zeros((0, 0))
        D2 = self.left[0].size
        out = np.zeros((D2, D2), dtype=complex)
        for v, a, b in zip(self.values, self.left, self.right):
            out += v * np.outer(a.ravel(), b.ravel())
        return out


def tau0_spectral(r: ReducedTransfer) -> SpectralReduction:
    """Eigen-decomposition ``tau0 = sum_mu lambda_mu M_mu (x) M_mu``.

    Eigenvalues are sorted by descending magnitude. Near-degenerate values
    (within ``DEGENERACY_RTOL`` of the largest) are ordered by their
    eigenvector entries; each eigenvector's largest entry is made positive.
    """
    mat = r.matrix
    if np.max(np.abs(mat.imag), initial=0.0) > SYMMETRY_ATOL:
        raise ValueError("tau0 must be real")
    mat = mat.real
    if np.max(np.abs(mat - mat.T), initial=0.0) > SYMMETRY_ATOL:
        raise ValueError("tau0 is not symmetric; its spectral form needs reflection symmetry")
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vecs = np.array([_fix_sign(v) for v in vecs.T]).T
    order = _sort_spectrum(vals, vecs)
    vals, vecs = vals[order], vecs[:, order]
    D = r.dim
    ms = [vecs[:, i].reshape(D, D) for i in range(len(vals))]
    return SpectralReduction(vals, ms, ms, "eigen")


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    # ties broken by the first maximal entry
    phase = v[i] / abs(v[i]) if v[i] != 0 else 1.0
    return v / phase


def _sort_spectrum(vals: np.ndarray, vecs: np.ndarray) -> list[int]:
    scale = np.max(np.abs(vals), initial=0.0)
    tol = DEGENERACY_RTOL * scale
    order = sorted(range(len(vals)), key=lambda i: -abs(vals[i]))
    # stable grouping: walk the magnitude order and sort each degenerate run
    out: list[int] = []
    run: list[int] = []
    for i in order:
        if run and abs(abs(vals[run[0]]) - abs(vals[i])) > tol:
            out += _order_run(run, vals, vecs, tol)
            run = []
        run.append(i)
    out += _order_run(run, vals, vecs, tol)
    return out


def _order_run(run, vals, vecs, tol):
    # positive before negative, then lexicographically larger eigenvector first
    def key(i):
        return (vals[i] < 0, tuple(-np.round(vecs[:, i].real, 12)))

    return sorted(run, key=key)


def flux_svd(r: ReducedTransfer) -> SpectralReduction:
    """SVD across the (along-flux) x (transverse) bipartition.

    ``K`` factors act on the leg pair the flux runs through, ``L`` on the
    other pair. All singular values are kept; an all-zero operator gives an
    empty spectrum.
    """
    D = r.dim
    mat = r.matrix if not r.flux.is_vertical() else r.matrix.T
    if not np.any(mat):
        return SpectralReduction(np.zeros(0), [], [], "svd")
    u, s, vh = np.linalg.svd(mat)
    ks, ls = [], []
    for i in range(len(s)):
        a, b = u[:, i], vh[i]
        # move the phase onto L so K's largest entry is positive
        j = int(np.argmax(np.abs(a)))
        ph = a[j] / abs(a[j])
        a, b = a / ph, b * ph
        ks.append(a.reshape(D, D))
        ls.append(b.reshape(D, D))
    return SpectralReduction(s, ks, ls, "svd")
