"""Exact torus contraction through row transfer matrices.

Every row of the torus becomes a dense matrix on the vertical legs of its
``N1`` columns. Only ket spins are materialised; the sector of each leg is
fixed by where the Wilson loop runs, so a Z2 row with eight columns lives in
a 256-dimensional space. Row products are rescaled as they go and the scale
is tracked as a log, since ``|alpha|^(2 N1 N2)`` leaves floating range long
before ``N2 = 100``.
"""

from __future__ import annotations

import cmath
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .symmetry import GroupSpec, LinkKind
from .tensor import GaugeTensor
from .transfer import (
    DEGENERACY_RTOL,
    ReducedTransfer,
    SectorError,
    build_transfer_for_links,
    link_sector,
    reduce_site,
)

DEFAULT_BUDGET_BYTES = 2 * 1024 ** 3
NO_LOOP_FLAG = "no corner amplitude: a flux loop cannot close"
NO_COUPLING_FLAG = "no coupling: every eigenvalue tier has vanishing overlap"
RELEVANCE_TOL = 1e-8


class ResourceBudgetError(RuntimeError):
    """Requested contraction would exceed the memory budget."""


@dataclass(frozen=True)
class TorusSpec:
    N1: int
    N2: int

    def __post_init__(self):
        if self.N1 < 2 or self.N2 < 2:
            raise ValueError(f"torus needs N1, N2 >= 2, got {self.N1}x{self.N2}")

    @property
    def sites(self) -> int:
        return self.N1 * self.N2


@dataclass(frozen=True)
class LoopSpec:
    """Rectangular loop of ``R1 x R2`` links carrying irrep ``J``."""

    R1: int
    R2: int
    J: int = 1

    def check_fits(self, torus: TorusSpec) -> None:
        if not (1 <= self.R1 < torus.N1 and 1 <= self.R2 < torus.N2):
            raise ValueError(
                f"loop {self.R1}x{self.R2} does not fit a {torus.N1}x{torus.N2} torus"
            )


def row_budget_bytes(leg_dim: int, N1: int) -> int:
    """Peak bytes of one row build plus a handful of row-sized products."""
    row = 16 * leg_dim ** (2 * N1)
    return row * (leg_dim + 6)


def check_budget(leg_dim: int, N1: int, budget: int = DEFAULT_BUDGET_BYTES) -> None:
    need = row_budget_bytes(leg_dim, N1)
    if need > budget:
        raise ResourceBudgetError(
            f"row space {leg_dim}^{N1} needs about {need / 2**30:.3g} GiB, "
            f"budget is {budget / 2**30:.3g} GiB"
        )


@dataclass(frozen=True, eq=False)
class RowMatrix:
    """Row operator ``matrix * exp(log_scale)``.

    Rows of ``matrix`` index the lower legs ``(d_0, ..., d_{N1-1})`` with
    column 0 most significant; columns index the upper legs.
    """

    matrix: np.ndarray = field(repr=False)
    log_scale: float
    in_sectors: tuple[int, ...]
    out_sectors: tuple[int, ...]

    @property
    def is_zero(self) -> bool:
        return self.log_scale == -math.inf

    def __matmul__(self, other: RowMatrix) -> RowMatrix:
        if self.out_sectors != other.in_sectors:
            raise SectorError(
                f"row sectors do not chain: {self.out_sectors} vs {other.in_sectors}"
            )
        return _rescaled(
            self.matrix @ other.matrix,
            self.log_scale + other.log_scale,
            self.in_sectors,
            other.out_sectors,
        )

    def power(self, n: int) -> RowMatrix:
        if n < 0:
            raise ValueError("negative power")
        if self.in_sectors != self.out_sectors:
            raise SectorError("only sector-preserving rows can be powered")
        result = _identity_like(self)
        base = self
        while n:
            if n & 1:
                result = result @ base
            n >>= 1
            if n:
                base = base @ base
        return result

    def trace(self) -> tuple[complex, float]:
        """``(mantissa, log_scale)`` of the trace."""
        if self.in_sectors != self.out_sectors:
            raise SectorError("trace of a row whose sectors do not close")
        return complex(np.trace(self.matrix)), self.log_scale

    def true_matrix(self) -> np.ndarray:
        return self.matrix * math.exp(self.log_scale)


def _identity_like(r: RowMatrix) -> RowMatrix:
    return RowMatrix(np.eye(r.matrix.shape[0], dtype=complex), 0.0, r.in_sectors, r.in_sectors)


def _rescaled(mat, log_scale, ins, outs) -> RowMatrix:
    m = np.max(np.abs(mat), initial=0.0)
    if m == 0 or log_scale == -math.inf:
        return RowMatrix(np.zeros_like(mat), -math.inf, ins, outs)
    return RowMatrix(mat / m, log_scale + math.log(m), ins, outs)


def contract_row(tensors: list[np.ndarray]) -> np.ndarray:
    """Periodic horizontal trace of ``(l, r, d, u)`` column tensors."""
    h = tensors[0].shape[0]
    out = None
    for a in range(h):
        x = tensors[0][a]  # (r, d, u)
        for t in tensors[1:]:
            b, P, Q = x.shape
            c, d, u = t.shape[1:]
            x = np.einsum("bPQ,bcdu->cPdQu", x, t).reshape(c, P * d, Q * u)
        term = x[a]
        out = term if out is None else out + term
    return out


def build_row(columns: list[ReducedTransfer]) -> RowMatrix:
    """Contract one row of reduced operators into a rescaled RowMatrix."""
    if not columns:
        raise ValueError("a row needs at least one column")
    g = columns[0].group
    n = len(columns)
    for x, col in enumerate(columns):
        if col.group != g:
            raise ValueError("all columns must share a group")
        nxt = columns[(x + 1) % n]
        if col.sectors[1] != nxt.sectors[0]:
            raise SectorError(
                f"column {x} emits sector {col.sectors[1]} but column "
                f"{(x + 1) % n} expects {nxt.sectors[0]}"
            )
    mat = contract_row([c.tensor for c in columns])
    ins = tuple(c.sectors[2] for c in columns)
    outs = tuple(c.sectors[3] for c in columns)
    return _rescaled(mat, 0.0, ins, outs)


# -- loop geometry -----------------------------------------------------------

SiteOps = dict[tuple[int, int], tuple[LinkKind, LinkKind]]


def loop_link_ops(torus: TorusSpec, loop: LoopSpec, origin=(0, 0)) -> SiteOps:
    """(side, top) operator kinds for every site touched by the loop.

    The loop runs counter-clockwise from ``origin``: ``U`` on the lower and
    right edges, ``U^dagger`` on the upper and left edges.
    """
    loop.check_fits(torus)
    ox, oy = origin
    ops: dict[tuple[int, int], list[LinkKind]] = {}

    def put(x, y, direction, kind):
        key = ((x + ox) % torus.N1, (y + oy) % torus.N2)
        entry = ops.setdefault(key, [LinkKind.IDENTITY, LinkKind.IDENTITY])
        entry[direction] = kind

    for x in range(loop.R1):
        put(x, 0, 0, LinkKind.FLUX_U)
        put(x, loop.R2, 0, LinkKind.FLUX_U_DAGGER)
    for y in range(loop.R2):
        put(loop.R1, y, 1, LinkKind.FLUX_U)
        put(0, y, 1, LinkKind.FLUX_U_DAGGER)
    return {k: (v[0], v[1]) for k, v in ops.items()}


@dataclass(frozen=True)
class SiteKey:
    side: LinkKind
    top: LinkKind
    J: int
    k_left: int
    k_down: int


def site_keys(g: GroupSpec, torus: TorusSpec, ops: SiteOps, J: int) -> list[list[SiteKey]]:
    """Per-row, per-column reduced-operator keys with inputs chained."""
    idn = (LinkKind.IDENTITY, LinkKind.IDENTITY)
    N1, N2 = torus.N1, torus.N2

    def kinds(x, y):
        return ops.get((x % N1, y % N2), idn)

    rows = []
    for y in range(N2):
        row = []
        for x in range(N1):
            side, top = kinds(x, y)
            k_l = link_sector(g, kinds(x - 1, y)[0], J)
            k_d = link_sector(g, kinds(x, y - 1)[1], J)
            jj = J if (side, top) != idn else 0
            row.append(SiteKey(side, top, jj, k_l, k_d))
        rows.append(row)
    return rows


# -- results -----------------------------------------------------------------


@dataclass(frozen=True)
class WilsonResult:
    """Wilson-loop expectation value in log/phase form.

    ``value`` underflows to 0 for very large loops; ``log_abs`` does not.
    """

    log_abs: float
    phase: complex
    flag: str | None = None

    @classmethod
    def from_parts(cls, mantissa: complex, log_scale: float, flag=None) -> WilsonResult:
        if mantissa == 0 or log_scale == -math.inf:
            return cls(-math.inf, 0j, flag)
        mantissa = complex(mantissa)
        return cls(math.log(abs(mantissa)) + log_scale, mantissa / abs(mantissa), flag)

    @property
    def value(self) -> complex:
        if self.log_abs == -math.inf:
            return 0j
        return complex(self.phase) * math.exp(self.log_abs)

    def __complex__(self) -> complex:
        return self.value

    def __abs__(self) -> float:
        return abs(self.value)


@dataclass
class SpectrumTable:
    """Eigenvalues of the pierced row matrix for each separation ``R``.

    ``eigenvalues`` are mantissas sorted by descending magnitude; the true
    values are ``eigenvalues * exp(log_scale)``.
    """

    N1: int
    entries: list[tuple[int, np.ndarray, float]] = field(default_factory=list)

    def leading_log_abs(self) -> dict[int, float]:
        return {R: math.log(abs(ev[0])) + s for R, ev, s in self.entries}

    def leading(self) -> dict[int, complex]:
        return {R: ev[0] * math.exp(s) for R, ev, s in self.entries}


# -- engine ------------------------------------------------------------------


class Contraction:
    """Cached contraction context for one tensor on one torus width.

    Reduced operators, rows and powers of the flux-free row are cached and
    shared; the caches are guarded so several loops can be evaluated from
    different threads at once.
    """

    def __init__(self, tensor: GaugeTensor, N1: int, budget: int = DEFAULT_BUDGET_BYTES,
                 unprojected: bool = False):
        if N1 < 2:
            raise ValueError(f"N1 must be >= 2, got {N1}")
        self.tensor = tensor
        self.group = tensor.group
        self.N1 = N1
        self.unprojected = unprojected
        leg = self.group.dim ** 2 if unprojected else self.group.dim
        check_budget(leg, N1, budget)
        if tensor.nnz == 0:
            raise ValueError("tensor has no nonzero elements")
        self._lock = threading.Lock()
        self._sites: dict = {}
        self._rows: dict = {}
        self._powers: dict = {}

    def _cached(self, cache, key, make):
        with self._lock:
            hit = cache.get(key)
        if hit is not None:
            return hit
        val = make()
        with self._lock:
            return cache.setdefault(key, val)

    def site(self, key: SiteKey) -> np.ndarray:
        def make():
            if self.unprojected:
                op = build_transfer_for_links(self.tensor, key.side, key.top, key.J)
                return op.elements
            return reduce_site(self.tensor, key.side, key.top, key.J, key.k_left, key.k_down)

        return self._cached(self._sites, key, make)

    def row(self, keys: tuple[SiteKey, ...]) -> RowMatrix:
        def make():
            cols = [self.site(k) for k in keys]
            if self.unprojected:
                # sectors are not tracked; every leg carries the full doubled space
                mat = contract_row(cols)
                zeros = (0,) * len(keys)
                return _rescaled(mat, 0.0, zeros, zeros)
            return build_row(cols)

        return self._cached(self._rows, keys, make)

    def flux_free_keys(self) -> tuple[SiteKey, ...]:
        idn = LinkKind.IDENTITY
        return (SiteKey(idn, idn, 0, 0, 0),) * self.N1

    def transfer_row(self) -> RowMatrix:
        return self.row(self.flux_free_keys())

    def row_power(self, keys: tuple[SiteKey, ...], n: int) -> RowMatrix:
        return self._cached(self._powers, (keys, n), lambda: self.row(keys).power(n))

    def trace_rows(self, rows: list[tuple[SiteKey, ...]], replace=None) -> tuple[complex, float]:
        """Trace of the ordered row product, multiplying runs of equal rows as powers.

        With ``replace`` set, every row is swapped for that one while the run
        boundaries stay the same.
        """
        prod = None
        for keys, count in _runs(rows):
            keys = replace or keys
            block = self.row_power(keys, count) if count > 1 else self.row(keys)
            prod = block if prod is None else prod @ block
        return prod.trace()

    def epar_row(self, R: int, J: int = 1) -> RowMatrix:
        """Row pierced by a downward flux at column 0 and an upward one at column R."""
        if not 1 <= R < self.N1:
            raise ValueError(f"separation {R} outside [1, {self.N1 - 1}]")
        g = self.group
        idn, u, ud = LinkKind.IDENTITY, LinkKind.FLUX_U, LinkKind.FLUX_U_DAGGER
        keys = []
        for x in range(self.N1):
            if x == 0:
                keys.append(SiteKey(idn, ud, J, 0, link_sector(g, ud, J)))
            elif x == R:
                keys.append(SiteKey(idn, u, J, 0, link_sector(g, u, J)))
            else:
                keys.append(SiteKey(idn, idn, 0, 0, 0))
        return self.row(tuple(keys))


def _runs(rows):
    runs: list[list] = []
    for keys in rows:
        if runs and runs[-1][0] == keys:
            runs[-1][1] += 1
        else:
            runs.append([keys, 1])
    # rotate so a run is not split across the trace boundary
    if len(runs) > 1 and runs[0][0] == runs[-1][0]:
        last = runs.pop()
        runs[0][1] += last[1]
    return runs


def loop_rows(ctx: Contraction, torus: TorusSpec, loop: LoopSpec, origin=(0, 0)):
    ops = loop_link_ops(torus, loop, origin)
    keys = site_keys(ctx.group, torus, ops, loop.J)
    return [tuple(r) for r in keys]


def norm(tensor: GaugeTensor, torus: TorusSpec, ctx: Contraction | None = None) -> float:
    """``log <psi|psi>`` on the torus."""
    ctx = ctx or Contraction(tensor, torus.N1)
    mant, scale = ctx.trace_rows([ctx.flux_free_keys()] * torus.N2)
    if mant == 0 or scale == -math.inf:
        raise ArithmeticError("norm is numerically zero")
    if mant.real <= 0:
        raise ArithmeticError(f"norm trace is not positive: {mant}")
    return math.log(mant.real) + scale


def wilson_exact(
    tensor: GaugeTensor,
    torus: TorusSpec,
    loop: LoopSpec,
    ctx: Contraction | None = None,
    origin=(0, 0),
) -> WilsonResult:
    """Exact ``<W>`` for an ``R1 x R2`` loop on the torus.

    Numerator and denominator go through the same run structure, so a
    trivial irrep yields exactly one.
    """
    ctx = ctx or Contraction(tensor, torus.N1)
    g = tensor.group
    g.check(loop.J)
    rows = loop_rows(ctx, torus, loop, origin)
    num, s_num = ctx.trace_rows(rows)
    den, s_den = ctx.trace_rows(rows, replace=ctx.flux_free_keys())
    if den == 0:
        raise ArithmeticError("norm is numerically zero")
    if num == 0 or s_num == -math.inf:
        flag = NO_LOOP_FLAG if _z2_without_corners(tensor) else "loop amplitude vanishes"
        return WilsonResult(-math.inf, 0j, flag)
    return WilsonResult.from_parts(num / den, s_num - s_den)


def _z2_without_corners(tensor: GaugeTensor) -> bool:
    g = tensor.group
    return g.is_cyclic and g.order == 2 and tensor[(0, 0, 1, 1)] == 0


def wilson_exact_unprojected(tensor: GaugeTensor, torus: TorusSpec, loop: LoopSpec) -> WilsonResult:
    """Same as :func:`wilson_exact` with full doubled legs and no sector projection."""
    ctx = Contraction(tensor, torus.N1, unprojected=True)
    return wilson_exact(tensor, torus, loop, ctx=ctx)


def epar_spectrum(tensor: GaugeTensor, N1: int, R_range, J: int = 1,
                  ctx: Contraction | None = None) -> SpectrumTable:
    ctx = ctx or Contraction(tensor, N1)
    table = SpectrumTable(N1)
    for R in R_range:
        row = ctx.epar_row(R, J)
        if row.is_zero:
            table.entries.append((R, np.zeros(row.matrix.shape[0], dtype=complex), -math.inf))
            continue
        ev = np.linalg.eigvals(row.matrix)
        ev = ev[np.argsort(-np.abs(ev), kind="stable")]
        table.entries.append((R, ev, row.log_scale))
    return table


# -- thermodynamic estimate --------------------------------------------------


def _tiers(vals: np.ndarray) -> list[list[int]]:
    order = sorted(range(len(vals)), key=lambda i: -abs(vals[i]))
    scale = abs(vals[order[0]]) if order else 0.0
    tiers: list[list[int]] = []
    for i in order:
        if tiers and abs(abs(vals[tiers[-1][0]]) - abs(vals[i])) <= DEGENERACY_RTOL * scale:
            tiers[-1].append(i)
        else:
            tiers.append([i])
    return tiers


def _eig_biorthogonal(mat: np.ndarray):
    vals, right = np.linalg.eig(mat)
    left = np.linalg.inv(right)  # rows are left eigenvectors with <w_i|v_j> = delta_ij
    return vals, right, left


def wilson_thermo(tensor: GaugeTensor, N1: int, R1: int, R2: int, J: int = 1,
                  ctx: Contraction | None = None) -> WilsonResult:
    """Large-``N2`` estimate of ``<W>`` from the leading row eigenpairs.

    Sums over the whole leading tier of the flux-free row (all eigenvalues of
    the top modulus, each with its own phase) and over the first tier of the
    pierced row whose overlaps with the top and bottom loop rows survive the
    relevance filter.
    """
    if not (1 <= R1 < N1 and R2 >= 1):
        raise ValueError(f"loop {R1}x{R2} does not fit width {N1}")
    ctx = ctx or Contraction(tensor, N1)
    if J == 0:
        return WilsonResult(0.0, 1 + 0j)
    torus = TorusSpec(N1, R2 + 2)
    rows = loop_rows(ctx, torus, LoopSpec(R1, R2, J))
    e_b, e_t = ctx.row(rows[0]), ctx.row(rows[R2])
    e_par = ctx.row(rows[1]) if R2 > 1 else None
    e_hat = ctx.transfer_row()
    if e_b.is_zero or e_t.is_zero:
        flag = NO_LOOP_FLAG if _z2_without_corners(tensor) else NO_COUPLING_FLAG
        return WilsonResult(-math.inf, 0j, flag)

    rho, v, w = _eig_biorthogonal(e_hat.matrix)
    top = _tiers(rho)[0]
    if e_par is None:
        # no intermediate rows: E_b and E_t meet directly
        mid_tiers = [[None]]
        rho_p = v_p = w_p = None
    else:
        rho_p, v_p, w_p = _eig_biorthogonal(e_par.matrix)
        mid_tiers = _tiers(rho_p)
    b_mat, t_mat = e_b.matrix, e_t.matrix
    nb, nt = np.linalg.norm(b_mat, 2), np.linalg.norm(t_mat, 2)

    for tier in mid_tiers:
        logs, coeffs = [], []
        relevant = False
        for i in top:
            vi, wi = v[:, i], w[i]
            for j in tier:
                if j is None:
                    amp = wi @ b_mat @ t_mat @ vi
                    norm_ = np.linalg.norm(wi) * nb * nt * np.linalg.norm(vi)
                    log_r = 0j
                else:
                    amp = (wi @ b_mat @ v_p[:, j]) * (w_p[j] @ t_mat @ vi)
                    norm_ = (np.linalg.norm(wi) * nb * np.linalg.norm(v_p[:, j])
                             * np.linalg.norm(w_p[j]) * nt * np.linalg.norm(vi))
                    log_r = (R2 - 1) * cmath.log(rho_p[j])
                if norm_ == 0 or abs(amp) <= RELEVANCE_TOL * norm_:
                    continue
                relevant = True
                logs.append(log_r - (R2 + 1) * cmath.log(rho[i]))
                coeffs.append(amp)
        if not relevant:
            continue
        shift = max(z.real for z in logs)
        total = sum(c * cmath.exp(z - shift) for c, z in zip(coeffs, logs)) / len(top)
        scale = (shift + e_b.log_scale + e_t.log_scale
                 + (R2 - 1) * (e_par.log_scale if e_par is not None else 0.0)
                 - (R2 + 1) * e_hat.log_scale)
        if total == 0:
            continue
        return WilsonResult.from_parts(total, scale)
    return WilsonResult(-math.inf, 0j, NO_COUPLING_FLAG)


# -- closed form for the Z2 family ------------------------------------------


@dataclass(frozen=True)
class AnalyticResult:
    result: WilsonResult
    warnings: tuple[str, ...]

    @property
    def value(self) -> complex:
        return self.result.value


def wilson_analytic_z2(p, R1: int, R2: int) -> AnalyticResult:
    """Leading-order Wilson loop of the Z2 family without straight lines.

    Valid for ``|beta| << |delta| < |alpha|``; violations of that regime are
    returned as warnings rather than errors.
    """
    a, b, c, d = p.as_tuple()
    if c != 0:
        raise ValueError("closed form requires gamma = 0")
    if a == 0 or b == 0 or d == 0:
        raise ValueError("closed form requires nonzero alpha, beta, delta")
    warnings = []
    if not abs(b) < 0.2 * abs(d):
        warnings.append("|beta| is not small against |delta|")
    if not abs(d) < abs(a):
        warnings.append("|delta| < |alpha| does not hold")
    log_abs = (
        math.log(2)
        + 2 * math.log(abs(a * d / b**2))
        + 2 * R1 * R2 * math.log(abs(d / a))
        + 2 * (R1 + R2) * math.log(abs(b**2 / (a * d)))
    )
    phase = 1 + 0j
    if (R1 * R2) % 2:
        z = a * b.conjugate()
        z /= abs(z)
        factor = (z**4).real
        if factor == 0:
            return AnalyticResult(WilsonResult(-math.inf, 0j), tuple(warnings))
        log_abs += math.log(abs(factor))
        phase = complex(math.copysign(1.0, factor))
    return AnalyticResult(WilsonResult(log_abs, phase), tuple(warnings))
