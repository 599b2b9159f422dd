"""Decay-law analysis of Wilson-loop tables.

Everything works on ``log|W|`` so that loops far below double precision
still contribute. Phases are carried alongside but never enter a fit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .engine import SpectrumTable, WilsonResult
from .tensor import GaugeTensor
from .transfer import (
    DEGENERACY_RTOL,
    FluxKind,
    FluxSpec,
    flux_svd,
    straight_flux_reduction,
    tau0,
    tau0_blocks,
    tau0_spectral,
)


class AnalysisError(ValueError):
    pass


@dataclass
class WilsonTable:
    """``(R1, R2) -> (log|W|, phase)`` for loops of one tensor on one torus."""

    entries: dict[tuple[int, int], tuple[float, complex]] = field(default_factory=dict)

    def add(self, R1: int, R2: int, w) -> None:
        if isinstance(w, WilsonResult):
            self.entries[(R1, R2)] = (w.log_abs, w.phase)
        else:
            w = complex(w)
            log_abs = math.log(abs(w)) if w != 0 else -math.inf
            self.entries[(R1, R2)] = (log_abs, w / abs(w) if w != 0 else 0j)

    @classmethod
    def from_values(cls, values: dict) -> WilsonTable:
        t = cls()
        for (a, b), w in values.items():
            t.add(a, b, w)
        return t

    def log_abs(self, R1: int, R2: int) -> float:
        try:
            val = self.entries[(R1, R2)][0]
        except KeyError:
            raise AnalysisError(f"loop ({R1}, {R2}) missing from table") from None
        if val == -math.inf:
            raise AnalysisError(f"loop ({R1}, {R2}) has zero expectation value")
        return val

    def value(self, R1: int, R2: int) -> complex:
        log_abs, phase = self.entries[(R1, R2)]
        return phase * math.exp(log_abs) if log_abs > -math.inf else 0j

    def loops(self) -> list[tuple[int, int]]:
        return sorted(self.entries)

    def rescaled(self, c: float) -> WilsonTable:
        if c <= 0:
            raise ValueError("rescaling constant must be positive")
        shift = math.log(c)
        return WilsonTable({k: (v + shift, p) for k, (v, p) in self.entries.items()})


def creutz(t: WilsonTable, R1: int, R2: int) -> float:
    """Creutz ratio from four loops, on magnitudes only."""
    if R1 < 2 or R2 < 2:
        raise AnalysisError("Creutz ratio needs R1, R2 >= 2")
    return -(
        t.log_abs(R1, R2)
        + t.log_abs(R1 - 1, R2 - 1)
        - t.log_abs(R1 - 1, R2)
        - t.log_abs(R1, R2 - 1)
    )


def creutz_table(t: WilsonTable) -> dict[tuple[int, int], float]:
    out = {}
    for R1, R2 in t.loops():
        try:
            out[(R1, R2)] = creutz(t, R1, R2)
        except AnalysisError:
            continue
    return out


def _linfit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([x, np.ones_like(x)])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 2:
        raise AnalysisError("rank-deficient linear fit")
    resid = y - design @ coef
    return float(coef[0]), float(coef[1]), resid


@dataclass
class FitReport:
    """Two-stage fit of ``-log|W(R1, R2)|``.

    Per ``R1``: ``f = f1 * R2 + f0``. Across ``R1``: ``f1 = kappa_area * R1 +
    kappa_perimeter`` and ``f0 = kappa_perimeter * R1 - log W0``.
    """

    R1_values: list[int]
    f1: list[float]
    f0: list[float]
    row_residuals: dict[int, list[float]]
    kappa_area: float
    kappa_perimeter: float
    kappa_perimeter_from_f0: float
    log_w0: float
    f1_residuals: list[float]
    f0_residuals: list[float]

    @property
    def w0(self) -> float:
        return math.exp(self.log_w0)


def default_window(N1: int) -> tuple[range, range]:
    hi = min(6, N1 - 2)
    return range(2, hi + 1), range(2, hi + 1)


def fit_decay(t: WilsonTable, window: tuple) -> FitReport:
    r1_window, r2_window = (sorted(set(w)) for w in window)
    R1s, f1s, f0s, resids = [], [], [], {}
    for R1 in r1_window:
        pts = [(R2, -t.log_abs(R1, R2)) for R2 in r2_window if (R1, R2) in t.entries]
        if len(pts) < 3:
            continue
        slope, icpt, res = _linfit(*zip(*pts))
        R1s.append(R1)
        f1s.append(slope)
        f0s.append(icpt)
        resids[R1] = res.tolist()
    if len(R1s) < 2:
        raise AnalysisError("need at least 2 values of R1 with 3 or more R2 points each")
    ka, kp, res1 = _linfit(R1s, f1s)
    kp0, icpt0, res0 = _linfit(R1s, f0s)
    return FitReport(R1s, f1s, f0s, resids, ka, kp, kp0, -icpt0, res1.tolist(), res0.tolist())


class Phase(str, Enum):
    AREA = "AreaLaw"
    PERIMETER = "PerimeterLaw"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class Thresholds:
    """Decision thresholds for :func:`classify`.

    kappa_area: string tension below which no area term is claimed.
    linearity_rtol: largest residual of ``log|rho'(R)|`` relative to its span.
    slope_rtol: allowed mismatch ``|slope + kappa_area| / kappa_area``.
    flat_rtol: relative spread of ``|rho'(R)|`` still called R-independent.
    """

    kappa_area: float = 1e-3
    linearity_rtol: float = 1e-2
    slope_rtol: float = 0.25
    flat_rtol: float = 1e-2


@dataclass
class PhaseReport:
    phase: Phase
    kappa: float | None
    fit: FitReport
    evidence: dict = field(default_factory=dict)
    thresholds: Thresholds = field(default_factory=Thresholds)

    @property
    def label(self) -> str:
        if self.phase == Phase.UNDETERMINED:
            return self.phase.value
        return f"{self.phase.value}({self.kappa:.6g})"


def spectrum_evidence(s: SpectrumTable) -> dict:
    """Linearity and flatness of ``log|rho'_1(R)|`` for ``R <= N1 / 2``."""
    lead = s.leading_log_abs()
    Rs = sorted(R for R in lead if R <= s.N1 // 2 and lead[R] > -math.inf)
    vals = [lead[R] for R in Rs]
    ev = {"R": Rs, "log_rho": vals}
    if len(Rs) >= 2:
        slope, icpt, res = _linfit(Rs, vals)
        span = abs(slope) * (Rs[-1] - Rs[0])
        ev["slope"] = slope
        ev["linear_residual"] = float(np.max(np.abs(res)))
        ev["linear_rel_residual"] = float(np.max(np.abs(res)) / span) if span > 0 else math.inf
    all_vals = [v for v in lead.values() if v > -math.inf]
    if all_vals:
        # relative spread of |rho'| = exp(spread of log) - 1
        ev["flat_rel_spread"] = math.expm1(max(all_vals) - min(all_vals))
    return ev


def classify(f: FitReport, s: SpectrumTable, thresholds: Thresholds = Thresholds()) -> PhaseReport:
    ev = spectrum_evidence(s)
    ev["kappa_area"] = f.kappa_area
    ev["kappa_perimeter"] = f.kappa_perimeter
    ka = f.kappa_area
    if ka > thresholds.kappa_area:
        linear = ev.get("linear_rel_residual", math.inf) <= thresholds.linearity_rtol
        slope = ev.get("slope")
        matched = slope is not None and abs(slope + ka) <= thresholds.slope_rtol * ka
        ev["spectrum_linear"] = linear
        ev["slope_matches"] = matched
        if linear and matched:
            return PhaseReport(Phase.AREA, ka, f, ev, thresholds)
    else:
        flat = ev.get("flat_rel_spread", math.inf) <= thresholds.flat_rtol
        ev["spectrum_flat"] = flat
        if flat:
            return PhaseReport(Phase.PERIMETER, f.kappa_perimeter, f, ev, thresholds)
    return PhaseReport(Phase.UNDETERMINED, None, f, ev, thresholds)


@dataclass
class LocalCriteria:
    eigenvalues: list[float]
    leading_degenerate: bool
    gap_ratio: float
    offdiag_weight: float
    flux_singular_values: list[float]
    leading_flux_changes_sector: bool | None
    area_law_compatible: bool
    notes: list[str] = field(default_factory=list)


def local_criteria(tensor: GaugeTensor, J: int = 1) -> LocalCriteria:
    """Local diagnostics read off the site transfer operators.

    (i) degeneracy and gap of the leading zeroth-block eigenvalues;
    (ii) weight of the zeroth block off its diagonal, which keeps the row
    eigenvectors away from product form;
    (iii) whether the leading straight-flux factor across the flux is
    off-diagonal in spin, i.e. changes the singlet state it acts on.
    """
    red = tau0(tensor)
    spectral = tau0_spectral(red)
    blocks = tau0_blocks(red)
    zero = blocks[0].matrix
    # zeroth-block eigenvalues only: the charged blocks cannot carry the norm
    z_vals = np.sort(np.linalg.eigvalsh(0.5 * (zero + zero.T).real))[::-1]
    z_vals = z_vals[np.argsort(-np.abs(z_vals), kind="stable")]
    scale = abs(z_vals[0]) if len(z_vals) else 0.0
    degenerate = len(z_vals) > 1 and abs(abs(z_vals[0]) - abs(z_vals[1])) <= DEGENERACY_RTOL * scale
    gap = abs(z_vals[1]) / scale if len(z_vals) > 1 and scale else 0.0
    total = float(np.sum(np.abs(zero)))
    offdiag = float(np.sum(np.abs(zero - np.diag(np.diag(zero)))) / total) if total else 0.0

    notes = []
    flux = straight_flux_reduction(tensor, FluxSpec(FluxKind.RIGHT, J))
    svd = flux_svd(flux)
    changes = None
    if len(svd.values):
        L = svd.right[0]
        diag_w = float(np.sum(np.abs(np.diag(L)) ** 2))
        changes = diag_w < 0.5
    else:
        notes.append("straight flux operator vanishes")
    compatible = (not degenerate) and offdiag < 1e-2 and bool(changes)
    if degenerate:
        notes.append("leading zeroth-block eigenvalues are degenerate: no area law")
    if offdiag >= 1e-2:
        notes.append("zeroth block is far from diagonal: row eigenvectors are not product-like")
    if changes is False:
        notes.append("leading transverse flux factor is diagonal: flux leaves the singlet state unchanged")
    return LocalCriteria(
        eigenvalues=[float(v) for v in spectral.values],
        leading_degenerate=bool(degenerate),
        gap_ratio=float(gap),
        offdiag_weight=offdiag,
        flux_singular_values=[float(v) for v in svd.values],
        leading_flux_changes_sector=changes,
        area_law_compatible=compatible,
        notes=notes,
    )


# -- serialisation -----------------------------------------------------------

FLOAT = "{:.17g}"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([FLOAT.format(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def wilson_csv(t: WilsonTable) -> str:
    rows = []
    for R1, R2 in t.loops():
        log_abs, phase = t.entries[(R1, R2)]
        rows.append((R1, R2, -log_abs, float(phase.real), float(phase.imag)))
    return _csv(["R1", "R2", "minus_log_abs_W", "phase_re", "phase_im"], rows)


def fit_csv(f: FitReport) -> str:
    return _csv(["R1", "f1", "f0"], [(r, a, b) for r, a, b in zip(f.R1_values, f.f1, f.f0)])


def creutz_csv(c: dict) -> str:
    return _csv(["R1", "R2", "chi"], [(a, b, float(v)) for (a, b), v in sorted(c.items())])


def spectrum_csv(s: SpectrumTable) -> str:
    lead = s.leading_log_abs()
    return _csv(["R", "log_abs_rho1"], [(R, float(lead[R])) for R in sorted(lead)])


def report_text(r: PhaseReport, extra: dict | None = None) -> str:
    f = r.fit
    lines = [
        f"classification: {r.label}",
        f"kappa_area: {FLOAT.format(f.kappa_area)}",
        f"kappa_perimeter: {FLOAT.format(f.kappa_perimeter)}",
        f"kappa_perimeter_from_f0: {FLOAT.format(f.kappa_perimeter_from_f0)}",
        f"log_W0: {FLOAT.format(f.log_w0)}",
        f"fit_R1: {' '.join(str(v) for v in f.R1_values)}",
        f"fit_f1: {' '.join(FLOAT.format(v) for v in f.f1)}",
        f"threshold_kappa_area: {FLOAT.format(r.thresholds.kappa_area)}",
        f"threshold_linearity_rtol: {FLOAT.format(r.thresholds.linearity_rtol)}",
        f"threshold_slope_rtol: {FLOAT.format(r.thresholds.slope_rtol)}",
        f"threshold_flat_rtol: {FLOAT.format(r.thresholds.flat_rtol)}",
    ]
    for key in sorted(r.evidence):
        val = r.evidence[key]
        lines.append(f"evidence_{key}: {_fmt(val)}")
    for key, val in (extra or {}).items():
        lines.append(f"{key}: {_fmt(val)}")
    return "\n".join(lines) + "\n"


def _fmt(val) -> str:
    if isinstance(val, float):
        return FLOAT.format(val)
    if isinstance(val, (list, tuple)):
        return " ".join(_fmt(v) for v in val)
    return str(val)
