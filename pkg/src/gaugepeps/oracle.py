"""Brute-force physical states on tiny tori.

The state is kept sparse: only link configurations with a nonzero amplitude
are stored, as integer codes with the first link most significant. Links are
ordered by (row, column, direction), direction 0 being the side link to the
right and 1 the top link.

Nothing here is clever on purpose. Amplitudes come from multiplying site
tensor elements; zero partial products are dropped row by row, which is what
keeps a 3x3 Z3 torus (3^18 configurations) tractable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import LoopSpec, TorusSpec
from .symmetry import GroupSpec, flux_operator, gauge_rotation
from .tensor import GaugeTensor

# largest raw configuration space the oracle will enumerate
MAX_CONFIGS = 3 ** 18
CHUNK = 1 << 20
# relative to the largest amplitude: the overall scale of a state is arbitrary
INVARIANCE_RTOL = 1e-12


class OracleSizeError(ValueError):
    pass


def link_index(torus: TorusSpec, x: int, y: int, direction: int) -> int:
    return 2 * ((y % torus.N2) * torus.N1 + (x % torus.N1)) + direction


@dataclass(eq=False)
class StateVector:
    torus: TorusSpec
    group: GroupSpec
    codes: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)

    @property
    def n_links(self) -> int:
        return 2 * self.torus.sites

    def labels(self) -> np.ndarray:
        """Link-basis positions of every stored configuration, shape (n, links)."""
        return decode(self.codes, self.n_links, self.group.dim)

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def amplitude(self, config) -> complex:
        code = encode(np.asarray([[self.group.index(j) for j in config]]), self.group.dim)[0]
        i = np.searchsorted(self.codes, code)
        if i < len(self.codes) and self.codes[i] == code:
            return complex(self.amplitudes[i])
        return 0j

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "re", "im"])
        lab = np.asarray(self.group.labels)
        for row, amp in zip(self.labels(), self.amplitudes):
            w.writerow([" ".join(str(lab[i]) for i in row), f"{amp.real:.17g}", f"{amp.imag:.17g}"])
        return buf.getvalue()

    def dump_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def encode(labels: np.ndarray, dim: int) -> np.ndarray:
    codes = np.zeros(labels.shape[0], dtype=np.int64)
    for col in range(labels.shape[1]):
        codes = codes * dim + labels[:, col]
    return codes


def decode(codes: np.ndarray, n_links: int, dim: int) -> np.ndarray:
    out = np.empty((len(codes), n_links), dtype=np.int64)
    c = codes.copy()
    for col in range(n_links - 1, -1, -1):
        out[:, col] = c % dim
        c //= dim
    return out


def build_state(tensor: GaugeTensor, torus: TorusSpec, max_configs: int = MAX_CONFIGS) -> StateVector:
    """Amplitudes ``prod_x A[r(x), u(x), l(x), d(x)]`` over all link configurations.

    Site ``x`` owns its side and top links; its left and down legs are the
    side link of ``x - e1`` and the top link of ``x - e2``.
    """
    g = tensor.group
    D = g.dim
    n_links = 2 * torus.sites
    if D ** n_links > max_configs:
        raise OracleSizeError(
            f"{g.name} on {torus.N1}x{torus.N2} has {D}^{n_links} configurations, "
            f"above the oracle cap of {max_configs}"
        )
    A = tensor.dense()
    N1, N2 = torus.N1, torus.N2
    row_links = 2 * N1
    row_configs = np.array(np.unravel_index(np.arange(D ** row_links), (D,) * row_links)).T

    def site_factor(labels, x, y):
        r = labels[:, link_index(torus, x, y, 0)]
        u = labels[:, link_index(torus, x, y, 1)]
        l = labels[:, link_index(torus, x - 1, y, 0)]
        d = labels[:, link_index(torus, x, y - 1, 1)]
        return A[r, u, l, d]

    # partial configurations: labels of rows assigned so far, others zero
    labels = np.zeros((1, n_links), dtype=np.int64)
    amps = np.ones(1, dtype=complex)
    for y in range(N2):
        new_labels, new_amps = [], []
        per_chunk = max(1, CHUNK // len(row_configs))
        for start in range(0, len(labels), per_chunk):
            part = labels[start:start + per_chunk]
            cand = np.repeat(part, len(row_configs), axis=0)
            cand[:, 2 * N1 * y: 2 * N1 * (y + 1)] = np.tile(row_configs, (len(part), 1))
            amp = np.repeat(amps[start:start + per_chunk], len(row_configs))
            # row 0 sites need the top links of the last row; do them at the end
            if y > 0:
                for x in range(N1):
                    amp = amp * site_factor(cand, x, y)
            if y == N2 - 1:
                for x in range(N1):
                    amp = amp * site_factor(cand, x, 0)
            keep = amp != 0
            new_labels.append(cand[keep])
            new_amps.append(amp[keep])
        labels = np.concatenate(new_labels)
        amps = np.concatenate(new_amps)
    codes = encode(labels, D)
    order = np.argsort(codes)
    return StateVector(torus, g, codes[order], amps[order])


@dataclass
class InvarianceReport:
    ok: bool
    violations: list[dict] = field(default_factory=list)

    def sites(self) -> set[tuple[int, int]]:
        return {v["site"] for v in self.violations}


def apply_link_operator(s: StateVector, link: int, matrix: np.ndarray) -> StateVector:
    """Apply a single-link matrix to a sparse state."""
    labels = s.labels()
    out_labels, out_amps = [], []
    rows, cols = np.nonzero(matrix)
    for a, b in zip(rows, cols):
        sel = labels[:, link] == b
        if not np.any(sel):
            continue
        lab = labels[sel].copy()
        lab[:, link] = a
        out_labels.append(lab)
        out_amps.append(s.amplitudes[sel] * matrix[a, b])
    if not out_labels:
        return StateVector(s.torus, s.group, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=complex))
    codes = encode(np.concatenate(out_labels), s.group.dim)
    amps = np.concatenate(out_amps)
    uniq, inv = np.unique(codes, return_inverse=True)
    summed = np.zeros(len(uniq), dtype=complex)
    np.add.at(summed, inv, amps)
    return StateVector(s.torus, s.group, uniq, summed)


def inner(bra: StateVector, ket: StateVector) -> complex:
    common, ib, ik = np.intersect1d(bra.codes, ket.codes, assume_unique=True, return_indices=True)
    return complex(np.sum(bra.amplitudes[ib].conj() * ket.amplitudes[ik]))


def gauge_transform(s: StateVector, x: int, y: int, group_element: int) -> StateVector:
    """Apply the vertex transformation at ``(x, y)``: rotate outgoing links, counter-rotate incoming."""
    rot = gauge_rotation(s.group, group_element).matrix
    t = s.torus
    out = s
    for link, mat in (
        (link_index(t, x, y, 0), rot),
        (link_index(t, x, y, 1), rot),
        (link_index(t, x - 1, y, 0), rot.conj().T),
        (link_index(t, x, y - 1, 1), rot.conj().T),
    ):
        out = apply_link_operator(out, link, mat)
    return out


def check_gauge_invariance(s: StateVector, rtol: float = INVARIANCE_RTOL) -> InvarianceReport:
    """Apply every nontrivial vertex transformation at every site.

    A violation is a deviation above ``rtol`` times the largest amplitude.
    """
    report = InvarianceReport(ok=True)
    scale = float(np.max(np.abs(s.amplitudes), initial=0.0))
    if scale == 0:
        return report  # the zero state is trivially invariant
    for y in range(s.torus.N2):
        for x in range(s.torus.N1):
            for h in s.group.group_elements():
                if h == 0:
                    continue
                moved = gauge_transform(s, x, y, h)
                dev = _max_difference(s, moved) / scale
                if dev > rtol:
                    report.ok = False
                    report.violations.append({"site": (x, y), "group_element": h, "deviation": dev})
    return report


def _max_difference(a: StateVector, b: StateVector) -> float:
    codes = np.union1d(a.codes, b.codes)
    va = np.zeros(len(codes), dtype=complex)
    vb = np.zeros(len(codes), dtype=complex)
    va[np.searchsorted(codes, a.codes)] = a.amplitudes
    vb[np.searchsorted(codes, b.codes)] = b.amplitudes
    return float(np.max(np.abs(va - vb), initial=0.0))


def loop_path(torus: TorusSpec, loop: LoopSpec, origin=(0, 0)) -> list[tuple[int, bool]]:
    """Links of the loop with a flag for traversal against the link direction.

    Walks right, up, left, down from ``origin``.
    """
    x, y = origin
    path = []
    for dx, dy, n in ((1, 0, loop.R1), (0, 1, loop.R2), (-1, 0, loop.R1), (0, -1, loop.R2)):
        for _ in range(n):
            if dx == 1:
                path.append((link_index(torus, x, y, 0), False))
            elif dx == -1:
                path.append((link_index(torus, x - 1, y, 0), True))
            elif dy == 1:
                path.append((link_index(torus, x, y, 1), False))
            else:
                path.append((link_index(torus, x, y - 1, 1), True))
            x, y = x + dx, y + dy
    return path


def direct_wilson(s: StateVector, loop: LoopSpec, origin=(0, 0)) -> complex:
    """``<psi|W|psi> / <psi|psi>`` by applying the loop operators one link at a time."""
    loop.check_fits(s.torus)
    out = s
    for link, backwards in loop_path(s.torus, loop, origin):
        mat = flux_operator(s.group, loop.J, dagger=backwards).matrix
        out = apply_link_operator(out, link, mat)
    return inner(s, out) / s.norm_squared()


def log_norm(s: StateVector) -> float:
    return math.log(s.norm_squared())
