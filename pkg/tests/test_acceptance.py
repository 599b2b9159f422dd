"""Acceptance criteria, one reported line each.

Tolerances are the ones the criteria state; none are widened here.
"""

import functools
import math

import numpy as np
import pytest

from conftest import CONFINING, DEGENERATE, NONPERTURBATIVE, PERTURBATIVE, scenario
from gaugepeps.analysis import Phase, classify, creutz, creutz_table, default_window, fit_decay
from gaugepeps.engine import (
    LoopSpec,
    TorusSpec,
    epar_spectrum,
    norm,
    wilson_analytic_z2,
    wilson_exact,
    wilson_exact_unprojected,
)
from gaugepeps.oracle import build_state, check_gauge_invariance, direct_wilson, log_norm
from gaugepeps.symmetry import GroupSpec
from gaugepeps.tensor import Z2Params, build_z2_tensor, check_gauge_symmetry, random_zn_tensor
from gaugepeps.transfer import FluxKind, FluxSpec, flux_svd, straight_flux_reduction, tau0, tau0_spectral

CONFINING_CHI = -2 * math.log(0.95)
ORACLE_TORUS = TorusSpec(3, 3)
ORACLE_LOOPS = [LoopSpec(1, 1), LoopSpec(2, 1), LoopSpec(2, 2)]


def _spectrum(params):
    tensor, ctx, _ = scenario(params)
    return epar_spectrum(tensor, 8, range(1, 8), ctx=ctx)


def _classification(params):
    _, _, table = scenario(params)
    return classify(fit_decay(table, default_window(8)), _spectrum(params))


def test_1_confining_creutz_converges(acceptance):
    _, _, table = scenario(CONFINING)
    diagonal = [creutz(table, R, R) for R in range(3, 7)]
    distance = [abs(c - CONFINING_CHI) for c in diagonal]
    # monotone up to rounding in the last digits of log|W|
    monotone = all(b <= a + 1e-12 for a, b in zip(distance, distance[1:]))
    final = abs(creutz(table, 6, 6) - 0.1026)
    ok = monotone and final <= 5e-3
    acceptance(1, ok, f"chi(6,6)={diagonal[-1]:.7f} |chi-0.1026|={final:.2e} <= 5e-3, monotone={monotone}")
    assert monotone
    assert final <= 5e-3


def test_2_confining_fit(acceptance):
    _, _, table = scenario(CONFINING)
    fit = fit_decay(table, default_window(8))
    f1 = dict(zip(fit.R1_values, fit.f1))
    lines = [f1[R] for R in (2, 3, 4)]
    gaps = [abs(a - b) for i, a in enumerate(lines) for b in lines[i + 1:]]
    ok = 0.09 <= fit.kappa_area <= 0.14 and min(gaps) > 0.05
    acceptance(2, ok, f"kappa_A={fit.kappa_area:.6f} in [0.09, 0.14], "
                      f"f1(R1=2,3,4)={', '.join(f'{v:.4f}' for v in lines)} min gap {min(gaps):.4f} > 0.05")
    assert 0.09 <= fit.kappa_area <= 0.14
    assert min(gaps) > 0.05


def test_3_confining_spectrum(acceptance):
    lead = _spectrum(CONFINING).leading_log_abs()
    Rs = [1, 2, 3, 4]
    slope, icpt = np.polyfit(Rs, [lead[R] for R in Rs], 1)
    resid = max(abs(lead[R] - (slope * R + icpt)) for R in Rs)
    linear = resid <= 1e-2 * abs(slope) * 3
    target = 2 * math.log(0.95)
    slope_ok = abs(slope - target) <= 1e-3
    asym = max(abs(lead[4 - k] - lead[4 + k]) for k in range(1, 4))
    symmetric = asym <= 1e-10
    ok = linear and slope_ok and symmetric
    acceptance(3, ok, f"slope={slope:.6f} vs {target:.5f} +/- 1e-3, max residual {resid:.1e}, "
                      f"asymmetry about R=4 {asym:.1e}")
    assert linear and slope_ok and symmetric


def test_4_degenerate_perimeter_law(acceptance):
    _, _, table = scenario(DEGENERATE)
    fit = fit_decay(table, default_window(8))
    f1_ok = all(abs(v - 9.2103) <= 1e-2 for v in fit.f1)
    moduli = [abs(v) for v in _spectrum(DEGENERATE).leading().values()]
    spread = (max(moduli) - min(moduli)) / max(moduli)
    phase = _classification(DEGENERATE).phase
    ok = fit.kappa_area <= 1e-3 and f1_ok and spread < 1e-10 and phase == Phase.PERIMETER
    acceptance(4, ok, f"kappa_A={fit.kappa_area:.1e}, f1 in [{min(fit.f1):.5f}, {max(fit.f1):.5f}], "
                      f"|rho'_1| spread {spread:.1e}, {phase.value}")
    assert fit.kappa_area <= 1e-3
    assert f1_ok
    assert spread < 1e-10
    assert phase == Phase.PERIMETER


def test_5_nonperturbative(acceptance):
    tensor, _, table = scenario(NONPERTURBATIVE)
    eig = np.sort(tau0_spectral(tau0(tensor)).values)[::-1]
    eig_ok = np.allclose(eig, [1.0508, 0.02, 0, -0.9508], rtol=0, atol=5e-3)
    sv = flux_svd(straight_flux_reduction(tensor, FluxSpec(FluxKind.RIGHT, 1))).values
    sv = np.pad(sv, (0, 4 - len(sv)))
    sv_ok = np.allclose(sv, [0.4472, 0.02, 0, 0], rtol=0, atol=1e-4)
    chi = creutz_table(table)
    worst = max(chi, key=lambda k: abs(chi[k]))
    chi_ok = abs(chi[worst]) <= 0.05
    phase = _classification(NONPERTURBATIVE).phase
    phase_ok = phase == Phase.PERIMETER
    ok = eig_ok and sv_ok and chi_ok and phase_ok
    acceptance(5, ok, f"tau0 eigenvalues ok={eig_ok}, tau_- singular values ok={sv_ok}, "
                      f"max|chi|={abs(chi[worst]):.3f} at {worst} (limit 0.05), {phase.value}")
    assert eig_ok
    assert sv_ok
    assert chi_ok, f"Creutz ratio {chi[worst]:.4f} at {worst}"
    assert phase_ok


def test_6_analytic_cross_check(acceptance):
    tensor, ctx, _ = scenario(PERTURBATIVE, N2=60, r_max=1)
    torus = TorusSpec(8, 60)
    worst = 0.0
    for R1 in range(2, 6):
        for R2 in range(2, 6):
            exact = wilson_exact(tensor, torus, LoopSpec(R1, R2), ctx=ctx)
            closed = wilson_analytic_z2(Z2Params(*PERTURBATIVE), R1, R2).result
            rel = abs(math.expm1(closed.log_abs - exact.log_abs))
            assert closed.phase == pytest.approx(exact.phase, abs=1e-12)
            worst = max(worst, rel)
    acceptance(6, worst <= 0.02, f"max relative difference {worst:.2e} <= 2e-2")
    assert worst <= 0.02


def _random_z2(rng):
    vals = rng.normal(size=4) + 1j * rng.normal(size=4)
    return build_z2_tensor(Z2Params(*vals))


@functools.lru_cache(maxsize=None)
def oracle_cases():
    rng = np.random.default_rng(20261016)
    tensors = [_random_z2(rng) for _ in range(10)]
    tensors += [random_zn_tensor(GroupSpec.cyclic(3), rng) for _ in range(3)]
    return [(t, build_state(t, ORACLE_TORUS)) for t in tensors]


def test_7_oracle_equivalence(acceptance):
    worst = 0.0
    for tensor, state in oracle_cases():
        worst = max(worst, abs(math.expm1(norm(tensor, ORACLE_TORUS) - log_norm(state))))
        for loop in ORACLE_LOOPS:
            ref = direct_wilson(state, loop)
            got = wilson_exact(tensor, ORACLE_TORUS, loop).value
            worst = max(worst, abs(got - ref) / abs(ref))
    acceptance(7, worst <= 1e-10, f"13 tensors (10 Z2, 3 Z3), max relative deviation {worst:.1e} <= 1e-10")
    assert worst <= 1e-10


def test_8_gauge_invariance(acceptance):
    all_ok = all(check_gauge_symmetry(t).ok and check_gauge_invariance(s).ok for t, s in oracle_cases())
    good = oracle_cases()[10][0]
    bad = good.with_element((1, 0, 0, 0), 0.5)
    flagged_tensor = not check_gauge_symmetry(bad).ok
    flagged_state = not check_gauge_invariance(build_state(bad, ORACLE_TORUS)).ok
    ok = all_ok and flagged_tensor and flagged_state
    acceptance(8, ok, f"13 valid states invariant={all_ok}, corrupted flagged by tensor check={flagged_tensor} "
                      f"and state check={flagged_state}")
    assert ok


def test_9_spectral_identities(acceptance):
    rng = np.random.default_rng(9)
    params = [CONFINING, DEGENERATE, NONPERTURBATIVE, PERTURBATIVE]
    params += [tuple(rng.normal(size=4) * np.exp(2j * np.pi * rng.random(4))) for _ in range(5)]
    worst_gram = worst_rebuild = 0.0
    for p in params:
        red = tau0(build_z2_tensor(Z2Params(*p)))
        sp = tau0_spectral(red)
        gram = np.array([[np.trace(a @ b.T) for b in sp.left] for a in sp.left])
        worst_gram = max(worst_gram, np.abs(gram - np.eye(len(gram))).max())
        worst_rebuild = max(worst_rebuild, np.abs(sp.reconstruct() - red.matrix).max())
    torus = TorusSpec(4, 6)
    worst_proj = 0.0
    for p in params[:2] + params[4:6]:
        t = build_z2_tensor(Z2Params(*p))
        for loop in (LoopSpec(1, 1), LoopSpec(2, 3), LoopSpec(3, 4)):
            a = wilson_exact(t, torus, loop).value
            b = wilson_exact_unprojected(t, torus, loop).value
            worst_proj = max(worst_proj, abs(a - b) / abs(b))
    ok = worst_gram <= 1e-12 and worst_rebuild <= 1e-12 and worst_proj <= 1e-10
    acceptance(9, ok, f"orthonormality {worst_gram:.1e}, reconstruction {worst_rebuild:.1e} <= 1e-12; "
                      f"projected vs unprojected {worst_proj:.1e} <= 1e-10")
    assert worst_gram <= 1e-12
    assert worst_rebuild <= 1e-12
    assert worst_proj <= 1e-10


def test_10_trivial_irrep(acceptance):
    worst = 0.0
    for p in (CONFINING, DEGENERATE, NONPERTURBATIVE):
        tensor, ctx, _ = scenario(p)
        for R1, R2 in [(1, 1), (3, 4), (7, 7)]:
            w = wilson_exact(tensor, TorusSpec(8, 100), LoopSpec(R1, R2, J=0), ctx=ctx)
            worst = max(worst, abs(w.value - 1))
    tensor, ctx, _ = scenario(PERTURBATIVE, N2=60, r_max=1)
    worst = max(worst, abs(wilson_exact(tensor, TorusSpec(8, 60), LoopSpec(5, 5, J=0), ctx=ctx).value - 1))
    acceptance(10, worst <= 1e-12, f"max |W_J=0 - 1| = {worst:.1e} <= 1e-12 over all four scenarios")
    assert worst <= 1e-12
