import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gaugepeps.symmetry import GroupSpec, LinkKind
from gaugepeps.tensor import Z2Params, build_z2_tensor, build_zn_tensor, random_zn_tensor
from gaugepeps.transfer import (
    DoubledLegBasis,
    FluxKind,
    FluxSpec,
    SectorError,
    build_transfer,
    flux_svd,
    project,
    reduce_site,
    straight_flux_reduction,
    tau0,
    tau0_blocks,
    tau0_spectral,
)

SX = np.array([[0, 1], [1, 0]])
NONPERT = Z2Params(0.1, 0.1, 1, 0.3)
PERT = Z2Params(1, 0.1, 0, 0.95)

complex_z2 = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=8, max_size=8).filter(
    lambda v: max(map(abs, v)) > 1e-3
).map(lambda v: Z2Params(*(complex(v[2 * i], v[2 * i + 1]) for i in range(4))))


def test_basis_singlets_and_sectors():
    b = DoubledLegBasis(GroupSpec.cyclic(2))
    assert b.states == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert [b.sector(*s) for s in b.states] == [0, 1, 1, 0]
    assert [b.states[i] for i in b.singlets()] == [(0, 0), (1, 1)]


def test_flux_free_corner_element_is_alpha_squared():
    p = Z2Params(0.8 - 0.3j, 0.2, 0.1, 0.5)
    T = build_transfer(build_z2_tensor(p), FluxSpec.none())
    assert T.elements[0, 0, 0, 0] == pytest.approx(abs(p.alpha) ** 2)
    assert T.elements.shape == (4, 4, 4, 4)


def test_single_element_tensor():
    g = GroupSpec.cyclic(3)
    T = build_transfer(build_zn_tensor(g, {(0, 0, 0, 0): 2 - 1j}), FluxSpec.none())
    assert np.count_nonzero(T.elements) == 1
    assert T.elements[0, 0, 0, 0] == pytest.approx(5)


def test_straight_flux_without_lines_is_double_spin_flip():
    p = Z2Params(1, 0.3 + 0.1j, 0, 0.8)
    red = straight_flux_reduction(build_z2_tensor(p), FluxSpec(FluxKind.RIGHT, 1))
    # entries |beta|^2 wherever l != r and d != u
    flip = SX.reshape(-1)
    assert_allclose(red.matrix, abs(p.beta) ** 2 * np.outer(flip, flip), atol=1e-15)


def test_tau0_matrix_layout():
    a, b, c, d = 0.9, 0.2, 0.4, 0.7
    red = tau0(build_z2_tensor(Z2Params(a, b, c, d)))
    m = red.matrix
    zeroth = m[np.ix_([0, 3], [0, 3])]
    assert_allclose(zeroth, [[a**2, c**2], [c**2, d**2]])
    assert_allclose(m[np.ix_([1, 2], [1, 2])], np.full((2, 2), b**2))
    assert np.count_nonzero(m) <= 16  # against 2^8 entries of the full operator


def test_straight_flux_matrix_entries():
    p = Z2Params(0.9 + 0.2j, 0.3, 0.5 - 0.1j, 0.6j)
    a, b, c, d = p.as_tuple()
    red = straight_flux_reduction(build_z2_tensor(p), FluxSpec(FluxKind.RIGHT, 1))
    m = red.matrix
    # rows (l, r) = (+,+),(-,-) against columns (d, u) = (+,+),(-,-)
    assert_allclose(m[np.ix_([0, 3], [0, 3])], [[a * c.conjugate(), c * d.conjugate()],
                                                [c * a.conjugate(), d * c.conjugate()]])
    assert_allclose(m[np.ix_([1, 2], [1, 2])], np.full((2, 2), abs(b) ** 2))


def test_corner_entries_are_linear_in_beta():
    p = Z2Params(0.9 + 0.2j, 0.3 - 0.4j, 0.5, 0.6)
    a, b, c, d = p.as_tuple()
    t = build_z2_tensor(p)
    red = reduce_site(t, LinkKind.FLUX_U, LinkKind.FLUX_U_DAGGER, 1, 0, 0)
    allowed = {a * b.conjugate(), c * b.conjugate(), d * b.conjugate(),
               b * a.conjugate(), b * c.conjugate(), b * d.conjugate()}
    vals = red.matrix[np.abs(red.matrix) > 0]
    assert len(vals) == 8
    for v in vals:
        assert min(abs(v - w) for w in allowed) < 1e-14


def test_project_matches_direct_reduction_and_rejects_bad_sectors():
    t = build_z2_tensor(NONPERT)
    op = build_transfer(t, FluxSpec(FluxKind.RIGHT, 1))
    red = project(op, (1, 0))
    assert_allclose(red.tensor, straight_flux_reduction(t, FluxSpec(FluxKind.RIGHT, 1)).tensor)
    with pytest.raises(SectorError):
        project(op, (0, 0))


def test_reduced_reconstructs_parent_block():
    g = GroupSpec.cyclic(3)
    t = random_zn_tensor(g, np.random.default_rng(5))
    op = build_transfer(t, FluxSpec(FluxKind.UP, 2))
    red = project(op, (0, 1))
    basis = op.basis
    k_l, k_r, k_d, k_u = red.sectors
    for jl, jr, jd, ju in itertools.product(g.labels, repeat=4):
        idx = tuple(basis.position(j, g.reduce(j - k)) for j, k in
                    ((jl, k_l), (jr, k_r), (jd, k_d), (ju, k_u)))
        assert red.tensor[jl, jr, jd, ju] == op.elements[idx]


@pytest.mark.parametrize("flux", [FluxKind.NONE, FluxKind.RIGHT, FluxKind.LEFT, FluxKind.UP,
                                  FluxKind.DOWN, FluxKind.CORNER_LOWER_LEFT])
def test_sector_bookkeeping(flux):
    g = GroupSpec.cyclic(3)
    t = random_zn_tensor(g, np.random.default_rng(7))
    flux_spec = FluxSpec(flux, 1 if flux != FluxKind.NONE else 0)
    op = build_transfer(t, flux_spec)
    basis = op.basis
    k_r_out, k_u_out = op.output_sectors()
    for idx in zip(*np.nonzero(op.elements)):
        l, r, d, u = (basis.sector(*basis.states[i]) for i in idx)
        assert (r, u) == (k_r_out, k_u_out)
        assert g.reduce(l + d - r - u) == 0


def test_blocks_generic_and_diagonal():
    blocks = tau0_blocks(tau0(build_z2_tensor(Z2Params(0.9, 0.2, 0.4, 0.7))))
    assert [b.k for b in blocks] == [0, 1]
    assert blocks[0].matrix.shape == (2, 2)
    assert_allclose(blocks[1].matrix, np.full((2, 2), 0.04))
    diag = tau0_blocks(tau0(build_z2_tensor(Z2Params(0.9, 0, 0, 0.7))))[0].matrix
    assert_allclose(diag, np.diag([0.81, 0.49]))


@pytest.mark.parametrize("j_max", [1, 2])
def test_truncated_u1_block_dimensions(j_max):
    g = GroupSpec.truncated_u1(j_max)
    blocks = tau0_blocks(tau0(random_zn_tensor(g, np.random.default_rng(1))))
    for b in blocks:
        assert len(b.rows) == 2 * j_max + 1 - abs(b.k)
    # paired blocks are transposes for the rotation-free random tensor only when symmetric;
    # the pairing itself must exist
    ks = {b.k for b in blocks}
    assert ks == {-k for k in ks}


def test_spectral_perturbative():
    sp = tau0_spectral(tau0(build_z2_tensor(PERT)))
    assert_allclose(sp.values, [1, 0.9025, 0.02, 0], atol=1e-15)
    assert_allclose(sp.left[0], [[1, 0], [0, 0]], atol=1e-15)
    assert_allclose(sp.left[1], [[0, 0], [0, 1]], atol=1e-15)
    assert_allclose(sp.left[2], SX / np.sqrt(2), atol=1e-15)


def test_spectral_nonperturbative():
    sp = tau0_spectral(tau0(build_z2_tensor(NONPERT)))
    assert_allclose(sp.values, [1.0508, -0.9508, 0.02, 0], atol=5e-5)
    assert_allclose(np.diag(sp.left[0]), [0.6928, 0.7211], atol=5e-5)


def test_spectral_degenerate_is_deterministic():
    sp = tau0_spectral(tau0(build_z2_tensor(Z2Params(1, 0, 0, 1))))
    assert_allclose(sp.values, [1, 1, 0, 0], atol=1e-15)
    again = tau0_spectral(tau0(build_z2_tensor(Z2Params(1, 0, 0, 1))))
    for a, b in zip(sp.left, again.left):
        assert_allclose(a, b)


def test_spectral_rejects_nonsymmetric():
    g = GroupSpec.cyclic(3)
    t = random_zn_tensor(g, np.random.default_rng(2))
    with pytest.raises(ValueError):
        tau0_spectral(tau0(t))


def test_flux_svd_values():
    sv = flux_svd(straight_flux_reduction(build_z2_tensor(NONPERT), FluxSpec(FluxKind.RIGHT, 1)))
    assert_allclose(sv.values, [0.4472, 0.02, 0, 0], atol=5e-5)
    # the leading transverse factor is diagonal; its overall sign is a convention
    L1 = sv.right[0] * np.sign(sv.right[0][1, 1].real)
    assert_allclose(L1, [[0.3162, 0], [0, 0.9487]], atol=5e-5)


def test_flux_svd_without_lines():
    p = Z2Params(1, 0.1, 0, 0.95)
    for kind in (FluxKind.RIGHT, FluxKind.UP):
        sv = flux_svd(straight_flux_reduction(build_z2_tensor(p), FluxSpec(kind, 1)))
        big = sv.values > 1e-12
        assert big.sum() == 1
        # normalised factors: eta * K (x) L = |beta|^2 sigma_x (x) sigma_x
        assert_allclose(sv.values[0] * np.kron(sv.left[0], sv.right[0]),
                        0.01 * np.kron(SX, SX), atol=1e-15)


def test_flux_svd_of_zero_is_empty():
    red = straight_flux_reduction(build_z2_tensor(Z2Params(1, 0, 0, 1)), FluxSpec(FluxKind.RIGHT, 1))
    assert len(flux_svd(red).values) == 0


def test_csv_dump_has_labels(tmp_path):
    red = tau0(build_z2_tensor(PERT))
    red.dump_csv(tmp_path / "tau0.csv")
    lines = (tmp_path / "tau0.csv").read_text().splitlines()
    assert lines[0].startswith("None,d=0[k0];u=0[k0]")
    assert len(lines) == 5


@settings(max_examples=40, deadline=None)
@given(complex_z2)
def test_spectral_identities(p):
    t = build_z2_tensor(p)
    red = tau0(t)
    sp = tau0_spectral(red)
    gram = np.array([[np.trace(a @ b.T) for b in sp.left] for a in sp.left])
    assert_allclose(gram, np.eye(len(sp.left)), atol=1e-12)
    assert_allclose(sp.reconstruct(), red.matrix, atol=1e-12)
    tens = red.tensor
    assert np.array_equal(tens, tens.transpose(2, 3, 0, 1))  # reflection (l,r) <-> (d,u)
    for kind in (FluxKind.RIGHT, FluxKind.UP):
        flux = straight_flux_reduction(t, FluxSpec(kind, 1))
        sv = flux_svd(flux)
        target = flux.matrix if kind == FluxKind.RIGHT else flux.matrix.T
        if len(sv.values):
            assert_allclose(sv.reconstruct(), target, atol=1e-12)
            assert np.all(np.diff(sv.values) <= 1e-15)
