import numpy as np
import pytest

from kummer_gluing import ends as E
from kummer_gluing.errors import (ConfigurationError, NeumannDivergenceError,
                                  NonEmptyKernelError, ShapeError, UnsupportedKernelError)


@pytest.fixture(scope="module")
def sys4():
    return E.default_system(4)


@pytest.fixture(scope="module")
def Y(sys4):
    return E.y_model(system=sys4)


@pytest.fixture(scope="module")
def X(sys4):
    return E.x_model(system=sys4)


@pytest.fixture(scope="module")
def Z(geom64, sys4):
    return E.z_model(geom64, sys4)


@pytest.fixture(scope="module")
def glued8(sys4):
    return E.y_glued(8, system=sys4)


def bump_field(M, rng, centre, width=0.5):
    x = M.frame.x
    f = M.zeros()
    f[:] = rng.normal(size=(M.system.n_modes, 1)) * np.exp(-((x - centre) / width) ** 2)
    return f


def rel(a, b, M):
    return M.norm(a - b) / M.norm(b)


def test_box_of_zero(Y):
    assert np.all(E.box_apply(Y, Y.zeros()) == 0)


def test_shape_checked(Y):
    with pytest.raises(ShapeError):
        E.box_apply(Y, np.zeros((3, 3)))


def test_unknown_discretization(Y):
    with pytest.raises(ConfigurationError):
        E.EndedManifold(Y.frame, Y.system, discretization="spectral")


def test_h_is_harmonic_on_Z(Z, geom64):
    out = E.box_apply(Z, Z.radial_field(geom64.h))
    scale = np.abs(E.box_apply(Z, Z.radial_field(geom64.h**2))).max()
    # exact in exact arithmetic; round-off is amplified at the stiff inner boundary
    assert np.abs(out).max() <= 1e-8 * scale


def test_box_on_cylinder_matches_mode_operator(Y):
    """On the exact cylinder part box acts as -d^2/dt^2 + 1 + lambda."""
    fr = Y.frame
    t = fr.t
    sel = np.flatnonzero(fr.cylinder(fr.s))[5:-5]
    key = (2, 2)
    idx = Y.classes[key]
    f = Y.zeros()
    prof = np.exp(-((t - t[sel].mean()) / 1.0) ** 2)
    f[idx] = prof
    out = E.box_apply(Y, f)[idx[0]]
    dt = t[sel[1]] - t[sel[0]]
    ref = -(prof[sel + 1] - 2 * prof[sel] + prof[sel - 1]) / dt**2 + 9 * prof[sel]
    # the forms stencil differs from the plain one by O(dt^2)
    assert np.abs(out[sel] - ref).max() <= 5e-3 * np.abs(ref).max()


def test_kernel_dimensions(Y, X, Z, geom64):
    assert E.kernel_dimension(Y) == 0
    kx, kz = E.kernel_basis(X), E.kernel_basis(Z)
    assert len(kx) == len(kz) == 1
    assert kx[0].key == kz[0].key == (0, 0)
    assert abs(E.cosine(X, kx[0].profile, X.frame.h)) >= 1 - 1e-6
    assert abs(E.cosine(Z, kz[0].profile, geom64.h)) >= 1 - 1e-6


def test_piece_inverse_forward(Y, rng):
    rho = bump_field(Y, rng, Y.frame.x[len(Y.frame.x) // 4])
    f = E.invert_on_piece(Y, rho)
    assert rel(E.box_apply(Y, f), rho, Y) <= 1e-8


def test_piece_inverse_decay(Y, rng):
    x = Y.frame.x
    rho = bump_field(Y, rng, x[0] + 1.0, width=0.3)
    f = E.invert_on_piece(Y, rho)
    rates = E.decay_rates(Y, f, window=(4.0, 7.0))
    assert (0, 0) in rates and len(rates) >= 3
    for key, (rate, expect) in rates.items():
        assert rate == pytest.approx(expect, rel=0.05), key


def test_piece_inverse_rejects_kernel(X, rng):
    with pytest.raises(NonEmptyKernelError):
        E.invert_on_piece(X, bump_field(X, rng, 0.0))


def test_modified_inverse_on_kernel(Z, geom64):
    rho = Z.radial_field(geom64.h)
    g, pi = E.modified_inverse(Z, geom64.h, rho)
    assert np.abs(g).max() <= 1e-8 * np.abs(geom64.h).max()
    assert pi == pytest.approx(1.0, rel=1e-10)


def test_modified_inverse_orthogonal_input(Z, geom64, rng):
    w = Z.operator((0, 0)).weights
    prof = np.sin(3 * np.linspace(0, 1, Z.n))
    prof -= np.sum(w * prof * geom64.h) / np.sum(w * geom64.h**2) * geom64.h
    g, pi = E.modified_inverse(Z, geom64.h, Z.radial_field(prof))
    assert abs(pi) <= 1e-10


def test_modified_inverse_identity(Z, geom64, rng):
    rho = bump_field(Z, rng, Z.frame.x.mean(), width=0.3)
    g, pi = E.modified_inverse(Z, geom64.h, rho)
    back = E.box_apply(Z, g) + pi * Z.radial_field(geom64.h)
    assert rel(back, rho, Z) <= 1e-8
    i0 = Z.classes[(0, 0)][0]
    w = Z.operator((0, 0)).weights
    assert abs(np.sum(w * g[i0] * geom64.h)) <= 1e-10 * np.sqrt(np.sum(w * g[i0] ** 2) * np.sum(w * geom64.h**2))


def test_modified_inverse_needs_kernel(Y, rng):
    with pytest.raises(UnsupportedKernelError):
        E.modified_inverse(Y, Y.frame.h, bump_field(Y, rng, 0.0))


def test_partition_and_ramp():
    tau = np.linspace(-20, 20, 4001)
    g1 = E.gamma_1(tau)
    assert np.allclose(g1 + E.gamma_1(-tau), 1.0)
    assert np.all(g1[tau <= -0.5] == 1) and np.all(g1[tau >= 0.5] == 0)
    for T in (4, 8, 16):
        b = E.beta_1(tau, T)
        assert np.allclose(b[tau <= 0.5], 1) and np.allclose(b[tau >= T], 0, atol=1e-15)
        slope = np.abs(np.gradient(b, tau)).max()
        assert slope <= E.beta_slope_bound(T) * 1.01 and slope <= 2.0 / T
    with pytest.raises(ConfigurationError):
        E.beta_1(tau, 0.8)


def test_beta_is_one_where_gamma_lives(glued8):
    g = glued8
    for i in (0, 1):
        assert np.allclose(g.beta[i][g.gamma[i] > 0], 1.0)


def test_parametrix_zero(glued8):
    assert np.all(E.parametrix_apply(glued8, glued8.zeros()) == 0)


def test_parametrix_one_sided(glued8, rng):
    """Data supported in the first core is handled by the first piece alone."""
    g = glued8
    rho = g.zeros()
    rho[:] = rng.normal(size=(g.system.n_modes, 1)) * np.exp(-((g.tau + 3.0) / 0.4) ** 2)
    rho[:, g.tau > -1.0] = 0.0
    out = E.parametrix_apply(g, rho)
    ref = np.zeros_like(rho)
    for key, idx in g.classes.items():
        ref[idx] = g.beta[0] * E._piece_solve(g, key, rho[idx], 0)
    assert np.allclose(out, ref, rtol=1e-13, atol=0)


def test_defect_formula(glued8, rng):
    g = glued8
    rho = g.zeros()
    rho[:] = rng.normal(size=(g.system.n_modes, 1)) * np.exp(-(g.tau / 1.5) ** 2)
    direct = g.box(E.parametrix_apply(g, rho)) - rho
    formula = E.defect_by_formula(g, rho)
    assert np.abs(direct - formula).max() <= 1e-10 * np.abs(rho).max()


def test_glued_inverse(glued8, rng):
    g = glued8
    rho = g.zeros()
    rho[:] = rng.normal(size=(g.system.n_modes, 1)) * np.exp(-((g.tau - 1.0) / 1.0) ** 2)
    res = E.glued_inverse(g, rho)
    assert res.residual <= 1e-10 and res.defect_norm < 1
    back = g.box(res.solution)
    assert np.abs(back - rho).max() <= 1e-8 * np.abs(rho).max()
    zero = E.glued_inverse(g, g.zeros(), defect=res.defect_norm)
    assert np.all(zero.solution == 0)


def test_neumann_divergence(glued8):
    with pytest.raises(NeumannDivergenceError) as info:
        E.glued_inverse(glued8, glued8.zeros(), defect=1.5)
    assert info.value.defect_norm == 1.5


def test_defect_decreases_and_P_bounded(sys4):
    rows, fit = E.defect_sweep((4, 8, 16), system=sys4)
    d = [r["defect_norm"] for r in rows]
    assert d[0] > d[1] > d[2] and d[2] < 1
    assert -1.2 <= fit.slope <= -0.8
    P = [r["P_norm"] for r in rows]
    assert max(P) / min(P) <= 1.2


def test_glue_rejects_misaligned_T(sys4):
    with pytest.raises(ConfigurationError):
        E.GluedManifold(E.y_model(end_length=20.0, system=sys4, dx=0.05), 4.013)
