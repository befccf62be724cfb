import numpy as np
import pytest

from kummer_gluing import conformal as C
from kummer_gluing import eguchi_hanson as eh
from kummer_gluing.errors import DomainError, OutOfBandError


def flat_H(p):
    return np.broadcast_to(np.eye(2, dtype=complex), (p.shape[0], 2, 2)).copy()


def eh_H(p):
    return eh.kahler_matrix(p)


def radius(p):
    return np.sqrt((p**2).sum(-1))


def eh_h(p):
    return eh.r_y((p**2).sum(-1))


def sample_field(p):
    return np.sin(p[:, 0]) * np.cos(0.7 * p[:, 3]) + 0.3 * p[:, 1] * p[:, 2]


def shell(rng, n, lo, hi):
    p = rng.normal(size=(n, 4))
    return p * (rng.uniform(lo, hi, n) / radius(p))[:, None]


def test_flat_laplacian_matches_real_laplacian(rng):
    p = rng.normal(size=(10, 4))
    f = lambda q: (q**2).sum(-1)
    # -sum d^2/dx^2 |x|^2 = -8 in four dimensions
    assert np.allclose(C.laplacian_omega(flat_H, f, p), -8.0, atol=1e-8)


def test_V_flat_with_radius(rng):
    p = shell(rng, 20, 0.5, 2.0)
    V = C.potential_V(flat_H, radius, p, step=1e-3)
    assert np.abs(V - 1).max() < 1e-7


def test_V_zero_for_constant_h(rng):
    p = shell(rng, 10, 0.5, 2.0)
    V = C.potential_V(eh_H, lambda q: np.full(q.shape[0], 2.5), p)
    assert np.abs(V).max() < 1e-8  # round-off of the difference stencil


def test_Q_kills_h(rng):
    p = shell(rng, 10, 0.6, 2.0)
    Q = C.q_apply(eh_h, eh_h, p)
    assert np.abs(Q).max() < 1e-8


def test_Q_homogeneous_in_h(rng):
    """Q f = h D(f / h) is unchanged when h is rescaled."""
    p = shell(rng, 10, 0.6, 2.0)
    a = C.q_apply(eh_h, sample_field, p)
    b = C.q_apply(lambda q: 2.0 * eh_h(q), sample_field, p)
    assert np.allclose(a, b, atol=1e-10)


def test_ddbar_of_potential_is_omega():
    """D of the flat potential |z|^2 is -8 times the identity form."""
    p = np.array([[0.3, -0.2, 0.5, 0.1]])
    M = C.ddbar(lambda q: (q**2).sum(-1), p)
    assert np.allclose(M[0], -8 * np.eye(2), atol=1e-9)


def test_laplace_beltrami_equivalence(rng):
    p = shell(rng, 12, 0.7, 2.5)
    a = C.laplacian_omega(eh_H, sample_field, p)
    b = C.laplace_beltrami(lambda q: C.real_metric(eh_H(q)), sample_field, p)
    assert np.abs(a - b).max() < 1e-6 * max(1.0, np.abs(a).max())


def test_box_forms_equals_metric(rng):
    p = shell(rng, 12, 0.7, 2.5)
    a = C.box_via_forms(eh_H, eh_h, sample_field, p)
    b = C.box_via_metric(eh_H, eh_h, sample_field, p)
    assert np.abs(a - b).max() < 1e-6 * max(1.0, np.abs(a).max())


def test_eh_far_field_V(rng):
    devs = []
    for r in (4.0, 8.0, 16.0):
        p = shell(rng, 6, r, r)
        V = C.potential_V(eh_H, eh_h, p, step=1e-3 * r)
        devs.append(np.abs(V - 1).max())
    assert devs[-1] < 1e-3
    assert devs[0] > devs[1] > devs[2]


def test_nonpositive_h_rejected():
    with pytest.raises(DomainError):
        C.potential_V(flat_H, lambda q: -radius(q), np.ones((1, 4)))
    with pytest.raises(DomainError):
        C.real_gradient(radius, np.ones((2, 3)))


def test_neck_coordinate():
    h = np.array([1 / 8, 1.0 / np.sqrt(64)])
    assert np.allclose(C.neck_coordinate(h, 64), 0.0)
    assert np.isclose(C.neck_coordinate(np.array([0.25]), 64)[0], np.log(2.0))
    with pytest.raises(OutOfBandError):
        C.neck_coordinate(np.array([10.0]), 64, T=1.0)
    with pytest.raises(DomainError):
        C.neck_coordinate(np.array([0.0]), 64)


def test_berger_sphere_round_limit():
    """Flat metric: the Berger coefficient reduces to k(k+2)/s."""
    s = np.array([0.5, 2.0])
    for k in range(4):
        for q in range(-k, k + 1, 2):
            assert np.allclose(C.berger_coefficient(k, abs(q), s, 1.0, 1.0), k * (k + 2) / s)


def flat_frame(n=201, lo=-1.0, hi=1.0, **kw):
    return C.RadialFrame(np.linspace(lo, hi, n), 1.0,
                         lambda s: (np.ones_like(s), np.zeros_like(s)), np.sqrt, **kw)


def eh_frame(n=301):
    return C.RadialFrame(np.linspace(-1.0, 2.0, n), 1.0,
                         lambda s: (eh.EGUCHI_HANSON.d1(s), eh.EGUCHI_HANSON.d2(s)),
                         eh.r_y)


def test_frame_V_flat():
    fr = flat_frame()
    assert np.abs(fr.V(clamp=False) - 1).max() < 1e-8


def test_frame_volume_telescopes():
    fr = eh_frame()
    # exact: integral of s^2 det dx = (p^2)/4 between the end nodes
    exact = (fr.p_nodes[-1] ** 2 - fr.p_nodes[0] ** 2) / 4
    assert np.isclose(fr.volume_weights().sum(), exact, rtol=1e-13)


def test_forms_operator_kernel_is_h():
    fr = eh_frame()
    op = fr.forms_operator()
    assert np.abs(op.apply(fr.h)).max() < 1e-10 * np.abs(op.apply(fr.h**2)).max()


def test_forms_operator_symmetric_in_measure(rng):
    fr = eh_frame()
    for k, q in ((0, 0), (2, 2), (3, 1)):
        op = fr.forms_operator(k, q)
        f, g = rng.normal(size=(2, fr.x.size))
        assert np.isclose(op.inner(op.apply(f), g), op.inner(f, op.apply(g)), rtol=1e-10)


def test_measure_times_h4_is_volume():
    fr = eh_frame()
    op = fr.forms_operator()
    assert np.allclose(op.weights * fr.h**4, fr.volume_weights(), rtol=1e-13)


def test_metric_and_forms_agree_on_smooth_field():
    fr = eh_frame(n=1201)
    f = np.cos(fr.x) * fr.h
    interior = slice(50, -50)
    a = fr.forms_operator(1, 1).apply(f)[interior]
    b = fr.metric_operator(1, 1).apply(f)[interior]
    assert np.abs(a - b).max() < 1e-3 * np.abs(a).max()


def test_metric_operator_is_cylinder_on_flat_region():
    """With h = r and the flat metric the metric operator is -d^2/dt^2 + k(k+2) + 1."""
    fr = flat_frame(n=401)
    k = 2
    f = np.exp(-fr.x**2 * 4)
    out = fr.metric_operator(k, 0, V=np.ones(fr.x.size)).apply(f)
    dx = fr.x[1] - fr.x[0]
    ref = -(f[2:] - 2 * f[1:-1] + f[:-2]) / dx**2 + (k * (k + 2) + 1) * f[1:-1]
    assert np.allclose(out[1:-1], ref, rtol=1e-10, atol=1e-10)


def test_V_discrete_converges():
    errs = [np.abs(flat_frame(n).V_discrete()[1:-1] - 1).max()
            for n in (101, 201, 401)]
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_V_clamp_on_cylinder_region():
    fr = C.RadialFrame(np.linspace(-1, 1, 51), 1.0,
                       lambda s: (eh.EGUCHI_HANSON.d1(s), eh.EGUCHI_HANSON.d2(s)), eh.r_y,
                       cylinder=lambda s: s > 1.0)
    V = fr.V()
    assert np.all(V[fr.s > 1.0] == 1.0)
    assert np.any(V[fr.s <= 1.0] != 1.0)


def test_frame_rejects_bad_chart():
    with pytest.raises(DomainError):
        C.RadialFrame(np.linspace(0, 1, 5), 1.0, lambda s: (-np.ones_like(s), 0 * s), np.sqrt)
    with pytest.raises(DomainError):
        C.RadialFrame(np.linspace(0, 1, 5), 1.0, lambda s: (np.ones_like(s), 0 * s), lambda s: 0 * s)
