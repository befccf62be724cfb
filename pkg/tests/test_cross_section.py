import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kummer_gluing.cross_section import (CrossSectionSpec, laplacian_galerkin_eigenvalues, project,
                                         reconstruct, spectrum)
from kummer_gluing.errors import ConfigurationError, ShapeError


def test_circle_eigenvalues():
    sys_ = spectrum(CrossSectionSpec("circle", 1.0, 2))
    assert np.allclose(np.sort(sys_.eigenvalues), [0, 1, 1, 4, 4])


@pytest.mark.parametrize("radius", [0.5, 2.0])
def test_circle_radius_scaling(radius):
    sys_ = spectrum(CrossSectionSpec("circle", radius, 3))
    assert np.allclose(np.sort(sys_.eigenvalues), np.array([0, 1, 1, 4, 4, 9, 9]) / radius**2)
    assert np.isclose(sys_.volume, 2 * np.pi * radius)


def test_sphere3_eigenvalues_and_multiplicities(s3_small):
    vals, counts = s3_small.distinct()
    k = np.arange(5)
    assert np.allclose(vals, k * (k + 2))
    assert list(counts) == list((k + 1) ** 2)


def test_sphere3_matches_galerkin_oracle(s3_small):
    oracle = laplacian_galerkin_eigenvalues(4)
    assert oracle.size == s3_small.n_modes
    assert np.allclose(np.sort(s3_small.eigenvalues), oracle, atol=1e-8)


def test_quotient_keeps_even_modes_only():
    sys_ = spectrum(CrossSectionSpec("sphere3-mod-involution", 1.0, 4))
    vals, counts = sys_.distinct()
    assert np.allclose(vals, [0, 8, 24])
    assert list(counts) == [1, 9, 25]
    oracle = laplacian_galerkin_eigenvalues(4, even_only=True)
    assert np.allclose(np.sort(sys_.eigenvalues), oracle, atol=1e-8)


def test_quotient_modes_are_antipodally_even():
    sys_ = spectrum(CrossSectionSpec("sphere3-mod-involution", 1.0, 4))
    pts = sys_.points
    for i in range(sys_.n_modes):
        assert np.allclose(sys_.evaluate(i, -pts), sys_.evaluate(i, pts), atol=1e-12)


def test_first_eigenvalue_is_simple_zero(s3_small):
    order = np.sort(s3_small.eigenvalues)
    assert order[0] == 0 and order[1] > 0.5
    assert np.all(np.diff(order) >= -1e-12)


@pytest.mark.parametrize("kind", ["circle", "sphere3", "sphere3-mod-involution"])
def test_gram_is_identity(kind):
    sys_ = spectrum(CrossSectionSpec(kind, 1.3, 4))
    assert np.abs(sys_.gram() - np.eye(sys_.n_modes)).max() < 1e-10


def test_evaluator_matches_samples(s3_small):
    for i in (0, 3, 17, s3_small.n_modes - 1):
        assert np.allclose(s3_small.evaluate(i, s3_small.points), s3_small.samples[i], atol=1e-12)


def test_constant_field_projects_to_zero_mode(s3_small):
    c = 2.5
    coef = project(np.full(s3_small.weights.size, c), s3_small)
    i0 = int(np.argmin(s3_small.eigenvalues))
    expect = np.zeros(s3_small.n_modes)
    expect[i0] = c * np.sqrt(s3_small.volume)
    assert np.allclose(coef, expect, atol=1e-12)


def test_single_mode_projects_to_unit_vector(s3_small):
    coef = project(s3_small.samples[7], s3_small)
    assert np.allclose(coef, np.eye(s3_small.n_modes)[7], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_band_limited(seed):
    sys_ = spectrum(CrossSectionSpec("sphere3", 1.0, 4))
    c = np.random.default_rng(seed).normal(size=sys_.n_modes)
    field = reconstruct(c, sys_)
    back = reconstruct(project(field, sys_), sys_)
    assert np.linalg.norm(back - field) <= 1e-10 * np.linalg.norm(field)
    # Parseval
    assert np.isclose(np.sum(sys_.weights * field**2), np.sum(c**2), rtol=1e-10)


def test_spectral_sobolev_norm_identity(s3_small, rng):
    """<g, (Delta+1)^k g> as a quadrature against sum (lambda+1)^k g_lambda^2."""
    c = rng.normal(size=s3_small.n_modes)
    g = reconstruct(c, s3_small)
    k = 2
    lap_g = reconstruct(c * s3_small.sobolev_weight(k), s3_small)
    assert np.isclose(np.sum(s3_small.weights * g * lap_g), np.sum(s3_small.sobolev_weight(k) * c**2), rtol=1e-10)


def test_bad_kind_rejected():
    with pytest.raises(ConfigurationError):
        CrossSectionSpec("torus")


@pytest.mark.parametrize("kw", [{"radius": 0.0}, {"radius": -1.0}, {"max_degree": -1}])
def test_bad_spec_rejected(kw):
    with pytest.raises(ConfigurationError):
        CrossSectionSpec("sphere3", **kw)


def test_shape_errors(s3_small):
    with pytest.raises(ShapeError):
        project(np.zeros(3), s3_small)
    with pytest.raises(ShapeError):
        reconstruct(np.zeros(s3_small.n_modes + 1), s3_small)
