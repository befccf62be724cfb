"""Laplacian eigenbases on the compact cross-sections of the cylinders.

Three cross-sections are supported: a circle, the round three-sphere and its
quotient by the antipodal map.  Sphere harmonics are built from complex
monomials in (z1, z2), grouped by degree ``k`` and Hopf charge ``q``, and
orthonormalized on a product quadrature grid

    z1 = sqrt(1 - u) e^{i a},   z2 = sqrt(u) e^{i b},

for which the round measure is (1/2) du da db.  Gauss-Legendre in ``u`` and
uniform grids in the two angles integrate every product of four modes exactly.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import ConfigurationError, ShapeError

KINDS = ("circle", "sphere3", "sphere3-mod-involution")


@dataclass(frozen=True)
class CrossSectionSpec:
    kind: str
    radius: float = 1.0
    max_degree: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unsupported cross-section kind {self.kind!r}")
        if not self.radius > 0:
            raise ConfigurationError("radius must be positive")
        if self.max_degree < 0:
            raise ConfigurationError("max_degree must be >= 0")


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Orthonormal Laplace eigenmodes sampled on a quadrature grid.

    ``degree`` and ``charge`` label each mode (Fourier index / harmonic degree
    and |Hopf charge|); ``samples`` has shape (n_modes, n_points) and
    ``weights`` integrates against the Riemannian measure of the section.
    """

    spec: CrossSectionSpec
    eigenvalues: np.ndarray
    degree: np.ndarray
    charge: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    samples: np.ndarray
    _evaluator: object = field(repr=False, default=None)

    @property
    def n_modes(self):
        return self.eigenvalues.size

    @property
    def volume(self):
        return float(self.weights.sum())

    def distinct(self):
        """Distinct eigenvalues with multiplicities."""
        vals, counts = np.unique(np.round(self.eigenvalues, 10), return_counts=True)
        return vals, counts

    def classes(self):
        """Groups of modes sharing (degree, |charge|), the labels the warped operators see."""
        keys = sorted(set(zip(self.degree.tolist(), self.charge.tolist())))
        return {key: np.flatnonzero((self.degree == key[0]) & (self.charge == key[1]))
                for key in keys}

    def evaluate(self, index, pts):
        """Value of mode ``index`` at arbitrary points of the section.

        Points are angles for the circle and unit 4-vectors (scaled by the
        radius) for the sphere kinds.
        """
        return self._evaluator(index, np.asarray(pts, dtype=float))

    def gram(self):
        return (self.samples * self.weights) @ self.samples.T

    def sobolev_weight(self, k):
        return (self.eigenvalues + 1.0) ** k


@lru_cache(maxsize=16)
def spectrum(spec: CrossSectionSpec, oversample: int = 2) -> EigenSystem:
    if spec.kind == "circle":
        return _circle(spec, oversample)
    return _sphere(spec, oversample)


def project(samples, system: EigenSystem):
    """Mode coefficients of field samples given on the quadrature grid.

    The last axis of ``samples`` runs over grid points.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] != system.weights.size:
        raise ShapeError(f"expected {system.weights.size} grid samples, got {samples.shape[-1]}")
    return (samples * system.weights) @ system.samples.T


def reconstruct(coefficients, system: EigenSystem):
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape[-1] != system.n_modes:
        raise ShapeError(f"expected {system.n_modes} coefficients, got {coefficients.shape[-1]}")
    return coefficients @ system.samples


def _circle(spec, oversample):
    K, a = spec.max_degree, spec.radius
    n = max(2 * oversample * K + 2, 4)
    theta = 2 * np.pi * np.arange(n) / n
    weights = np.full(n, 2 * np.pi * a / n)
    degs = [0] + [d for d in range(1, K + 1) for _ in (0, 1)]
    kinds = ["c"] + [s for d in range(1, K + 1) for s in ("c", "s")]

    def evaluate(index, th):
        d, s = degs[index], kinds[index]
        if d == 0:
            return np.full_like(th, 1.0 / np.sqrt(2 * np.pi * a))
        trig = np.cos if s == "c" else np.sin
        return trig(d * th) / np.sqrt(np.pi * a)

    samples = np.array([evaluate(i, theta) for i in range(len(degs))])
    degree = np.array(degs)
    return EigenSystem(spec, degree.astype(float) ** 2 / a**2, degree,
                       np.zeros_like(degree), theta, weights, samples, evaluate)


def _sphere_grid(K, a, oversample):
    nu = oversample * K + 2
    nang = 2 * oversample * K + 4
    xg, wg = np.polynomial.legendre.leggauss(nu)
    u, wu = 0.5 * (xg + 1.0), 0.5 * wg
    ang = 2 * np.pi * np.arange(nang) / nang
    U, A, B = np.meshgrid(u, ang, ang, indexing="ij")
    W = np.broadcast_to(wu[:, None, None], U.shape) * (2 * np.pi / nang) ** 2 * 0.5 * a**3
    z1 = np.sqrt(1 - U) * np.exp(1j * A)
    z2 = np.sqrt(U) * np.exp(1j * B)
    pts = a * np.stack([z1.real, z1.imag, z2.real, z2.imag], axis=-1).reshape(-1, 4)
    return pts, W.reshape(-1)


def _monomials(k, q):
    """Exponents (a, b, c, d) of z1^a conj(z1)^b z2^c conj(z2)^d with degree k and charge q."""
    hol, anti = (k + q) // 2, (k - q) // 2
    return [(a, b, hol - a, anti - b) for a in range(hol + 1) for b in range(anti + 1)]


def _eval_monomials(expts, pts):
    z1 = pts[:, 0] + 1j * pts[:, 1]
    z2 = pts[:, 2] + 1j * pts[:, 3]
    return np.array([z1**a * np.conj(z1) ** b * z2**c * np.conj(z2) ** d
                     for a, b, c, d in expts])


def _sphere(spec, oversample):
    K, a = spec.max_degree, spec.radius
    even_only = spec.kind == "sphere3-mod-involution"
    pts, w = _sphere_grid(K, a, oversample)
    unit = pts / a

    # candidate functions: real/imag parts of charge-q monomials of degree k
    rows, labels, recipes = [], [], []
    for k in range(K + 1):
        for q in range(k % 2, k + 1, 2):
            expts = _monomials(k, q)
            vals = _eval_monomials(expts, unit)
            parts = [("re", vals.real), ("im", vals.imag)]
            for part, block in parts:
                for j, row in enumerate(block):
                    rows.append(row)
                    labels.append((k, q))
                    recipes.append((part, expts[j]))
    C = np.array(rows)

    # Gram-Schmidt by (degree, charge) block; lower degrees of equal charge first
    basis = np.zeros((0, C.shape[1]))
    coeffs = np.zeros((0, C.shape[0]))
    degree, charge = [], []
    sw = np.sqrt(w)
    for k in range(K + 1):
        for q in range(k % 2, k + 1, 2):
            idx = [i for i, lab in enumerate(labels) if lab == (k, q)]
            block = C[idx] * sw
            T = np.zeros((len(idx), C.shape[0]))
            T[np.arange(len(idx)), idx] = 1.0
            for _ in range(2):
                proj = block @ basis.T
                block = block - proj @ basis
                T = T - proj @ coeffs
            u_, s_, vt = np.linalg.svd(block, full_matrices=False)
            keep = s_ > 1e-8 * max(s_.max(), 1.0)
            new = vt[keep]
            newT = (u_[:, keep].T @ T) / s_[keep][:, None]
            expected = (k + 1) * (1 if q == 0 else 2)
            if new.shape[0] != expected:
                raise RuntimeError(f"harmonic block (k={k}, q={q}) has rank {new.shape[0]}, expected {expected}")
            basis = np.vstack([basis, new])
            coeffs = np.vstack([coeffs, newT])
            degree += [k] * expected
            charge += [q] * expected

    degree = np.array(degree)
    charge = np.array(charge)
    keep = (degree % 2 == 0) if even_only else np.ones(degree.size, bool)
    samples = (basis / sw)[keep]
    coeffs = coeffs[keep]
    eig = degree * (degree + 2.0) / a**2

    def evaluate(index, p):
        p = np.atleast_2d(p) / a
        vals = _eval_monomials([r[1] for r in recipes], p)
        parts = np.where(np.array([r[0] == "re" for r in recipes])[:, None], vals.real, vals.imag)
        return coeffs[index] @ parts

    return EigenSystem(spec, eig[keep], degree[keep], charge[keep], pts, w, samples, evaluate)


def laplacian_galerkin_eigenvalues(max_degree, radius=1.0, even_only=False):
    """Independent check: Galerkin eigenvalues of the sphere Laplacian on monomials.

    Uses ambient monomials in (x1..x4) of degree <= max_degree, the tangential
    gradient  grad u - (x . grad u) x  and the same quadrature.  Returns sorted
    eigenvalues of the generalized problem  S c = mu M c.
    """
    pts, w = _sphere_grid(max_degree, radius, 2)
    x = pts / radius
    expts = [e for d in range(max_degree + 1)
             for e in product(range(d + 1), repeat=4) if sum(e) == d]
    if even_only:
        expts = [e for e in expts if sum(e) % 2 == 0]
    vals = np.array([np.prod(x**np.array(e), axis=1) for e in expts])
    grads = np.zeros((len(expts), x.shape[0], 4))
    for i, e in enumerate(expts):
        for j in range(4):
            if e[j] == 0:
                continue
            ej = list(e)
            ej[j] -= 1
            grads[i, :, j] = e[j] * np.prod(x**np.array(ej), axis=1)
    radial = np.einsum("inj,nj->in", grads, x)
    tang = (grads - radial[:, :, None] * x[None]) / radius
    M = (vals * w) @ vals.T
    S = 0.0
    for j in range(4):
        tj = np.ascontiguousarray(tang[:, :, j])
        S = S + (tj * w) @ tj.T
    # restrictions of monomials are linearly dependent; work on range(M)
    evals, evecs = np.linalg.eigh(M)
    keep = evals > 1e-10 * evals.max()
    B = evecs[:, keep] / np.sqrt(evals[keep])
    return np.sort(np.linalg.eigvalsh(B.T @ S @ B))
