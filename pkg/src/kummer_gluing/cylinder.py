"""Separation of variables for (Delta + 1) f = rho on M x R.

Each cross-section mode reduces to  -f'' + (1 + lambda) f = rho  on a uniform
axial grid, discretized by second-order central differences.  At the truncation
points the Robin condition f' = -/+ sqrt(1 + lambda) f is exact for the decaying
homogeneous solution.  Sobolev norms are the spectral ones,
||g||_(k)^2 = <g, (Delta + 1)^k g>.
"""

import logging
import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .cross_section import EigenSystem
from .errors import AliasingError, InvalidSpectrumError, ShapeError, UnsupportedIndexError
from .line import LineOperator

log = logging.getLogger(__name__)

MAX_SOBOLEV_K = 5
DEFAULT_DT = 0.05


class TruncationWarning(UserWarning):
    pass


def axial_grid(half_length, dt=DEFAULT_DT):
    n = int(round(2 * half_length / dt))
    return np.linspace(-half_length, half_length, n + 1)


@dataclass(eq=False)
class CylinderField:
    """Mode coefficients f_lambda(t) of a function on M x [-L, L]."""

    system: EigenSystem
    t: np.ndarray
    coeffs: np.ndarray
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.system.n_modes, self.t.size):
            raise ShapeError(f"coefficients must have shape {(self.system.n_modes, self.t.size)}")

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @classmethod
    def zeros(cls, system, t):
        return cls(system, t, np.zeros((system.n_modes, t.size)))

    @classmethod
    def single_mode(cls, system, t, index, profile):
        c = np.zeros((system.n_modes, t.size))
        c[index] = profile
        return cls(system, t, c)

    def like(self, coeffs):
        return CylinderField(self.system, self.t, coeffs)

    def __add__(self, other):
        return self.like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return self.like(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self.like(self.coeffs * scalar)

    __rmul__ = __mul__

    def grid_values(self):
        """Samples on (cross-section quadrature points) x (axial grid)."""
        return self.system.samples.T @ self.coeffs

    @classmethod
    def from_grid(cls, system, t, values):
        return cls(system, t, (system.samples * system.weights) @ values)

    def axial_weights(self):
        w = np.full(self.t.size, self.dt)
        w[0] = w[-1] = self.dt / 2
        return w

    def l2(self):
        return float(np.sqrt(np.sum(self.axial_weights() * self.coeffs**2)))

    def lp(self, p):
        vals = self.grid_values()
        integrand = (self.system.weights[:, None] * self.axial_weights()[None, :]) * np.abs(vals) ** p
        return float(integrand.sum() ** (1.0 / p))

    def sup(self):
        return float(np.abs(self.grid_values()).max())


def mode_operator(lam, t):
    """The discrete -d^2/dt^2 + (1 + lam) with decaying Robin ends."""
    if lam < 0:
        raise InvalidSpectrumError(f"eigenvalue {lam} is negative")
    kappa = np.sqrt(1.0 + lam)
    n = t.size
    return LineOperator(t, np.ones(n - 1), np.full(n, 1.0 + lam), np.ones(n), (kappa, kappa))


def solve_mode_ode(lam, rho, t, decay_tol=1e-6, notes=None):
    rho = np.asarray(rho, dtype=float)
    scale = np.abs(rho).max()
    if scale > 0 and max(abs(rho[0]), abs(rho[-1])) > decay_tol * scale:
        msg = f"source for mode lambda={lam:g} does not decay at the grid ends"
        warnings.warn(msg, TruncationWarning, stacklevel=2)
        if notes is not None:
            notes.append(msg)
    return mode_operator(lam, t).solve(rho)


def apply_mode(lam, f, t):
    return mode_operator(lam, t).apply(f)


def solve_cylinder(rho: CylinderField, decay_tol=1e-6) -> CylinderField:
    notes = []
    out = np.empty_like(rho.coeffs)
    sys_ = rho.system
    for (deg, _), idx in sys_.classes().items():
        lam = float(sys_.eigenvalues[idx[0]])
        op = mode_operator(lam, rho.t)
        block = rho.coeffs[idx]
        scale = np.abs(block).max()
        if scale > 0 and np.abs(block[:, [0, -1]]).max() > decay_tol * scale:
            msg = f"source for mode lambda={lam:g} does not decay at the grid ends"
            warnings.warn(msg, TruncationWarning, stacklevel=2)
            notes.append(msg)
        out[idx] = op.solve(block.T).T
    result = rho.like(out)
    result.notes = notes
    return result


def apply_cylinder(f: CylinderField) -> CylinderField:
    out = np.empty_like(f.coeffs)
    for _, idx in f.system.classes().items():
        lam = float(f.system.eigenvalues[idx[0]])
        out[idx] = (mode_operator(lam, f.t).form() @ f.coeffs[idx].T).T / f.axial_weights()
    return f.like(out)


def spectral_derivatives(values, dt, order):
    """Axial derivatives of decaying samples via zero-padded FFT."""
    n = values.shape[-1]
    m = 2 * n
    k = 2 * np.pi * np.fft.rfftfreq(m, d=dt)
    spec = np.fft.rfft(values, n=m, axis=-1)
    return np.fft.irfft(spec * (1j * k) ** order, n=m, axis=-1)[..., :n]


def sobolev_norm(f: CylinderField, k: int) -> float:
    """sqrt(<f, (Delta + 1)^k f>) computed mode by mode.

    (Delta + 1)^k = (-d_t^2 + 1 + lambda)^k is expanded binomially and each
    power of -d_t^2 is moved onto both factors.
    """
    if not 0 <= k <= MAX_SOBOLEV_K:
        raise UnsupportedIndexError(f"Sobolev index k={k} outside 0..{MAX_SOBOLEV_K}")
    w = f.axial_weights()
    one_plus = 1.0 + f.system.eigenvalues
    total = 0.0
    for j in range(k + 1):
        dj = f.coeffs if j == 0 else spectral_derivatives(f.coeffs, f.dt, j)
        energy = np.sum(w * dj**2, axis=1)
        total += comb(k, j) * float(np.sum(one_plus ** (k - j) * energy))
    return float(np.sqrt(total))


def embedding_ratio_probe(samples, target):
    """sup over samples of ||f||_target / ||f||_{L^2_k}  (L4 with k=1, C0 with k=3)."""
    ratios = []
    for f in samples:
        if target == "L4":
            ratios.append(f.lp(4) / sobolev_norm(f, 1))
        elif target == "C0":
            ratios.append(f.sup() / sobolev_norm(f, 3))
        else:
            raise ValueError(f"unknown target {target!r}")
    return float(max(ratios))


def multiply(f: CylinderField, g: CylinderField, alias_tol=0.01) -> CylinderField:
    """Pointwise product re-projected onto the mode basis.

    Raises AliasingError when the energy outside the retained modes exceeds
    ``alias_tol`` of the product's energy.  The measured multiplication ratio
    ||fg||_(3) / (||f||_(3) ||g||_(3)) is logged and stored in ``notes``.
    """
    if f.system is not g.system or f.t.shape != g.t.shape:
        raise ShapeError("factors must share the cross-section system and axial grid")
    vals = f.grid_values() * g.grid_values()
    prod = CylinderField.from_grid(f.system, f.t, vals)
    w = f.system.weights[:, None] * f.axial_weights()[None, :]
    total = float(np.sum(w * vals**2))
    kept = prod.l2() ** 2
    if total > 0 and (total - kept) > alias_tol * total:
        raise AliasingError(f"product tail energy {(total - kept) / total:.3g} exceeds {alias_tol}")
    nf, ng = sobolev_norm(f, 3), sobolev_norm(g, 3)
    if nf > 0 and ng > 0:
        ratio = sobolev_norm(prod, 3) / (nf * ng)
        log.debug("multiplication ratio %.6g", ratio)
        prod.notes.append(f"C_mult={ratio:.6g}")
    return prod


def mode_energy_identity(lam, f, rho, t):
    """Both sides of  int (f')^2 + (1+lam) f^2 = int f rho  on the discrete grid."""
    op = mode_operator(lam, t)
    lhs = float(f @ (op.form() @ f))
    rhs = op.inner(f, rho)
    return lhs, rhs


def random_decaying_field(system, t, rng, n_modes=20, width=1.2, amplitude=1.0):
    """Sum of Gaussian bumps on ``n_modes`` random modes, negligible at the grid ends."""
    coeffs = np.zeros((system.n_modes, t.size))
    chosen = rng.choice(system.n_modes, size=min(n_modes, system.n_modes), replace=False)
    L = t[-1]
    for i in chosen:
        c = rng.uniform(-L / 4, L / 4)
        s = rng.uniform(0.5, width)
        coeffs[i] = amplitude * rng.normal() * np.exp(-((t - c) / s) ** 2)
    return CylinderField(system, t, coeffs)
