"""The Eguchi-Hanson building block.

Radial Kähler potentials F(rho), rho = |z|^2, on C^2 / {+-1}.  The metric is
the complex Hessian

    H_jk = d^2 F / dz_j d conj(z_k) = F' delta_jk + F'' conj(z_j) z_k,

with det H = (F')^2 + rho F' F''.  The Eguchi-Hanson profile has
F' = sqrt(1 + rho^-2) and F = rho + G with G -> 0 at infinity.  Grafting
replaces G by (1 - beta_R) G, beta_R = beta(sqrt(rho / R)).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import binom

from .errors import DomainError, PositivityError, SingularChartError
from .ramps import cutoff_beta, smoothstep

RHO_STAR = 1.0e6
INNER_RADIUS = 0.1
_PANEL = 0.25
_RHO_MIN = 1.0e-8
_TAIL_TERMS = 6


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("rho must be positive")
    return rho


@dataclass(frozen=True)
class RadialProfile:
    """Evaluators for a radial potential F = rho + G.

    ``kind`` is 'eguchi-hanson' or 'euclidean'; ``scale`` multiplies F' - 1 and
    exists only to inject faults in self-checks.
    """

    kind: str = "eguchi-hanson"
    scale: float = 1.0

    def d1(self, rho):
        """F'(rho)."""
        rho = _check_rho(rho)
        if self.kind == "euclidean":
            return np.ones_like(rho)
        return 1.0 + self.scale * (np.sqrt(1.0 + rho**-2) - 1.0)

    def d2(self, rho):
        """F''(rho), differentiated analytically."""
        rho = _check_rho(rho)
        if self.kind == "euclidean":
            return np.zeros_like(rho)
        return -self.scale / (rho**3 * np.sqrt(1.0 + rho**-2))

    def g(self, rho):
        rho = _check_rho(rho)
        if self.kind == "euclidean":
            return np.zeros_like(rho)
        return self.scale * tail_g(rho)

    def g1(self, rho):
        """G' = F' - 1, in the cancellation-free form."""
        rho = _check_rho(rho)
        if self.kind == "euclidean":
            return np.zeros_like(rho)
        return self.scale * _fprime_minus_one(rho)

    def g2(self, rho):
        return self.d2(rho)

    def evaluate(self, rho):
        """(F', F'', G, G', G'') at rho."""
        return self.d1(rho), self.d2(rho), self.g(rho), self.g1(rho), self.g2(rho)

    def tail_coefficients(self, n=_TAIL_TERMS):
        """Series coefficients a_1..a_n of G = sum a_j rho^-j (odd powers only)."""
        a = np.zeros(n)
        if self.kind == "euclidean":
            return a
        for m in range(1, n):
            j = 2 * m - 1
            if j <= n:
                a[j - 1] = -self.scale * binom(0.5, m) / j
        return a


EUCLIDEAN = RadialProfile("euclidean")
EGUCHI_HANSON = RadialProfile("eguchi-hanson")


def profile_eval(rho, profile=EGUCHI_HANSON):
    return profile.evaluate(rho)


def _fprime_minus_one(rho):
    x = rho**-2
    return x / (np.sqrt(1.0 + x) + 1.0)


def _series_g(rho, terms=_TAIL_TERMS):
    out = np.zeros_like(rho)
    for m in range(1, terms + 1):
        out += -binom(0.5, m) * rho ** (1 - 2 * m) / (2 * m - 1)
    return out


@lru_cache(maxsize=1)
def _panels():
    """Breakpoints in log rho and cumulative integrals of F' - 1 down from RHO_STAR."""
    edges = np.arange(np.log(RHO_STAR), np.log(_RHO_MIN) - _PANEL, -_PANEL)[::-1]
    edges[-1] = np.log(RHO_STAR)
    xg, wg = np.polynomial.legendre.leggauss(24)
    a, b = edges[:-1], edges[1:]
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = mid[:, None] + half[:, None] * xg[None, :]
    s = np.exp(nodes)
    vals = (_fprime_minus_one(s) * s * wg[None, :]).sum(axis=1) * half
    # cum[i] = integral from edge i up to RHO_STAR
    cum = np.concatenate([np.cumsum(vals[::-1])[::-1], [0.0]])
    return edges, cum, xg, wg


def tail_g(rho):
    """G(rho) by Gauss-Legendre quadrature of F' - 1 inward from RHO_STAR.

    Beyond RHO_STAR the tail series is used; the series carries no constant term,
    which fixes the integration constant.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < _RHO_MIN):
        raise DomainError(f"rho below {_RHO_MIN} is not supported")
    out = np.empty_like(rho)
    far = rho >= RHO_STAR
    out[far] = _series_g(rho[far])
    near = ~far
    if np.any(near):
        edges, cum, xg, wg = _panels()
        lr = np.log(rho[near])
        i = np.clip(np.searchsorted(edges, lr, side="right") - 1, 0, edges.size - 2)
        top = edges[i + 1]
        mid, half = (lr + top) / 2, (top - lr) / 2
        s = np.exp(mid[:, None] + half[:, None] * xg[None, :])
        partial = (_fprime_minus_one(s) * s * wg[None, :]).sum(axis=1) * half
        g_star = _series_g(np.array([RHO_STAR]))[0]
        out[near] = g_star - cum[i + 1] - partial
    return out


def fit_tail(profile=EGUCHI_HANSON, lo=10.0, hi=100.0, n_powers=8, n_samples=400):
    """Least-squares fit of G on [lo, hi] by a_1 rho^-1 + ... + a_n rho^-n."""
    rho = np.geomspace(lo, hi, n_samples)
    u = lo / rho
    A = np.stack([u**j for j in range(1, n_powers + 1)], axis=1)
    coef, *_ = np.linalg.lstsq(A, profile.g(rho), rcond=None)
    return coef * lo ** np.arange(1, n_powers + 1)


def ma_identity_residual(rho, profile=EGUCHI_HANSON):
    """(F')^2 + rho F' F'' - 1, evaluated in extended precision."""
    rho = _check_rho(rho).astype(np.longdouble)
    if profile.kind == "euclidean":
        return np.zeros(rho.shape)
    one = np.longdouble(1)
    sc = np.longdouble(profile.scale)
    root = np.sqrt(one + rho**-2)
    d1 = one + sc * (root - one)
    d2 = -sc / (rho**3 * root)
    return np.asarray(d1 * d1 + rho * d1 * d2 - one, dtype=float)


def _as_complex_pair(z):
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return z[..., 0], z[..., 1]
    z = z.astype(float)
    return z[..., 0] + 1j * z[..., 1], z[..., 2] + 1j * z[..., 3]


def radial_hessian(z, d1, d2):
    """d1 I + d2 conj(z) z^T for arrays of points; returns (..., 2, 2)."""
    z1, z2 = _as_complex_pair(z)
    v = np.stack([z1, z2], axis=-1)
    H = d2[..., None, None] * np.conj(v)[..., :, None] * v[..., None, :]
    H = H + d1[..., None, None] * np.eye(2)
    return H


def _rho_of(z):
    z1, z2 = _as_complex_pair(z)
    rho = np.abs(z1) ** 2 + np.abs(z2) ** 2
    if np.any(rho == 0):
        raise SingularChartError("the origin is not a point of the quotient chart")
    return rho


def kahler_matrix(z, profile=EGUCHI_HANSON):
    rho = _rho_of(z)
    return radial_hessian(z, profile.d1(rho), profile.d2(rho))


def beta_r(rho, R, deriv=0):
    """beta(sqrt(rho / R)) and its first two rho-derivatives."""
    rho = np.asarray(rho, dtype=float)
    s = np.sqrt(rho / R)
    if deriv == 0:
        return cutoff_beta(s)
    ds = 1.0 / (2.0 * np.sqrt(rho * R))
    if deriv == 1:
        return cutoff_beta(s, 1) * ds
    dds = -1.0 / (4.0 * rho**1.5 * np.sqrt(R))
    return cutoff_beta(s, 2) * ds**2 + cutoff_beta(s, 1) * dds


def cut_profile_derivs(rho, R, profile=EGUCHI_HANSON):
    """Psi' and Psi'' for the grafted potential Psi = F - beta_R G."""
    d1, d2, g, g1, g2 = profile.evaluate(rho)
    b0, b1, b2 = beta_r(rho, R), beta_r(rho, R, 1), beta_r(rho, R, 2)
    p1 = d1 - (b1 * g + b0 * g1)
    p2 = d2 - (b2 * g + 2 * b1 * g1 + b0 * g2)
    return p1, p2


def correction_derivs(rho, R, profile=EGUCHI_HANSON):
    """First two rho-derivatives of beta_R G."""
    _, _, g, g1, g2 = profile.evaluate(rho)
    b0, b1, b2 = beta_r(rho, R), beta_r(rho, R, 1), beta_r(rho, R, 2)
    return b1 * g + b0 * g1, b2 * g + 2 * b1 * g1 + b0 * g2


def cutoff_form_correction(z, R, profile=EGUCHI_HANSON):
    """Complex Hessian of beta_R G, the amount removed from omega_Y."""
    rho = _rho_of(z)
    c1, c2 = correction_derivs(rho, R, profile)
    H = radial_hessian(z, c1, c2)
    outside = (rho < R / 4) | (rho > R)
    H[outside] = 0.0
    return H


def radial_det(p1, p2, rho):
    return p1 * (p1 + rho * p2)


def radial_eigs(p1, p2, rho):
    """Eigenvalues of a radial Hessian: transverse p1 and radial p1 + rho p2."""
    return p1, p1 + rho * p2


def eta_radial(rho, R, profile=EGUCHI_HANSON, check=True):
    """eta = det(omega_Y) / det(omega_{R,Y}) - 1 as a function of rho."""
    rho = _check_rho(rho)
    d1, d2 = profile.d1(rho), profile.d2(rho)
    p1, p2 = cut_profile_derivs(rho, R, profile)
    lo = np.minimum(*radial_eigs(p1, p2, rho))
    if check and np.any(lo <= 0):
        i = int(np.argmin(lo))
        raise PositivityError(f"omega_R,Y not positive at rho={rho.flat[i]:.4g} (R={R})",
                              margin=float(lo.flat[i]), where=float(rho.flat[i]))
    eta = radial_det(d1, d2, rho) / radial_det(p1, p2, rho) - 1.0
    inside = (rho >= R / 4) & (rho <= R)
    return np.where(inside, eta, 0.0)


def eta_on_annulus(z, R, profile=EGUCHI_HANSON):
    return eta_radial(_rho_of(z), R, profile)


def quadric_map(z):
    """(z1, z2) -> (u, v, w) = (z1^2, z1 z2, z2^2), landing on v^2 = u w."""
    z1, z2 = _as_complex_pair(z)
    return np.stack([z1 * z1, z1 * z2, z2 * z2], axis=-1)


def r_y(rho, deriv=0):
    """Positive radius function on Y: sqrt(rho) for rho >= 4, smooth and >= 1 inside.

    r_Y^4 = rho^2 + 1 - s(rho) with s a step from 0 at rho=2 to 1 at rho=4.
    """
    rho = np.asarray(rho, dtype=float)
    s = smoothstep((rho - 2.0) / 2.0)
    q = rho**2 + 1.0 - s
    if deriv == 0:
        return q**0.25
    dq = 2.0 * rho - smoothstep((rho - 2.0) / 2.0, 1) / 2.0
    if deriv == 1:
        return 0.25 * q**-0.75 * dq
    ddq = 2.0 - smoothstep((rho - 2.0) / 2.0, 2) / 4.0
    return 0.25 * q**-0.75 * ddq - 0.1875 * q**-1.75 * dq**2


def hermitian_sq_norm(H, v):
    """|v|^2 = v^T H conj(v) for a tangent vector v in C^2."""
    return np.real(np.einsum("...j,...jk,...k->...", v, H, np.conj(v)))


def scaled_circumference(R, profile=EGUCHI_HANSON, n=2048):
    """Length of the Hopf circle at r_Y = sqrt(R) in the metric R^-2 omega_{R,Y}."""
    theta = 2 * np.pi * np.arange(n) / n
    r = np.sqrt(R)
    z = np.stack([r * np.exp(1j * theta), np.zeros_like(theta, dtype=complex)], axis=-1)
    rho = np.full(n, R, dtype=float)
    p1, p2 = cut_profile_derivs(rho, R, profile)
    H = radial_hessian(z, p1, p2) / R**2
    v = 1j * z
    return float(np.sum(np.sqrt(hermitian_sq_norm(H, v))) * 2 * np.pi / n)


def g_radial_derivatives(r, profile=EGUCHI_HANSON):
    """|d^j/dr^j G(r^2)| for j = 0, 1, 2 (Euclidean radial derivatives)."""
    rho = r**2
    g, g1, g2 = profile.g(rho), profile.g1(rho), profile.g2(rho)
    return np.abs(g), np.abs(2 * r * g1), np.abs(2 * g1 + 4 * rho * g2)


def closed_form_g(rho):
    """sqrt(1 + rho^2) - rho - asinh(1/rho): independent antiderivative, for tests."""
    rho = np.asarray(rho, dtype=float)
    return 1.0 / (np.sqrt(1.0 + rho**2) + rho) - np.arcsinh(1.0 / rho)
