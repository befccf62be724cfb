"""Conformal change to the cylindrical picture.

Two layers live here.

Pointwise evaluators work on arbitrary points of a 4-real-dimensional chart.
A Kähler metric is given by a callable returning its 2x2 Hermitian matrix
H_jk = d_j dbar_k Phi, the conformal factor by a callable h.  Derivatives are
fourth-order central differences.  Conventions:

    Hess_c(f)_jk = d_j dbar_k f,       D f = -8 Hess_c(f),
    Delta_omega f = (D f ^ omega) / omega^2 = -4 tr(H^-1 Hess_c f),
    Q f = h D(f / h),                  box f = (Q f ^ Theta) / Theta^2,

with Theta = h^-2 omega and 2x2 wedge algebra  a ^ b = (tr a tr b - tr ab) / 2.

``RadialFrame`` is the discretized version on a U(2)-invariant chart, where
every operator reduces mode by mode to a ``LineOperator`` in x = log radius.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, OutOfBandError
from .line import LineOperator, cell_widths

FD_STEP = 2.0e-3
_C1 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0  # offsets -2,-1,1,2
_OFF1 = np.array([-2, -1, 1, 2])
_C2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0  # offsets -2..2

# complex basis vectors of the real directions (x1, y1, x2, y2)
_EBASIS = np.array([[1, 0], [1j, 0], [0, 1], [0, 1j]])


def _pts(p):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.shape[-1] != 4:
        raise DomainError("points must have 4 real coordinates")
    return p


def real_gradient(fun, p, step=FD_STEP):
    p = _pts(p)
    out = np.empty(p.shape)
    for a in range(4):
        e = np.zeros(4)
        e[a] = step
        out[:, a] = sum(c * fun(p + k * e) for c, k in zip(_C1, _OFF1)) / step
    return out


def real_hessian(fun, p, step=FD_STEP):
    """Fourth-order finite-difference Hessian, shape (N, 4, 4)."""
    p = _pts(p)
    n = p.shape[0]
    H = np.empty((n, 4, 4))
    f0 = fun(p)
    for a in range(4):
        ea = np.zeros(4)
        ea[a] = step
        H[:, a, a] = (sum(c * fun(p + k * ea) for c, k in zip(_C2, range(-2, 3)) if k)
                      + _C2[2] * f0) / step**2
        for b in range(a + 1, 4):
            eb = np.zeros(4)
            eb[b] = step
            acc = 0.0
            for ci, ki in zip(_C1, _OFF1):
                for cj, kj in zip(_C1, _OFF1):
                    acc = acc + ci * cj * fun(p + ki * ea + kj * eb)
            H[:, a, b] = H[:, b, a] = acc / step**2
    return H


def complex_hessian(fun, p, step=FD_STEP):
    """d_j dbar_k f from the real Hessian, shape (N, 2, 2)."""
    Hr = real_hessian(fun, p, step)
    out = np.empty(Hr.shape[:1] + (2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            out[:, j, k] = 0.25 * (Hr[:, xj, xk] + Hr[:, yj, yk]
                                   + 1j * (Hr[:, xj, yk] - Hr[:, yj, xk]))
    return out


def ddbar(fun, p, step=FD_STEP):
    """The (1,1)-form D f as a Hermitian matrix."""
    return -8.0 * complex_hessian(fun, p, step)


def mixed(a, b):
    """tr a tr b - tr(ab); a ^ b corresponds to mixed / 2 and a ^ a to det a."""
    ta = np.trace(a, axis1=-2, axis2=-1)
    tb = np.trace(b, axis1=-2, axis2=-1)
    return np.real(ta * tb - np.einsum("...ij,...ji->...", a, b))


def wedge_ratio(a, base):
    """(a ^ base) / base^2 for Hermitian 2x2 representatives."""
    return 0.5 * mixed(a, base) / np.real(np.linalg.det(base))


def real_metric(H):
    """4x4 Riemannian metric g(v, v) = Re(v^T H conj(v)) in coordinates (x1, y1, x2, y2)."""
    G = np.real(np.einsum("aj,...jk,bk->...ab", _EBASIS, H, np.conj(_EBASIS)))
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def _positive_h(hfun, p):
    h = hfun(p)
    if np.any(~(h > 0)):
        raise DomainError("conformal factor must be positive")
    return h


def laplacian_omega(Hfun, fun, p, step=FD_STEP):
    """Positive Laplacian of the Kähler metric, -4 tr(H^-1 Hess_c f)."""
    p = _pts(p)
    Hinv = np.linalg.inv(Hfun(p))
    return -4.0 * np.real(np.einsum("nij,nji->n", Hinv, complex_hessian(fun, p, step)))


def potential_V(Hfun, hfun, p, step=FD_STEP):
    """V = h^3 Delta_omega(1/h)."""
    p = _pts(p)
    h = _positive_h(hfun, p)
    return h**3 * laplacian_omega(Hfun, lambda q: 1.0 / hfun(q), p, step)


def q_apply(hfun, fun, p, step=FD_STEP):
    """Q f = h D(f/h) as Hermitian matrices."""
    p = _pts(p)
    h = _positive_h(hfun, p)
    return h[:, None, None] * ddbar(lambda q: fun(q) / hfun(q), p, step)


def box_via_forms(Hfun, hfun, fun, p, step=FD_STEP):
    p = _pts(p)
    h = _positive_h(hfun, p)
    theta = Hfun(p) / (h**2)[:, None, None]
    return wedge_ratio(q_apply(hfun, fun, p, step), theta)


def laplace_beltrami(Gfun, fun, p, step=FD_STEP):
    """-div(grad f) for a real metric field, as nested central differences of the flux."""
    p = _pts(p)

    def flux(q, a):
        G = Gfun(q)
        Ginv = np.linalg.inv(G)
        vol = np.sqrt(np.linalg.det(G))
        return vol * np.einsum("nb,nb->n", Ginv[:, a, :], real_gradient(fun, q, step))

    div = 0.0
    for a in range(4):
        e = np.zeros(4)
        e[a] = step
        div = div + sum(c * flux(p + k * e, a) for c, k in zip(_C1, _OFF1)) / step
    return -div / np.sqrt(np.linalg.det(Gfun(p)))


def box_via_metric(Hfun, hfun, fun, p, step=FD_STEP):
    """Delta_Theta f + V f with Theta = h^-2 omega."""
    p = _pts(p)

    def G_theta(q):
        return real_metric(Hfun(q)) / (hfun(q) ** 2)[:, None, None]

    return laplace_beltrami(G_theta, fun, p, step) + potential_V(Hfun, hfun, p, step) * fun(p)


def neck_coordinate(h, R, T=None):
    """t = log(sqrt(R) h); with ``T`` given, points with |t| > T raise OutOfBandError."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise DomainError("conformal factor must be positive")
    t = np.log(np.sqrt(R) * h)
    if T is not None and np.any(np.abs(t) > T * (1 + 1e-12)):
        raise OutOfBandError(f"point outside the neck |t| <= {T:.4g}")
    return t


def berger_coefficient(k, q, s, d1, det):
    """Angular term of the Laplacian on U(2)-orbits for the mode class (k, |q|).

    For a radial potential the orbit through |z|^2 = s is a Berger sphere: the
    Hopf direction has length^2 s det/d1 and the horizontal ones s d1.
    """
    return (k * (k + 2) - q * q) / (s * d1) + q * q * d1 / (s * det)


@dataclass(eq=False)
class RadialFrame:
    """A U(2)-invariant chart discretized in x, with |z|^2 = s_scale exp(2x).

    ``potential(s)`` returns (Phi', Phi'') and ``hfun(s)`` the conformal factor.
    ``ends`` flags which boundaries are cylindrical ends (Robin conditions for
    decaying modes); the others are reflecting.  ``cylinder(s)`` marks the
    exact-cylinder region where V is clamped to 1.
    """

    x: np.ndarray
    s_scale: float
    potential: Callable
    hfun: Callable
    R: float = 1.0
    ends: tuple = (False, False)
    cylinder: Callable | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.xf = 0.5 * (self.x[1:] + self.x[:-1])
        self.s = self.s_of(self.x)
        self.sf = self.s_of(self.xf)
        self.widths = cell_widths(self.x)
        d1, d2 = self.potential(self.s)
        self.d1, self.det = d1, d1 * (d1 + self.s * d2)
        if np.any(d1 <= 0) or np.any(self.det <= 0):
            raise DomainError("chart potential is not positive")
        self.p_nodes = self.s * d1
        self.p_faces = self.sf * self.potential(self.sf)[0]
        self.h = self.hfun(self.s)
        self.h_faces = self.hfun(self.sf)
        if np.any(self.h <= 0):
            raise DomainError("conformal factor must be positive")
        # discrete volume density: m |cell| = (p_+^2 - p_-^2) / 4 telescopes exactly
        pb = np.concatenate([[self.p_nodes[0]], self.p_faces, [self.p_nodes[-1]]])
        self.m_discrete = np.diff(pb**2) / (4.0 * self.widths)
        self.m = self.s**2 * self.det

    def s_of(self, x):
        return self.s_scale * np.exp(2.0 * np.asarray(x, dtype=float))

    @property
    def t(self):
        return neck_coordinate(self.h, self.R)

    @property
    def D0(self):
        """Discrete det of omega at nodes; telescopes to the exact volume."""
        return self.m_discrete / self.s**2

    def volume_weights(self):
        """omega-volume of each cell per unit volume of the orbit (pi^2 on the quotient sphere)."""
        return self.widths * self.m_discrete

    def angular(self, k, q):
        return berger_coefficient(k, q, self.s, self.d1, self.det)

    def end_rate(self, k):
        return np.sqrt(1.0 + k * (k + 2.0))

    def V(self, clamp=True):
        """V = h^3 Delta_omega(1/h) at the nodes, from differences of the analytic fields."""
        d = FD_STEP

        def u(x):
            return 1.0 / self.hfun(self.s_of(x))

        def flux(x):
            s = self.s_of(x)
            ux = sum(c * u(x + k * d) for c, k in zip(_C1, _OFF1)) / d
            return s * self.potential(s)[0] * ux

        div = sum(c * flux(self.x + k * d) for c, k in zip(_C1, _OFF1)) / d
        V = -self.h**3 * div / self.m
        if clamp and self.cylinder is not None:
            V = np.where(self.cylinder(self.s), 1.0, V)
        return V

    def V_discrete(self):
        """h^3 Delta_d(1/h) with the forms stencil; converges to V at second order."""
        u = 1.0 / self.h
        flux = self.p_faces * np.diff(u) / np.diff(self.x)
        div = np.zeros_like(u)
        div[:-1] += flux
        div[1:] -= flux
        return -self.h**3 * div / (self.widths * self.m_discrete)

    def forms_operator(self, k=0, q=0):
        """box = h^3 Delta_omega(h^-1 .) for mode class (k, q), kernel h exact."""
        mu = self.m_discrete / self.h**4
        robin = [0.0, 0.0]
        kap = self.end_rate(k)
        if self.ends[0]:
            robin[0] = self.p_nodes[0] * (kap - 1.0)
        if self.ends[1]:
            robin[1] = self.p_nodes[-1] * (kap + 1.0)
        return LineOperator(self.x, self.p_faces, self.m_discrete * self.angular(k, q), mu,
                            tuple(robin), conj=self.h)

    def metric_operator(self, k=0, q=0, V=None):
        """Delta_Theta + V in the cylinder frame for mode class (k, q)."""
        V = self.V() if V is None else V
        h2 = self.h**2
        face = self.p_faces / self.h_faces**2
        qd = self.m * (self.angular(k, q) / h2 + V / h2**2)
        mu = self.m / h2**2
        kap = self.end_rate(k)
        robin = (face[0] * kap if self.ends[0] else 0.0,
                 face[-1] * kap if self.ends[1] else 0.0)
        return LineOperator(self.x, face, qd, mu, robin)
