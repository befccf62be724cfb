"""The operator box = Delta + V on manifolds with cylindrical ends, its kernel,
piecewise inverses and the glued parametrix.

Every manifold here is U(2)-invariant, so a field is a coefficient array of
shape (n_modes, n_nodes) over an involution-even three-sphere eigenbasis and
box acts block-diagonally on mode classes (degree k, |Hopf charge| q).  Two
discretizations are available per chart:

* ``forms``: box f = h^3 Delta_omega(h^-1 f), in which box h = 0 exactly;
* ``metric``: Delta_Theta + V in the cylinder frame, identical to the
  cylinder operator on exact-cylinder regions.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import splu

from . import eguchi_hanson as eh
from .assembly import H_CAP_START, GluedGeometry, cell_radius, Lattice
from .conformal import RadialFrame
from .cross_section import CrossSectionSpec, EigenSystem, spectrum
from .errors import (ConfigurationError, IllConditionedKernelError, NeumannDivergenceError,
                     NonEmptyKernelError, ShapeError, UnsupportedKernelError)
from .fitting import loglog_slope
from .line import LineOperator
from .ramps import capped_distance, smoothstep, smoothstep_integral

log = logging.getLogger(__name__)

KERNEL_THRESHOLD = 1e-8
KERNEL_GAP = 10.0
NEUMANN_MAX_TERMS = 200
DISCRETIZATIONS = ("forms", "metric")


def default_system(max_degree=8) -> EigenSystem:
    return spectrum(CrossSectionSpec("sphere3-mod-involution", 1.0, max_degree))


@dataclass(eq=False)
class EndedManifold:
    """A radial chart plus a cross-section basis; ``frame.ends`` marks cylindrical ends."""

    frame: RadialFrame
    system: EigenSystem
    discretization: str = "forms"
    V: np.ndarray | None = None
    name: str = ""
    _ops: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.discretization not in DISCRETIZATIONS:
            raise ConfigurationError(f"unknown discretization {self.discretization!r}")
        if self.discretization == "metric" and self.V is None:
            self.V = self.frame.V()

    @property
    def n(self):
        return self.frame.x.size

    @cached_property
    def classes(self):
        return self.system.classes()

    def operator(self, key, V=None) -> LineOperator:
        if V is not None:
            return self._build(key, V)
        if key not in self._ops:
            self._ops[key] = self._build(key, self.V)
        return self._ops[key]

    def _build(self, key, V):
        k, q = key
        if self.discretization == "forms":
            return self.frame.forms_operator(k, q)
        if V is None:
            raise ConfigurationError("metric discretization needs the potential V")
        V = np.asarray(V, dtype=float)
        if V.shape != (self.n,):
            raise ConfigurationError(f"V must have one value per node ({self.n})")
        return self.frame.metric_operator(k, q, V)

    @property
    def radial_weights(self):
        """L^2(dmu) node weights of the radial factor (orbit volume is carried by the modes)."""
        return self.operator((0, 0)).weights

    def zeros(self):
        return np.zeros((self.system.n_modes, self.n))

    def check(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape != (self.system.n_modes, self.n):
            raise ShapeError(f"field must have shape {(self.system.n_modes, self.n)}")
        return f

    def inner(self, f, g):
        return float(np.sum(self.radial_weights * f * g))

    def norm(self, f):
        return float(np.sqrt(self.inner(f, f)))

    def radial_field(self, profile):
        """Field with radial profile ``profile`` in the constant mode."""
        f = self.zeros()
        i0 = self.classes[(0, 0)][0]
        f[i0] = profile / self.system.samples[i0, 0]
        return f


def box_apply(manifold: EndedManifold, f, V=None):
    f = manifold.check(f)
    if manifold.discretization == "metric" and V is None and manifold.V is None:
        raise ConfigurationError("V missing")
    out = np.empty_like(f)
    for key, idx in manifold.classes.items():
        op = manifold.operator(key, V)
        out[idx] = (op.form() @ f[idx].T).T / op.weights
    return out


# builders ----------------------------------------------------------------

def _uniform_x(anchor, lo, hi, dx):
    j0 = int(np.floor((lo - anchor) / dx + 1e-9))
    j1 = int(np.ceil((hi - anchor) / dx - 1e-9))
    return anchor + dx * np.arange(j0, j1 + 1)


def y_model(R_c=16.0, end_length=8.0, dx=0.02, system=None, discretization="forms",
            inner_radius=eh.INNER_RADIUS, profile=eh.EGUCHI_HANSON) -> EndedManifold:
    """Eguchi-Hanson cut at R_c (exactly flat beyond) with h = r_Y; one end.

    x = log r and t = x - log sqrt(R_c), so the exact cylinder is t >= 0.
    """
    x_cyl = 0.5 * np.log(R_c)
    x = _uniform_x(x_cyl, np.log(inner_radius), x_cyl + end_length, dx)

    def potential(s):
        p1, p2 = eh.cut_profile_derivs(s, R_c, profile)
        flat = s >= R_c
        return np.where(flat, 1.0, p1), np.where(flat, 0.0, p2)

    frame = RadialFrame(x, 1.0, potential, eh.r_y, R=1.0 / R_c, ends=(False, True),
                        cylinder=lambda s: s >= R_c)
    return EndedManifold(frame, system or default_system(), discretization, name="Y")


def x_model(end_length=8.0, dx=0.02, system=None, discretization="forms", lattice=None) -> EndedManifold:
    """Flat orbifold cell around one fixed point, h = capped r_X; one end toward the point."""
    a = cell_radius(lattice or Lattice())
    x_cap = np.log(H_CAP_START)
    x = _uniform_x(x_cap, x_cap - end_length, np.log(a), dx)

    def potential(s):
        return np.ones_like(s), np.zeros_like(s)

    def hfun(s):
        return capped_distance(np.sqrt(s), H_CAP_START)

    frame = RadialFrame(x, 1.0, potential, hfun, R=1.0 / H_CAP_START**2, ends=(True, False),
                        cylinder=lambda s: np.sqrt(s) <= H_CAP_START)
    return EndedManifold(frame, system or default_system(), discretization, name="X")


def z_model(geom: GluedGeometry, system=None, discretization="forms") -> EndedManifold:
    return EndedManifold(geom.frame, system or default_system(), discretization, name="Z")


# kernel ---------------------------------------------------------------------

@dataclass
class KernelElement:
    key: tuple
    mode: int
    profile: np.ndarray
    singular_value: float


def _class_spectrum(op: LineOperator):
    A = op.normalized_form()
    vals, vecs = np.linalg.eigh(A)
    return vals, vecs / np.sqrt(op.weights)[:, None]


def kernel_basis(manifold: EndedManifold, V=None, threshold=KERNEL_THRESHOLD, gap=KERNEL_GAP):
    """L^2(dmu)-orthonormal basis of the numerical nullspace of box.

    Singular values are those of box as a map from its graph norm to L^2,
    lambda / (1 + lambda) for each eigenvalue lambda, so the largest is about 1
    however stiff the chart is near an inner boundary.  Values below
    ``threshold`` times the largest count as kernel; the next one must exceed
    the kernel edge (or the threshold, for an empty kernel) by ``gap``.
    """
    small, rest = [], np.inf
    spectra = {}
    for key in manifold.classes:
        vals, vecs = _class_spectrum(manifold.operator(key, V))
        sv = np.abs(vals) / (1.0 + np.abs(vals))
        spectra[key] = (sv, vecs)
    top = max(sv.max() for sv, _ in spectra.values())
    for key, (sv, _) in spectra.items():
        rel = sv / top
        for j in np.flatnonzero(rel < threshold):
            small.append((rel[j], key, j))
        if np.any(rel >= threshold):
            rest = min(rest, rel[rel >= threshold].min())
    small.sort()
    edge = small[-1][0] if small else threshold
    if rest < gap * edge:
        raise IllConditionedKernelError(
            f"no clear gap: kernel edge {edge:.3g}, next relative singular value {rest:.3g}")
    out = []
    for val, key, j in small:
        vec = spectra[key][1][:, j]
        vec = vec / np.sqrt(np.sum(manifold.operator(key, V).weights * vec**2))
        k = vec[np.argmax(np.abs(vec))]
        out.append(KernelElement(key, int(manifold.classes[key][0]), vec * np.sign(k), float(val)))
    manifold._kernel_dim = len(out)
    return out


def kernel_dimension(manifold, V=None):
    return len(kernel_basis(manifold, V))


def cosine(manifold: EndedManifold, a, b, key=(0, 0)):
    w = manifold.operator(key).weights
    return float(np.sum(w * a * b) / np.sqrt(np.sum(w * a * a) * np.sum(w * b * b)))


# piece inverse --------------------------------------------------------------

def decay_rates(manifold: EndedManifold, f, window=(1.0, 4.0)):
    """Fitted exponential rates of |f_lambda| along the end, per mode class.

    Only classes whose values are well above rounding on the window are fitted.
    Returns {key: (rate, expected sqrt(1 + lambda))}.
    """
    fr = manifold.frame
    side = 1 if fr.ends[1] else 0
    x = fr.x
    d = (x - x[0]) if side == 0 else (x[-1] - x)
    sel = (d >= window[0]) & (d <= window[1])
    out = {}
    for key, idx in manifold.classes.items():
        block = np.abs(f[idx][:, sel]).max(axis=0)
        if block.size < 3 or np.any(block < 1e-250):
            continue
        slope = np.polyfit(x[sel], np.log(block), 1)[0]
        out[key] = (slope if side == 0 else -slope, float(np.sqrt(1 + key[0] * (key[0] + 2))))
    return out


def invert_on_piece(manifold: EndedManifold, rho, V=None, log_decay=True):
    """P rho with box P rho = rho; the piece must have trivial kernel."""
    rho = manifold.check(rho)
    dim = getattr(manifold, "_kernel_dim", None)
    if dim is None:
        dim = kernel_dimension(manifold, V)
    if dim:
        raise NonEmptyKernelError(f"box has a {dim}-dimensional kernel on {manifold.name or 'this piece'}")
    out = np.empty_like(rho)
    for key, idx in manifold.classes.items():
        out[idx] = manifold.operator(key, V).solve(rho[idx].T).T
    if log_decay and manifold.frame.ends != (False, False):
        for key, (rate, expect) in decay_rates(manifold, out).items():
            log.debug("decay on %s class %s: rate %.4f (sqrt(1+lambda)=%.4f)", manifold.name, key, rate, expect)
    return out


# kernel-corrected inverse on Z ----------------------------------------------

class BorderedInverse:
    """Solves box g + tau h = rho with <g, h> = 0 for one mode class.

    The bordered matrix [[S, W h], [(W h)^T, 0]] is factorized once.
    """

    def __init__(self, op: LineOperator, kernel):
        self.op = op
        self.kernel = np.asarray(kernel, dtype=float)
        W = op.weights
        wk = W * self.kernel
        S = op.form().tocsc()
        n = op.n
        border = sparse.csc_matrix(wk[:, None])
        M = sparse.bmat([[S, border], [border.T, None]], format="csc")
        self._lu = splu(M)
        self._n = n
        self._hh = float(np.sum(wk * self.kernel))

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        W = self.op.weights
        rhs = np.concatenate([W * rho, [0.0]])
        sol = self._lu.solve(rhs)
        return sol[: self._n], float(sol[-1])

    def projection(self, rho):
        """pi(rho) = <rho, h> / <h, h>."""
        return float(np.sum(self.op.weights * rho * self.kernel) / self._hh)


def modified_inverse(manifold: EndedManifold, kernel, rho):
    """(P rho, pi(rho)) with rho = box P rho + pi(rho) h and P rho orthogonal to h.

    ``kernel`` is the radial profile of h; the manifold must have exactly one
    kernel direction, in the constant mode.
    """
    rho = manifold.check(rho)
    basis = kernel_basis(manifold)
    if len(basis) != 1 or basis[0].key != (0, 0):
        raise UnsupportedKernelError(f"modified inverse needs a one-dimensional radial kernel, got {len(basis)}")
    out = np.empty_like(rho)
    pi = 0.0
    i0 = manifold.classes[(0, 0)][0]
    for key, idx in manifold.classes.items():
        op = manifold.operator(key)
        if key == (0, 0):
            inv = BorderedInverse(op, kernel)
            g, tau = inv(rho[i0])
            out[i0] = g
            # tau multiplies the field h, which in the constant mode has profile h / Y_0
            pi = tau * manifold.system.samples[i0, 0]
        else:
            out[idx] = op.solve(rho[idx].T).T
    return out, pi


# glued parametrix -----------------------------------------------------------

def gamma_1(tau):
    """Partition function: 1 for tau <= -1/2, 0 for tau >= 1/2."""
    return 1.0 - smoothstep(np.asarray(tau) + 0.5)


def beta_1(tau, T, corner=0.25):
    """1 for tau <= 1/2, 0 for tau >= T, slope -1/(T - 1/2 - corner) in between.

    The ramp is linear with smoothed corners of width ``corner``, so the
    gradient is of size 1/T immediately after the partition band.  It ends
    where the second piece stops being an exact cylinder.
    """
    if T - 0.5 < 2.0 * corner:
        raise ConfigurationError("neck too short for the cutoff ramp")
    tau = np.asarray(tau, dtype=float)
    c = (T - 0.5 - corner) / corner
    ramp = smoothstep_integral((tau - 0.5) / corner) - smoothstep_integral((tau - 0.5) / corner - c)
    return 1.0 - ramp / c


def beta_slope_bound(T, corner=0.25):
    return 1.0 / (T - 0.5 - corner)


@dataclass(eq=False)
class GluedManifold:
    """Two copies of a one-ended piece joined along a neck of half-length T.

    Glued coordinate tau runs from the first core (tau < 0) to the mirrored
    second core (tau > 0); the piece end coordinate is t_1 = tau + T.
    """

    piece: EndedManifold
    T: float

    def __post_init__(self):
        fr = self.piece.frame
        if fr.ends != (False, True) or fr.cylinder is None:
            raise ConfigurationError("gluing needs a piece with one exact cylindrical end on the right")
        self.t_piece = fr.t
        dx = fr.x[1] - fr.x[0]
        mid = np.flatnonzero(np.abs(self.t_piece - self.T) < 1e-6 * max(dx, 1.0))
        if mid.size != 1:
            raise ConfigurationError("T must be a multiple of the grid spacing")
        self.i_mid = int(mid[0])
        need = 2 * self.T - 0.5
        if self.t_piece[-1] < need + 2.0:
            raise ConfigurationError("piece end is too short for this T")
        if not np.all(fr.cylinder(fr.s[self.t_piece >= 0])):
            raise ConfigurationError("piece is not cylindrical on t >= 0")
        n = self.i_mid
        # on the cylinder t = x - x_cyl; the glued coordinate continues x through the cores
        xr = fr.x - fr.x[n]
        self.tau = np.concatenate([xr[: n + 1], -xr[:n][::-1]])
        self.gamma = [gamma_1(self.tau), 1.0 - gamma_1(self.tau)]
        self.beta = [beta_1(self.tau, self.T), beta_1(-self.tau, self.T)]
        self._cache = {}

    @property
    def n(self):
        return self.tau.size

    @property
    def classes(self):
        return self.piece.classes

    @property
    def system(self):
        return self.piece.system

    def operator(self, key) -> LineOperator:
        if key not in self._cache:
            p = self.piece.operator(key)
            n = self.i_mid
            face = np.concatenate([p.face[:n], p.face[:n][::-1]])
            q = np.concatenate([p.q[: n + 1], p.q[:n][::-1]])
            mu = np.concatenate([p.mu[: n + 1], p.mu[:n][::-1]])
            conj = None
            if p.conj is not None:
                conj = np.concatenate([p.conj[: n + 1], p.conj[:n][::-1]])
            self._cache[key] = LineOperator(self.tau, face, q, mu, (p.robin[0], p.robin[0]), conj)
        return self._cache[key]

    # restriction / extension between glued nodes and the two pieces
    def to_piece(self, f, i):
        out = np.zeros(f.shape[:-1] + (self.piece.n,))
        m = self.n
        if i == 0:
            out[..., :m] = f
        else:
            out[..., :m] = f[..., ::-1]
        return out

    def from_piece(self, g, i):
        m = self.n
        return g[..., :m] if i == 0 else g[..., :m][..., ::-1]

    def zeros(self):
        return np.zeros((self.system.n_modes, self.n))

    def box(self, f):
        out = np.empty_like(f)
        for key, idx in self.classes.items():
            op = self.operator(key)
            out[idx] = (op.form() @ f[idx].T).T / op.weights
        return out

    def norm(self, f, key=(0, 0)):
        w = self.operator(key).weights
        return float(np.sqrt(np.sum(w * f**2)))


def _piece_solve(glued, key, rho_cls, i):
    op = glued.piece.operator(key)
    return glued.from_piece(op.solve(glued.to_piece(glued.gamma[i] * rho_cls, i).T).T, i)


def parametrix_apply(glued: GluedManifold, rho):
    """P_0 rho = beta_1 P_1(gamma_1 rho) + beta_2 P_2(gamma_2 rho)."""
    out = np.zeros_like(rho)
    for key, idx in glued.classes.items():
        for i in (0, 1):
            out[idx] += glued.beta[i] * _piece_solve(glued, key, rho[idx], i)
    return out


def defect_by_formula(glued: GluedManifold, rho):
    """box P_0 rho - rho from the cutoff commutators alone.

    With u_i = P_i(gamma_i rho) the defect is sum_i [box, beta_i] u_i; for the
    tridiagonal stencil  [box, beta] u_k = -(1/W_k) sum_{j~k} c_kj (beta_j - beta_k) u_j,
    the discrete form of the gradient-times-gradient and Laplacian-of-beta terms.
    """
    out = np.zeros_like(rho)
    for key, idx in glued.classes.items():
        op = glued.operator(key)
        S = op.form().tocoo()
        off = S.row != S.col
        r, c, v = S.row[off], S.col[off], S.data[off]
        for i in (0, 1):
            u = _piece_solve(glued, key, rho[idx], i)
            b = glued.beta[i]
            contrib = np.zeros_like(u)
            np.add.at(contrib.T, r, (v * (b[c] - b[r]))[:, None] * u[:, c].T)
            out[idx] += contrib / op.weights
    return out


def _dense_piece_inverse(op: LineOperator):
    diag, off = op._bands()
    ab = np.zeros((3, op.n))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    return linalg.solve_banded((1, 1), ab, np.diag(op.weights))


def parametrix_matrices(glued: GluedManifold, key):
    """Dense (P_0, E = box P_0 - 1) for one mode class on the glued nodes."""
    Pinv = _dense_piece_inverse(glued.piece.operator(key))
    m = glued.n
    P0 = np.zeros((m, m))
    for i in (0, 1):
        block = Pinv[:m, :m] if i == 0 else Pinv[:m, :m][::-1, ::-1]
        P0 += glued.beta[i][:, None] * block * glued.gamma[i][None, :]
    op = glued.operator(key)
    E = (op.form() @ P0) / op.weights[:, None] - np.eye(m)
    return P0, E


def defect_norm(glued: GluedManifold, keys=None):
    """L^2(dmu) operator norm of box P_0 - 1, maximized over mode classes."""
    keys = keys or list(glued.classes)
    best = 0.0
    for key in keys:
        _, E = parametrix_matrices(glued, key)
        best = max(best, glued.operator(key).operator_norm_of(E))
    return best


def inverse_norm(glued: GluedManifold, keys=None):
    """L^2(dmu) operator norm of the genuine inverse P = P_0 (box P_0)^-1."""
    keys = keys or list(glued.classes)
    best = 0.0
    for key in keys:
        P0, E = parametrix_matrices(glued, key)
        P = P0 @ np.linalg.inv(np.eye(glued.n) + E)
        best = max(best, glued.operator(key).operator_norm_of(P))
    return best


@dataclass
class NeumannResult:
    solution: np.ndarray
    terms: int
    residual: float
    defect_norm: float


def glued_inverse(glued: GluedManifold, rho, tol=1e-10, defect=None, max_terms=NEUMANN_MAX_TERMS):
    """P rho = P_0 sum_n (-E)^n rho with E = box P_0 - 1.

    ``defect`` is the measured operator norm of E (computed when omitted); a
    value >= 1 means the neck is too short for the series.
    """
    d = defect_norm(glued) if defect is None else defect
    if d >= 1.0:
        raise NeumannDivergenceError(f"parametrix defect norm {d:.4g} >= 1 at T={glued.T}", d)
    scale = max(np.sqrt(sum(glued.norm(rho[idx], key) ** 2 for key, idx in glued.classes.items())), 1e-300)
    acc = np.zeros_like(rho)
    v = np.array(rho, dtype=float)
    terms = 0
    for terms in range(1, max_terms + 1):
        acc += v
        Pv = parametrix_apply(glued, v)
        v = v - glued.box(Pv)  # (-E) v
        inc = np.sqrt(sum(glued.norm(v[idx], key) ** 2 for key, idx in glued.classes.items()))
        if inc < tol / 10 * scale:
            break
    sol = parametrix_apply(glued, acc)
    res = glued.box(sol) - rho
    rel = np.sqrt(sum(glued.norm(res[idx], key) ** 2 for key, idx in glued.classes.items())) / scale
    log.info("Neumann series: %d terms, residual %.3g, defect %.4g", terms, rel, d)
    return NeumannResult(sol, terms, float(rel), float(d))


def y_glued(T, dx=0.05, system=None, R_c=16.0):
    """Y #_T Y from two Eguchi-Hanson pieces, metric discretization."""
    piece = y_model(R_c, end_length=2 * T + 5.0, dx=dx, system=system, discretization="metric")
    return GluedManifold(piece, T)


def defect_sweep(Ts=(4, 8, 16, 32), dx=0.05, system=None, keys=None):
    """Defect and inverse norms over T, with the fitted log-log slope of the defect."""
    rows = []
    for T in Ts:
        g = y_glued(T, dx, system)
        d = defect_norm(g, keys)
        p = inverse_norm(g, keys) if d < 1 else float("nan")
        rows.append({"T": float(T), "defect_norm": d, "P_norm": p})
    fit = loglog_slope([r["T"] for r in rows], [r["defect_norm"] for r in rows])
    return rows, fit
