"""The Calabi-Yau equation on Z in the cylindrical frame.

With omega_phi = omega_0 + D phi and the normalization D = -8 Hess_c,

    omega_phi^2 / omega_0^2 = 1 + 2 Delta phi + 64 det(Hess_c phi) / det(omega_0).

Writing phi = h^-1 f (so that h^3 Delta(h^-1 f) is the operator box) and
f = R^-3 g, the equation omega_phi^2 = lambda (1 + eta) omega_0^2 becomes

    box g + (1/2)(Rh)^-3 Q(g)^2 = (1/2)(Rh)^3 (lambda (1 + eta) - 1) + tau h,
    Q(g)^2 = 64 h^6 det(Hess_c(g/h)) / det(omega_0).

All fields are radial (the data is U(2)-invariant), the determinant is the
discrete flux difference  D(Psi)_i = ((Psi_x)^2_{i+1/2} - (Psi_x)^2_{i-1/2}) / (16 s_i^2 |cell_i|),
and the volume identity  sum |cell| s^2 D(Psi) = const  holds to rounding.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import LinearOperator, gmres

from .assembly import GluedGeometry, assemble
from .ends import BorderedInverse
from .errors import ConfigurationError, DivergenceError, NonConvergenceError, PositivityError

log = logging.getLogger(__name__)

SOLUTION_K = 5
RHS_K = 3


@dataclass(frozen=True)
class SolveConfig:
    R: float = 64.0
    tol: float = 1e-12
    ma_tolerance: float = 1e-6
    max_iter: int = 60
    k_solution: int = SOLUTION_K
    k_rhs: int = RHS_K
    n_radial: int = 200
    method: str = "picard"
    tau_tol: float = 1e-8

    def __post_init__(self):
        if not (self.tol > 0 and self.ma_tolerance > 0):
            raise ConfigurationError("tolerances must be positive")
        if (self.k_solution, self.k_rhs) != (SOLUTION_K, RHS_K):
            raise ConfigurationError("Sobolev indices are fixed at (5, 3)")
        if self.method not in ("picard", "newton"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")


@dataclass
class IterationRecord:
    iter: int
    residual: float
    increment: float
    tau: float
    positivity_margin: float
    ratio: float = float("nan")


@dataclass
class SolveReport:
    R: float
    lam: float
    rhs_norm: float
    history: list = field(default_factory=list)
    converged: bool = False
    tau: float = float("nan")
    positivity_margin: float = float("nan")
    ma_residual: float = float("nan")
    ma_residual_continuum: float = float("nan")
    baseline_residual: float = float("nan")
    volume_defect: float = float("nan")
    kernel_overlap: float = float("nan")
    sup_g: float = float("nan")
    g_sobolev5: float = float("nan")
    frame_gap: float = float("nan")
    frame_gap_continuum: float = float("nan")
    discretization_tolerance: float = float("nan")
    message: str = ""

    def to_json(self):
        d = asdict(self)
        d["schema"] = "kummer-gluing/solve-report/1"
        return json.dumps(d, indent=1, sort_keys=True, default=float)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# Picard iteration for box g + (Rh)^-3 Q(g)^2 / 2 = (Rh)^3 (lambda(1+eta)-1) / 2 + tau h; "
                     "residual and increment are relative L2(dmu) norms (dimensionless), "
                     "tau is the kernel coefficient, positivity_margin the smallest eigenvalue ratio omega_phi/omega_0\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "residual", "increment", "tau", "positivity_margin"])
            for r in self.history:
                w.writerow([r.iter, f"{r.residual:.12e}", f"{r.increment:.12e}",
                            f"{r.tau:.12e}", f"{r.positivity_margin:.12e}"])


class ZProblem:
    """Discrete operators of the radial problem on an assembled geometry."""

    def __init__(self, geom: GluedGeometry):
        self.geom = geom
        fr = geom.frame
        self.frame = fr
        self.op = fr.forms_operator(0, 0)
        self.h = fr.h
        self.Rh = geom.R * fr.h
        self.W = self.op.weights
        self.inverse = BorderedInverse(self.op, self.h)
        self.dx = np.diff(fr.x)
        self.den = 16.0 * fr.s**2 * fr.widths
        self.phi0_x = 2.0 * fr.p_faces
        self.phi0_b = 2.0 * fr.p_nodes[[0, -1]]
        self.vol_w = geom.omega_weights()

    # pieces of the equation -------------------------------------------------
    def box(self, g):
        return self.op.apply(g)

    def det_of(self, psi_x):
        """Discrete det from face values of Psi_x (boundary faces take the exact values)."""
        y = np.concatenate([[self.phi0_b[0] ** 2], psi_x**2, [self.phi0_b[1] ** 2]])
        return np.diff(y) / self.den

    def det_quadratic(self, phi):
        """D(phi) with reflecting ends (phi_x = 0 on the boundary)."""
        px = np.diff(phi) / self.dx
        y = np.concatenate([[0.0], px**2, [0.0]])
        return np.diff(y) / self.den

    def phi_of(self, g):
        return g / (self.geom.R**3 * self.h)

    def quadratic(self, g):
        """(1/2)(Rh)^-3 Q(g)^2 = 32 R^-3 h^3 D(g/h) / D_0."""
        return 32.0 * self.h**3 * self.det_quadratic(g / self.h) / (self.geom.R**3 * self.frame.D0)

    def quadratic_jacobian(self, g):
        """Tridiagonal derivative of :meth:`quadratic` at g, as a sparse matrix."""
        from scipy import sparse
        u = g / self.h
        ux = np.diff(u) / self.dx
        c = 32.0 * self.h**3 / (self.geom.R**3 * self.frame.D0 * self.den)
        n = u.size
        # d/du of (ux_{i+1/2}^2 - ux_{i-1/2}^2)
        rows, cols, vals = [], [], []
        for f in range(n - 1):
            a = 2.0 * ux[f] / self.dx[f]
            for node, sign in ((f + 1, -1.0), (f, 1.0)):  # face f is +face of node f, -face of node f+1
                for col, dsign in ((f + 1, 1.0), (f, -1.0)):
                    rows.append(node)
                    cols.append(col)
                    vals.append(sign * a * dsign)
        J = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return sparse.diags(c) @ J @ sparse.diags(1.0 / self.h)

    def kahler_residual(self, g, lam):
        """omega_phi^2 / omega_0^2 - lambda (1 + eta) from Psi = Phi_0 - 8 phi directly."""
        phi = self.phi_of(g)
        psi_x = self.phi0_x - 8.0 * np.diff(phi) / self.dx
        return self.det_of(psi_x) / self.frame.D0 - lam * (1.0 + self.geom.eta)

    def norm(self, f):
        return float(np.sqrt(np.sum(self.W * f * f)))

    def vol_norm(self, f):
        return float(np.sqrt(np.sum(self.vol_w * f * f)))


def lambda_from_eta(geom: GluedGeometry, eta=None) -> float:
    """lambda = int h^4 dmu / int (1 + eta) h^4 dmu, h^4 dmu being the omega_0-volume."""
    w = geom.omega_weights()
    eta = geom.eta if eta is None else np.broadcast_to(eta, w.shape)
    return float(w.sum() / np.sum(w * (1.0 + eta)))


def rhs_assemble(geom: GluedGeometry, lam: float):
    """(1/2)(Rh)^3 (lambda (1 + eta) - 1)."""
    return 0.5 * (geom.R * geom.h) ** 3 * (lam * (1.0 + geom.eta) - 1.0)


def quadratic_term(geom: GluedGeometry, g, problem: ZProblem | None = None):
    return (problem or ZProblem(geom)).quadratic(g)


def sobolev_norm_radial(problem: ZProblem, f, k):
    """Discrete L^2_k: sum_j C(k, j) ||d_x^j f||^2 in L^2(dmu) (x = t on the neck)."""
    x = problem.frame.x
    total, d = 0.0, np.asarray(f, dtype=float)
    for j in range(k + 1):
        if j:
            d = np.gradient(d, x, edge_order=2)
        total += comb(k, j) * problem.norm(d) ** 2
    return float(np.sqrt(total))


def lipschitz_probe(geom: GluedGeometry, n_pairs=50, seed=0, scale=1.0):
    """Measured ||quad(g1) - quad(g2)||_(3) / (||g1 - g2||_(5) (||g1||_(5) + ||g2||_(5)))."""
    pr = ZProblem(geom)
    rng = np.random.default_rng(seed)
    x = pr.frame.x
    ratios = []
    for _ in range(n_pairs):
        gs = []
        for _ in range(2):
            c = rng.uniform(x[0] + 1, x[-1] - 1)
            gs.append(scale * rng.normal() * np.exp(-((x - c) / rng.uniform(0.5, 1.5)) ** 2))
        dq = pr.quadratic(gs[0]) - pr.quadratic(gs[1])
        den = sobolev_norm_radial(pr, gs[0] - gs[1], 5) * (
            sobolev_norm_radial(pr, gs[0], 5) + sobolev_norm_radial(pr, gs[1], 5))
        ratios.append(sobolev_norm_radial(pr, dq, 3) / den)
    return np.array(ratios)


def positivity_margin(problem: ZProblem, g):
    """Smallest eigenvalue ratio of omega_phi against omega_0 over all nodes.

    Transverse eigenvalue Psi' (from face averages of Psi_x / 2s) and radial
    eigenvalue det / Psi'.  Returns (margin, x at the worst node).
    """
    fr = problem.frame
    phi = problem.phi_of(g)
    psi_x = problem.phi0_x - 8.0 * np.diff(phi) / problem.dx
    full = np.concatenate([[problem.phi0_b[0]], psi_x, [problem.phi0_b[1]]])
    base = np.concatenate([[problem.phi0_b[0]], problem.phi0_x, [problem.phi0_b[1]]])
    t_new = 0.5 * (full[1:] + full[:-1])
    t_old = 0.5 * (base[1:] + base[:-1])
    trans = t_new / t_old
    radial = (problem.det_of(psi_x) / t_new) / (fr.D0 / t_old)
    ratios = np.minimum(trans, radial)
    i = int(np.argmin(ratios))
    return float(ratios[i]), float(fr.x[i])


def continuum_kahler_residual(problem: ZProblem, g, lam, n_sub=4):
    """Kähler-frame residual from a spline of phi and the analytic potential.

    Evaluated at ``n_sub`` points per cell, including off-grid points; returns
    the relative omega_0-volume L^2 norm of det(omega_phi)/det(omega_0) - lambda(1 + eta).
    """
    geom, fr = problem.geom, problem.frame
    phi = problem.phi_of(g)
    spl = CubicSpline(fr.x, phi, bc_type=((1, 0.0), (1, 0.0)))
    x = np.concatenate([np.linspace(a, b, n_sub, endpoint=False) for a, b in zip(fr.x[:-1], fr.x[1:])] + [fr.x[-1:]])
    s = fr.s_of(x)
    d1, d2 = fr.potential(s)
    px, pxx = spl(x, 1), spl(x, 2)
    ps = px / (2 * s)
    pss = pxx / (4 * s**2) - px / (2 * s**2)
    q1, q2 = d1 - 8 * ps, d2 - 8 * pss
    ratio = (q1 * (q1 + s * q2)) / (d1 * (d1 + s * d2))
    from .eguchi_hanson import eta_radial
    eta = eta_radial(geom.R**2 * s, geom.R, geom.profile, check=False)
    r = ratio - lam * (1 + eta)
    w = s**2 * d1 * (d1 + s * d2) * np.gradient(x)
    return float(np.sqrt(np.sum(w * r**2) / np.sum(w * (lam * (1 + eta)) ** 2)))


def _newton_step(pr: ZProblem, g, rhs):
    """One Newton correction for (g, tau), GMRES preconditioned by the frozen inverse."""
    from scipy import sparse
    J = pr.quadratic_jacobian(g)
    n = g.size
    r = rhs - pr.box(g) - pr.quadratic(g)

    def matvec(v):
        return pr.box(v) + J @ v

    A = LinearOperator((n, n), matvec=matvec)
    M = LinearOperator((n, n), matvec=lambda v: pr.inverse(v)[0] + pr.inverse.projection(v) * pr.h)
    dg, info = gmres(A, r - pr.inverse.projection(r) * pr.h, M=M, rtol=1e-13, atol=0.0, maxiter=200)
    dg = dg - np.sum(pr.W * dg * pr.h) / np.sum(pr.W * pr.h**2) * pr.h
    return g + dg


def picard_solve(geom: GluedGeometry, config: SolveConfig | None = None):
    """Iterate g <- P(rhs - quad(g)) with tau = pi(rhs - quad(g)).

    Stops when the increment is below ``config.tol`` (relative to ||rhs||) and
    |tau| <= tau_tol ||rhs||.  Three consecutive increment ratios >= 1 raise
    DivergenceError.
    """
    config = config or SolveConfig(R=geom.R)
    pr = ZProblem(geom)
    lam = lambda_from_eta(geom)
    rhs = rhs_assemble(geom, lam)
    rn = pr.norm(rhs)
    report = SolveReport(R=geom.R, lam=lam, rhs_norm=rn)
    g = np.zeros_like(rhs)
    report.baseline_residual = pr.vol_norm(pr.kahler_residual(g, lam)) / pr.vol_norm(lam * (1 + geom.eta))
    if rn == 0.0:
        report.converged, report.tau = True, 0.0
        report.history.append(IterationRecord(1, 0.0, 0.0, 0.0, 1.0))
        return _finish(pr, g, lam, rhs, report, config)
    prev_inc, bad = None, 0
    for it in range(1, config.max_iter + 1):
        src = rhs - pr.quadratic(g)
        if config.method == "newton" and it > 1:
            g_new = _newton_step(pr, g, rhs)
            tau = pr.inverse.projection(rhs - pr.quadratic(g_new))
        else:
            g_new, tau = pr.inverse(src)
        if not np.all(np.isfinite(g_new)):
            report.message = "non-finite iterate"
            raise DivergenceError(f"iteration produced non-finite values at R={geom.R}", geom.R, np.inf, report)
        inc = pr.norm(g_new - g) / rn
        g = g_new
        res = pr.box(g) + pr.quadratic(g) - rhs - tau * pr.h
        margin, _ = positivity_margin(pr, g)
        ratio = inc / prev_inc if prev_inc else float("nan")
        report.history.append(IterationRecord(it, pr.norm(res) / rn, inc, tau, margin, ratio))
        log.info("iter %d: increment %.3e ratio %.3g tau %.3e", it, inc, ratio, tau)
        if prev_inc is not None and inc >= prev_inc:
            bad += 1
            if bad >= 3:
                report.message = f"increment ratio {ratio:.3g} >= 1 for 3 steps"
                raise DivergenceError(f"Picard iteration diverges at R={geom.R} (increment ratio {ratio:.3g})",
                                      geom.R, ratio, report)
        else:
            bad = 0
        prev_inc = inc
        if inc < config.tol and abs(tau) <= config.tau_tol * rn:
            report.converged = True
            break
    if not report.converged:
        report.message = "maximum iterations reached"
        raise NonConvergenceError(f"no convergence in {config.max_iter} iterations at R={geom.R}", report)
    report.tau = report.history[-1].tau
    return _finish(pr, g, lam, rhs, report, config)


def _finish(pr, g, lam, rhs, report, config):
    corrected = reconstruct_metric(pr.geom, g, lam, problem=pr)
    report.positivity_margin = corrected["positivity_margin"]
    report.ma_residual = corrected["ma_residual"]
    report.ma_residual_continuum = corrected["ma_residual_continuum"]
    report.volume_defect = corrected["volume_defect"]
    report.kernel_overlap = float(np.sum(pr.W * g * pr.h) / (pr.norm(g) * pr.norm(pr.h) + 1e-300))
    report.sup_g = float(np.abs(g).max())
    report.g_sobolev5 = sobolev_norm_radial(pr, g, SOLUTION_K)
    # the two frames, mapped onto each other by phi = g / (R^3 h):
    # Kähler residual = 2 (Rh)^-3 (box g + quad(g) - rhs)
    scale = pr.vol_norm(lam * (1 + pr.geom.eta))
    cyl_as_kahler = 2.0 * (pr.box(g) + pr.quadratic(g) - rhs) / pr.Rh**3
    report.frame_gap = pr.vol_norm(cyl_as_kahler - pr.kahler_residual(g, lam)) / scale
    report.frame_gap_continuum = abs(pr.vol_norm(cyl_as_kahler) / scale - report.ma_residual_continuum)
    # the grid's own consistency error: discrete against analytic det(omega_0)
    fr = pr.frame
    report.discretization_tolerance = pr.vol_norm(fr.D0 / fr.det - 1.0) / np.sqrt(pr.geom.volume())
    if report.converged and report.ma_residual > config.ma_tolerance:
        report.message = f"Monge-Ampère residual {report.ma_residual:.3g} above tolerance"
    return g, report


def reconstruct_metric(geom: GluedGeometry, g, lam=None, problem: ZProblem | None = None, strict=True):
    """omega_phi = omega_0 + D phi with phi = g / (R^3 h).

    Returns phi, the face derivatives of the corrected potential and the
    diagnostics.  With ``strict`` a non-positive omega_phi raises
    PositivityError naming the worst point.
    """
    pr = problem or ZProblem(geom)
    lam = lambda_from_eta(geom) if lam is None else lam
    phi = pr.phi_of(g)
    psi_x = pr.phi0_x - 8.0 * np.diff(phi) / pr.dx
    margin, where = positivity_margin(pr, g)
    if strict and not margin > 0:
        raise PositivityError(f"omega_phi not positive at x={where:.4g}", margin, where)
    det = pr.det_of(psi_x)
    vol_new = float(np.sum(pr.vol_w * det / pr.frame.D0))
    res = pr.vol_norm(det / pr.frame.D0 - lam * (1 + geom.eta)) / pr.vol_norm(lam * (1 + geom.eta))
    return {
        "phi": phi,
        "psi_x": psi_x,
        "det": det,
        "positivity_margin": margin,
        "worst_x": where,
        "ma_residual": res,
        "ma_residual_continuum": continuum_kahler_residual(pr, g, lam),
        "volume_defect": abs(vol_new - geom.volume()) / geom.volume(),
    }


def solve(R=64.0, **kwargs):
    """Assemble and solve in one call."""
    config = SolveConfig(R=R, **{k: v for k, v in kwargs.items() if k in SolveConfig.__dataclass_fields__})
    geom = assemble(R=R, n_radial=config.n_radial, **{k: v for k, v in kwargs.items() if k in ("profile", "lattice")})
    return geom, *picard_solve(geom, config)


def contraction_threshold(Rs, config_kwargs=None):
    """Smallest R in ``Rs`` (ascending) from which every solve converges."""
    ok = {}
    for R in Rs:
        try:
            solve(R, **(config_kwargs or {}))
            ok[R] = True
        except (DivergenceError, NonConvergenceError, PositivityError):
            ok[R] = False
    R0 = None
    for R in sorted(Rs, reverse=True):
        if not ok[R]:
            break
        R0 = R
    return R0, ok


def bisect_threshold(lo, hi, tol=0.05, config_kwargs=None):
    """Bisection for R0 between a failing ``lo`` and a converging ``hi``.

    Assumes a single crossover; returns the bracketing pair after refinement.
    """
    def converges(R):
        try:
            solve(R, **(config_kwargs or {}))
            return True
        except (DivergenceError, NonConvergenceError, PositivityError):
            return False

    if converges(lo) or not converges(hi):
        raise ConfigurationError(f"[{lo}, {hi}] does not bracket the contraction threshold")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if converges(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi
