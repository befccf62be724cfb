"""Grafting Eguchi-Hanson patches onto the flat orbifold T^4 / {+-1}.

Around each of the 16 fixed points we use the coordinate w (Euclidean on the
torus).  With rho = R^2 |w|^2 the glued potential is

    Phi_0(|w|^2) = R^-2 Psi(R^2 |w|^2),   Psi = F - beta_R G,

which is the R^-2 rescaling of omega_{R,Y} and is exactly flat for rho >= R.
The conformal factor is h = c(R^-1 r_Y(rho)) with c the capped distance, so
h = R^-1 r_Y on the Y side, h = |w| = r_X across the neck, and h turns into a
positive constant well away from the fixed points.

The metric data is U(2)-invariant around every fixed point and equal for all
16 of them.  Each neck therefore lives on one radial chart, a ball around the
fixed point whose radius a is chosen so that the 16 balls carry the volume of
the orbifold.  The ball surface is reflecting.  This cell model is the
discretization of Z used by the solver.
"""

import json
import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import eguchi_hanson as eh
from .conformal import RadialFrame, neck_coordinate
from .cylinder import spectral_derivatives
from .errors import ConfigurationError, PositivityError, ResolutionError, RTooSmallError
from .ramps import capped_distance

log = logging.getLogger(__name__)

N_FIXED = 16
DEFAULT_RADIAL = 200
H_CAP_START = 0.25
MIN_BAND_POINTS = 8


@dataclass(frozen=True)
class Lattice:
    """Rows of ``generators`` span the lattice in R^4 = C^2 (coordinates x1, y1, x2, y2)."""

    generators: tuple = ((1.0, 0, 0, 0), (0, 1.0, 0, 0), (0, 0, 1.0, 0), (0, 0, 0, 1.0))

    def __post_init__(self):
        A = self.matrix
        if A.shape != (4, 4) or abs(np.linalg.det(A)) < 1e-12:
            raise ConfigurationError("lattice needs four linearly independent generators")

    @property
    def matrix(self):
        return np.asarray(self.generators, dtype=float)

    @property
    def covolume(self):
        return float(abs(np.linalg.det(self.matrix)))

    def reduce(self, p):
        """Representative of p modulo the lattice in the fundamental cell [0,1)^4."""
        c = np.linalg.solve(self.matrix.T, np.asarray(p, dtype=float).T).T
        return (c - np.floor(c)) @ self.matrix

    def min_image(self, d):
        """Shortest representative of the displacement d modulo the lattice."""
        d = np.atleast_2d(np.asarray(d, dtype=float))
        c = np.linalg.solve(self.matrix.T, d.T).T
        c = c - np.round(c)
        best = c @ self.matrix
        for shift in product((-1, 0, 1), repeat=4):
            cand = (c + np.array(shift)) @ self.matrix
            better = np.linalg.norm(cand, axis=1) < np.linalg.norm(best, axis=1)
            best[better] = cand[better]
        return best


def fixed_points(lattice: Lattice) -> np.ndarray:
    """The 16 half-lattice points, fixed by z -> -z modulo the lattice."""
    eps = np.array(list(product((0.0, 0.5), repeat=4)))
    return eps @ lattice.matrix


def is_fixed(lattice: Lattice, p, atol=1e-9) -> bool:
    # 2p must be a lattice vector; round-off from the solve needs a tolerance
    c = np.linalg.solve(lattice.matrix.T, 2.0 * np.asarray(p, dtype=float))
    return bool(np.all(np.abs(c - np.round(c)) <= atol))


def cell_radius(lattice: Lattice) -> float:
    """Radius a with 16 quotient balls (volume pi^2 a^4 / 4 each) filling T^4 / {+-1}."""
    return float((lattice.covolume / (8.0 * np.pi**2)) ** 0.25)


def _psi_derivs(rho, R, profile):
    """(Psi', Psi'') of the grafted potential, exactly flat where beta_R = 1."""
    p1, p2 = eh.cut_profile_derivs(rho, R, profile)
    flat = rho >= R
    return np.where(flat, 1.0, p1), np.where(flat, 0.0, p2)


@dataclass(eq=False)
class GluedGeometry:
    lattice: Lattice
    R: float
    profile: eh.RadialProfile
    fixed: np.ndarray
    frame: RadialFrame
    eta: np.ndarray
    a: float
    notes: list = field(default_factory=list)

    # radial fields and coordinates --------------------------------------
    @property
    def x(self):
        return self.frame.x

    @property
    def h(self):
        return self.frame.h

    @property
    def t(self):
        return self.frame.t

    @property
    def T(self):
        """Neck half-length, measured as -t at the Y-side end of the neck."""
        return float(-self.t[0])

    @property
    def T_nominal(self):
        return 0.5 * np.log(self.R)

    @property
    def rho(self):
        return self.R**2 * self.frame.s

    def h_of_s(self, s):
        s = np.asarray(s, dtype=float)
        return capped_distance(eh.r_y(self.R**2 * s) / self.R, H_CAP_START)

    def potential(self, s):
        rho = self.R**2 * np.asarray(s, dtype=float)
        p1, p2 = _psi_derivs(rho, self.R, self.profile)
        return p1, self.R**2 * p2

    def omega_weights(self):
        """omega_0-volume carried by each radial node, summed over all 16 necks."""
        return N_FIXED * np.pi**2 * self.frame.volume_weights()

    def volume(self):
        return float(self.omega_weights().sum())

    def flat_volume(self):
        """Volume of the flat orbifold T^4 / {+-1}."""
        return 0.5 * self.lattice.covolume

    def band_mask(self):
        return (self.rho >= self.R / 4) & (self.rho <= self.R)

    # pointwise access in torus coordinates ------------------------------
    def locate(self, p):
        """Index of the nearest fixed point and the offset w to it, for points of T^4."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        best_d = np.full(p.shape[0], np.inf)
        best_i = np.zeros(p.shape[0], dtype=int)
        best_w = np.zeros_like(p)
        for i, q in enumerate(self.fixed):
            w = self.lattice.min_image(p - q)
            d = np.linalg.norm(w, axis=1)
            better = d < best_d
            best_d[better], best_i[better], best_w[better] = d[better], i, w[better]
        return best_i, best_w

    def eta_at(self, p):
        _, w = self.locate(p)
        rho = self.R**2 * np.sum(w**2, axis=1)
        return eh.eta_radial(rho, self.R, self.profile, check=False)

    def h_at(self, p):
        _, w = self.locate(p)
        return self.h_of_s(np.sum(w**2, axis=1))

    def metric_at(self, w):
        """omega_0 as a Hermitian matrix at offsets w from a fixed point."""
        w = np.atleast_2d(w)
        s = np.sum(w**2, axis=1)
        d1, d2 = self.potential(s)
        return eh.radial_hessian(w, d1, d2)


def neck_frame(R, profile, n_radial, a, inner_rho=eh.INNER_RADIUS**2, h_of_s=None):
    x_in = 0.5 * np.log(inner_rho / R)
    x_out = np.log(np.sqrt(R) * a)
    x = np.linspace(x_in, x_out, n_radial)

    def potential(s):
        rho = R**2 * np.asarray(s, dtype=float)
        p1, p2 = _psi_derivs(rho, R, profile)
        return p1, R**2 * p2

    def cylinder(s):
        rho = R**2 * s
        return (rho >= R) & (np.sqrt(s) <= H_CAP_START)

    return RadialFrame(x, 1.0 / R, potential, h_of_s, R=R, ends=(False, False), cylinder=cylinder)


def assemble(lattice: Lattice | None = None, R: float = 64.0, n_radial: int = DEFAULT_RADIAL,
             profile: eh.RadialProfile = eh.EGUCHI_HANSON, torus_n: int | None = None) -> GluedGeometry:
    """Glue 16 rescaled, cut-off Eguchi-Hanson patches into the flat orbifold.

    ``torus_n`` optionally requests the Cartesian torus grid check: its spacing
    must resolve the excised balls of radius R^-1/2.
    """
    lattice = lattice or Lattice()
    if R < 8:
        raise ConfigurationError("R must be at least 8")
    a = cell_radius(lattice)
    if np.sqrt(R) * a <= 1.0 or 2.0 / R >= H_CAP_START:
        raise RTooSmallError(f"R={R} too small for the neck to fit in the cell", margin=None)
    if torus_n is not None:
        spacing = lattice.matrix.max() / torus_n
        if not spacing < R**-0.5 / 4:
            raise ResolutionError(f"torus spacing {spacing:.4g} does not resolve balls of radius R^-1/2={R**-0.5:.4g}")

    def h_of_s(s):
        return capped_distance(eh.r_y(R**2 * np.asarray(s, dtype=float)) / R, H_CAP_START)

    frame = neck_frame(R, profile, n_radial, a, h_of_s=h_of_s)
    band = np.count_nonzero((R**2 * frame.s >= R / 4) & (R**2 * frame.s <= R))
    if band < MIN_BAND_POINTS:
        raise ResolutionError(f"only {band} radial points inside the gluing band")
    rho = R**2 * frame.s
    p1, p2 = eh.cut_profile_derivs(rho, R, profile)
    lo = np.minimum(*eh.radial_eigs(p1, p2, rho))
    if np.any(lo <= 0):
        i = int(np.argmin(lo))
        raise RTooSmallError(f"omega_0 not positive at rho={rho[i]:.4g} for R={R}",
                             margin=float(lo[i]), where=float(rho[i]))
    try:
        eta = eh.eta_radial(rho, R, profile)
    except PositivityError as exc:
        raise RTooSmallError(str(exc), exc.margin, exc.where) from exc
    geom = GluedGeometry(lattice, float(R), profile, fixed_points(lattice), frame, eta, a)
    log.info("assembled R=%g: %d radial nodes, T=%.4f", R, n_radial, geom.T)
    return geom


def euclidean_geometry(R=64.0, n_radial=DEFAULT_RADIAL, lattice=None):
    """The flat-limit control: Euclidean profile in place of Eguchi-Hanson."""
    return assemble(lattice, R, n_radial, profile=eh.EUCLIDEAN)


# norms of eta --------------------------------------------------------------

def _eta_of_t(geom, t):
    rho = geom.R * np.exp(2.0 * t)
    return eh.eta_radial(rho, geom.R, geom.profile, check=False)


def eta_band_samples(geom, n=4096):
    """eta on a uniform grid in t covering the band -log 2 <= t <= 0 with margin."""
    t = np.linspace(-1.5, 0.75, n)
    return t, _eta_of_t(geom, t)


def eta_norms(geom: GluedGeometry, k: int) -> float:
    """Cylindrical L^2_k norm of eta summed over the 16 neck bands.

    eta is radial, so only the lambda = 0 mode is present and
    ||eta||_(k)^2 = 16 vol(P^3) sum_j C(k, j) int |d_t^j eta|^2 dt.
    """
    if not 0 <= k <= 3:
        raise ConfigurationError("eta_norms supports k <= 3")
    from math import comb
    t, e = eta_band_samples(geom)
    dt = t[1] - t[0]
    total = 0.0
    for j in range(k + 1):
        dj = e if j == 0 else spectral_derivatives(e, dt, j)
        total += comb(k, j) * float(np.sum(dj**2) * dt)
    return float(np.sqrt(N_FIXED * np.pi**2 * total))


def sup_eta(geom: GluedGeometry, n=4096) -> float:
    _, e = eta_band_samples(geom, n)
    return float(max(np.abs(e).max(), np.abs(geom.eta).max()))


def per_neck_sup_eta(geom: GluedGeometry, n_dirs=64, n_r=64, seed=0):
    """sup |eta| around each fixed point, sampled from torus coordinates."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, 4))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    radii = np.sqrt(np.linspace(0.25, 1.0, n_r) * geom.R) / geom.R
    offsets = (radii[:, None, None] * dirs[None]).reshape(-1, 4)
    out = []
    for q in geom.fixed:
        pts = geom.lattice.reduce(q + offsets)
        out.append(float(np.abs(geom.eta_at(pts)).max()))
    return np.array(out)


def closedness_defect(geom: GluedGeometry, pts, step=1e-5):
    """max |d_l H_jk - d_j H_lk| (holomorphic directions) of omega_0 at offsets ``pts``.

    A Hermitian form is closed iff this vanishes; the derivative is a
    central difference so the result is O(step^2).
    """
    pts = np.atleast_2d(pts)
    dirs = [np.array([1, 0, 0, 0.0]), np.array([0, 0, 1, 0.0])]
    dirs_i = [np.array([0, 1, 0, 0.0]), np.array([0, 0, 0, 1.0])]

    def d_hol(l):
        # d/dz_l = (d/dx_l - i d/dy_l) / 2
        dx = (geom.metric_at(pts + step * dirs[l]) - geom.metric_at(pts - step * dirs[l])) / (2 * step)
        dy = (geom.metric_at(pts + step * dirs_i[l]) - geom.metric_at(pts - step * dirs_i[l])) / (2 * step)
        return 0.5 * (dx - 1j * dy)

    D = [d_hol(0), d_hol(1)]
    # d_l H_jk = d_j H_lk for j != l; only the pair (0, 1) is independent
    bad = np.abs(D[0][:, 1, :] - D[1][:, 0, :])
    return float(bad.max())


def torus_grid_h(geom: GluedGeometry, n):
    """h on the Cartesian torus grid with n points per generator (balls excluded)."""
    spacing = 1.0 / n
    if not spacing * geom.lattice.matrix.max() < geom.R**-0.5 / 4:
        raise ResolutionError("torus grid does not resolve the excised balls")
    c = (np.arange(n) + 0.5) / n
    grid = np.array(np.meshgrid(c, c, c, c, indexing="ij")).reshape(4, -1).T @ geom.lattice.matrix
    idx, w = geom.locate(grid)
    r = np.linalg.norm(w, axis=1)
    keep = r >= geom.R**-0.5
    return grid[keep], geom.h_of_s(r[keep] ** 2)


def snapshot(geom: GluedGeometry) -> dict:
    """Binary-free JSON-ready snapshot: every array is {"shape": [...], "data": [...]}."""
    def arr(a):
        a = np.asarray(a, dtype=float)
        return {"shape": list(a.shape), "data": a.ravel().tolist()}

    return {
        "schema": "kummer-gluing/geometry/1",
        "R": geom.R,
        "T": geom.T,
        "profile": geom.profile.kind,
        "cell_radius": geom.a,
        "lattice": arr(geom.lattice.matrix),
        "fixed_points": arr(geom.fixed),
        "x": arr(geom.x),
        "t": arr(geom.t),
        "h": arr(geom.h),
        "eta": arr(geom.eta),
        "omega_det": arr(geom.frame.D0),
    }


def write_snapshot(geom, path):
    with open(path, "w") as fh:
        json.dump(snapshot(geom), fh, indent=1, sort_keys=True)
