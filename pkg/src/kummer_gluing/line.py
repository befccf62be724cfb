"""Finite-volume assembly of symmetric second-order operators on a line.

Every cylinder, end and neck in the package reduces, mode by mode, to an
operator of the form

    <L f, g>_W = sum_faces a (du)(dv)/dx + sum_nodes |cell| q u v + boundary terms,
    u = f / h,  v = g / h,

where ``W = |cell| * mu`` is the measure in which ``L`` is self-adjoint.  The
matrix ``S`` of the bilinear form is tridiagonal and symmetric; ``L = W^-1 S``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse


def cell_widths(x):
    x = np.asarray(x, dtype=float)
    dx = np.diff(x)
    w = np.empty_like(x)
    w[0], w[-1] = dx[0] / 2, dx[-1] / 2
    w[1:-1] = (dx[:-1] + dx[1:]) / 2
    return w


@dataclass(frozen=True, eq=False)
class LineOperator:
    """Tridiagonal symmetric operator on nodes ``x``.

    face : flux coefficient on each of the n-1 faces
    q    : zero-order density at nodes
    mu   : measure density at nodes
    robin: (left, right) boundary coefficients added to the form, acting on u
    conj : optional conjugating factor h; the form acts on u = f / h
    """

    x: np.ndarray
    face: np.ndarray
    q: np.ndarray
    mu: np.ndarray
    robin: tuple = (0.0, 0.0)
    conj: np.ndarray | None = None

    @property
    def n(self):
        return self.x.size

    @property
    def widths(self):
        return cell_widths(self.x)

    @property
    def weights(self):
        return self.widths * self.mu

    def _bands(self):
        dx = np.diff(self.x)
        c = self.face / dx
        diag = self.widths * self.q
        diag = diag.copy()
        diag[:-1] += c
        diag[1:] += c
        diag[0] += self.robin[0]
        diag[-1] += self.robin[-1]
        off = -c
        if self.conj is not None:
            d = 1.0 / self.conj
            diag = diag * d * d
            off = off * d[:-1] * d[1:]
        return diag, off

    def form(self):
        """Sparse symmetric matrix S with <L f, g>_W = g^T S f."""
        diag, off = self._bands()
        return sparse.diags([off, diag, off], [-1, 0, 1], format="csr")

    def dense_form(self):
        return self.form().toarray()

    def apply(self, f):
        return (self.form() @ f) / self.weights

    def solve(self, rho):
        """Solve L f = rho (rho may carry extra trailing columns)."""
        diag, off = self._bands()
        ab = np.zeros((3, self.n))
        ab[0, 1:] = off
        ab[1] = diag
        ab[2, :-1] = off
        rhs = np.asarray(rho, dtype=float)
        rhs = rhs * (self.weights if rhs.ndim == 1 else self.weights[:, None])
        return linalg.solve_banded((1, 1), ab, rhs)

    def inner(self, f, g):
        return float(np.sum(self.weights * f * g))

    def norm(self, f):
        return np.sqrt(self.inner(f, f))

    def normalized_form(self):
        """W^-1/2 S W^-1/2 as a dense matrix; its spectrum is that of L."""
        s = 1.0 / np.sqrt(self.weights)
        return s[:, None] * self.dense_form() * s[None, :]

    def operator_norm_of(self, M):
        """L^2(W) operator norm of a dense matrix acting on node values."""
        s = np.sqrt(self.weights)
        return float(np.linalg.norm(s[:, None] * M / s[None, :], 2))
