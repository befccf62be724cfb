"""Log-log slope fits used by every scaling-law check."""

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float

    def within(self, lo, hi):
        return lo <= self.slope <= hi


def loglog_slope(x, y, confidence=0.95):
    """Least-squares slope of log|y| against log x with a t-based confidence interval."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("slope fit needs at least two positive samples")
    lx, ly = np.log(x), np.log(y)
    if x.size == 2:
        slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return SlopeFit(slope, ly[0] - slope * lx[0], 0.0, slope, slope)
    res = stats.linregress(lx, ly)
    q = stats.t.ppf(0.5 + confidence / 2, x.size - 2)
    return SlopeFit(res.slope, res.intercept, res.stderr,
                    res.slope - q * res.stderr, res.slope + q * res.stderr)
