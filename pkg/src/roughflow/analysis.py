"""Local and partial maximal functions on grids, with weighted-integral
inequality verifiers.

Discretization: a grid function carries uniform axes; the discrete ball of
radius r at a point is the set of cells whose centers lie within r, and the
smallest "ball" is the cell itself (the r -> 0 limit of the continuum
average), so the maximal function dominates |f| pointwise.  Ball averages
are volume-weighted, i.e. plain means over included cells, computed by FFT
convolution with zero padding; grids should therefore extend one maximal
radius beyond the support of f so no mass is truncated.

The verifiers compare both sides of the weighted maximal inequalities

    integral (M_delta f)^p d mu <= 3 C_p Lambda0 integral |f|^p d mu,
    C_p = 5^n 2^p p / (p-1),

    integral e^(theta M_delta f) d mu <= integral (1 + theta M_delta f) d mu
        + 6 5^n Lambda0 integral e^(2 theta |f|) d mu,

where Lambda0 is the ring-ratio constant of the weight: the supremum over
rings R_k = {(k-1) delta <= |x| <= k delta} of (sup of the weight on R_k)
over (inf of the weight on the delta-neighborhood of R_k).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.signal import fftconvolve

from .measure import ReferenceMeasure

__all__ = [
    "GridFunction",
    "local_maximal",
    "partial_maximal",
    "ring_ratio_scan",
    "weight_ring_ratio",
    "maximal_lp_check",
    "maximal_exp_check",
    "pointwise_sobolev_check",
    "RingScan",
    "MaximalReport",
    "ExpMaximalReport",
    "SobolevPointwiseReport",
]


@dataclass
class GridFunction:
    """Sampled function on a uniform tensor grid (1 or 2 axes)."""

    axes: tuple
    values: NDArray[np.float64]

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        object.__setattr__(self, "axes", axes)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.shape != tuple(len(a) for a in axes):
            raise ValueError("values shape does not match the axes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        steps = []
        for a in axes:
            d = np.diff(a)
            if len(d) == 0 or d.min() <= 0 or (d.max() - d.min()) > 1e-9 * d.max():
                raise ValueError("axes must be uniform and increasing")
            steps.append(float(d[0]))
        object.__setattr__(self, "_steps", tuple(steps))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def steps(self) -> tuple:
        return self._steps

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self._steps))

    def points(self) -> NDArray[np.float64]:
        """All grid points, shape values.shape + (ndim,)."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(grids, axis=-1)

    @classmethod
    def from_callable(cls, axes: Sequence, fn: Callable) -> "GridFunction":
        axes = tuple(np.asarray(a, dtype=np.float64) for a in axes)
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        vals = np.asarray(fn(pts), dtype=np.float64).reshape(
            tuple(len(a) for a in axes)
        )
        return cls(axes, vals)

    def to_csv(self, path) -> None:
        """Axis header rows followed by row-major value rows."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for i, a in enumerate(self.axes):
                writer.writerow([f"axis{i}"] + [f"{v:.17g}" for v in a])
            vals = self.values.reshape(self.values.shape[0], -1)
            for row in vals:
                writer.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        axes = []
        i = 0
        while i < len(rows) and rows[i] and str(rows[i][0]).startswith("axis"):
            axes.append(np.array([float(v) for v in rows[i][1:]]))
            i += 1
        data = np.array([[float(v) for v in row] for row in rows[i:]])
        shape = tuple(len(a) for a in axes)
        return cls(tuple(axes), data.reshape(shape))


# ---------------------------------------------------------------------------
# maximal functions
# ---------------------------------------------------------------------------


def _ball_average(absvals: NDArray, mask: NDArray) -> NDArray:
    avg = fftconvolve(absvals, mask / mask.sum(), mode="same")
    return np.maximum(avg, 0.0)


def _radii(step: float, delta: float) -> NDArray[np.float64]:
    if delta < step - 1e-12 * step:
        raise ValueError(f"delta={delta} is below the grid step {step}")
    j_max = int(np.floor(delta / step + 1e-9))
    return step * np.arange(1, j_max + 1)


def local_maximal(g: GridFunction, delta: float) -> GridFunction:
    """Discrete local maximal function over balls of radius up to delta."""
    h = g.steps[0]
    if any(abs(s - h) > 1e-9 * h for s in g.steps):
        raise ValueError("local_maximal needs equal steps on all axes")
    radii = _radii(h, delta)
    absvals = np.abs(g.values)
    out = absvals.copy()  # the cell itself: r -> 0 ball
    j_max = int(round(radii[-1] / h))
    offsets = np.meshgrid(*([np.arange(-j_max, j_max + 1)] * g.ndim), indexing="ij")
    dist = np.sqrt(sum((o.astype(float) * h) ** 2 for o in offsets))
    for r in radii:
        mask = (dist <= r + 1e-9 * h).astype(float)
        out = np.maximum(out, _ball_average(absvals, mask))
    return GridFunction(g.axes, out)


def partial_maximal(g: GridFunction, radius: float) -> GridFunction:
    """Maximal function over the last axis only, per slice of the others.

    Equals the one-axis local maximal applied slice-wise; defined for
    two-block grid functions f(x1, x2) where the maximal average runs over
    the x2 block.
    """
    if g.ndim < 2:
        raise ValueError("partial_maximal needs a 2-block grid function")
    h = g.steps[-1]
    radii = _radii(h, radius)
    absvals = np.abs(g.values)
    out = absvals.copy()
    j_max = int(round(radii[-1] / h))
    offs = np.arange(-j_max, j_max + 1).astype(float) * h
    for r in radii:
        mask1d = (np.abs(offs) <= r + 1e-9 * h).astype(float)
        mask = mask1d.reshape((1,) * (g.ndim - 1) + (-1,))
        out = np.maximum(out, _ball_average(absvals, mask))
    return GridFunction(g.axes, out)


# ---------------------------------------------------------------------------
# ring-ratio constant of the weight
# ---------------------------------------------------------------------------


@dataclass
class RingScan:
    ratios: NDArray[np.float64]
    value: float
    diverging: bool


def ring_ratio_scan(
    profile: Callable[[NDArray], NDArray],
    delta: float,
    k_max: int = 200,
    samples_per_ring: int = 65,
) -> RingScan:
    """Scan sup_k (sup profile on ring k) / (inf profile on its neighborhood).

    ``profile`` is the radial weight r -> w(r) > 0.  A scan whose running
    ratios are still growing at the cap is flagged as diverging (the
    constant is infinite, as for Gaussian-type weights).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    ratios = np.empty(k_max)
    for k in range(1, k_max + 1):
        ring = np.linspace((k - 1) * delta, k * delta, samples_per_ring)
        hood = np.linspace(max(0.0, (k - 2) * delta), (k + 1) * delta,
                           3 * samples_per_ring)
        sup = float(np.max(profile(ring)))
        inf = float(np.min(profile(hood)))
        ratios[k - 1] = np.inf if inf <= 0 else sup / inf
    value = float(np.max(ratios))
    tail = ratios[-min(10, k_max):]
    diverging = bool(
        not np.all(np.isfinite(ratios))
        or (np.all(np.diff(tail) > 0) and ratios[-1] >= value * (1 - 1e-12))
    )
    return RingScan(ratios=ratios, value=value, diverging=diverging)


def weight_ring_ratio(m: ReferenceMeasure, delta: float, k_max: int = 200) -> float:
    """Ring-ratio constant of the polynomial weight.

    For delta >= 1 this equals ``(1 + 4 delta^2)^alpha`` exactly (the
    supremum is attained on the innermost ring).
    """
    scan = ring_ratio_scan(
        lambda r: (1.0 + r * r) ** (-m.alpha), delta, k_max=k_max
    )
    return scan.value


# ---------------------------------------------------------------------------
# inequality verifiers
# ---------------------------------------------------------------------------


def _mu_integral(g: GridFunction, m: ReferenceMeasure, values: NDArray) -> float:
    pts = g.points().reshape(-1, g.ndim)
    w = m.weight(pts).reshape(g.values.shape)
    return float(np.sum(values * w) * g.cell_volume)


@dataclass
class MaximalReport:
    lhs: float
    rhs_integral: float
    c_p: float
    lambda0: float
    bound: float
    ratio: float
    passed: bool


def maximal_lp_check(
    g: GridFunction,
    m: ReferenceMeasure,
    delta: float,
    p: float,
    maximal: Optional[GridFunction] = None,
) -> MaximalReport:
    """Verify the weighted L^p maximal inequality on a grid function.

    ``maximal`` may carry a precomputed ``local_maximal(g, delta)`` when the
    same maximal function is checked at several exponents.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    if m.dim != g.ndim:
        raise ValueError("measure dimension must match the grid")
    mf = maximal if maximal is not None else local_maximal(g, delta)
    lhs = _mu_integral(g, m, mf.values**p)
    rhs_int = _mu_integral(g, m, np.abs(g.values) ** p)
    c_p = 5.0**g.ndim * 2.0**p * p / (p - 1.0)
    lam0 = weight_ring_ratio(m, delta)
    bound = 3.0 * c_p * lam0 * rhs_int
    ratio = lhs / bound if bound > 0 else (0.0 if lhs == 0 else np.inf)
    return MaximalReport(lhs, rhs_int, c_p, lam0, bound, ratio,
                         bool(lhs <= bound * (1 + 1e-12)))


@dataclass
class ExpMaximalReport:
    lhs: float
    linear_term: float
    exp_term: float
    lambda0: float
    bound: float
    slack: float
    passed: bool


def maximal_exp_check(
    g: GridFunction,
    m: ReferenceMeasure,
    delta: float,
    theta: float,
    maximal: Optional[GridFunction] = None,
) -> ExpMaximalReport:
    """Verify the exponential-moment maximal inequality on a grid function."""
    if m.dim != g.ndim:
        raise ValueError("measure dimension must match the grid")
    mf = maximal if maximal is not None else local_maximal(g, delta)
    lhs = _mu_integral(g, m, np.exp(theta * mf.values))
    linear = _mu_integral(g, m, 1.0 + theta * mf.values)
    expterm = _mu_integral(g, m, np.exp(2.0 * theta * np.abs(g.values)))
    lam0 = weight_ring_ratio(m, delta)
    bound = linear + 6.0 * 5.0**g.ndim * lam0 * expterm
    return ExpMaximalReport(lhs, linear, expterm, lam0, bound, bound - lhs,
                            bool(lhs <= bound * (1 + 1e-12)))


@dataclass
class SobolevPointwiseReport:
    fitted_constant: float
    n_pairs: int
    radius: float


def pointwise_sobolev_check(
    g: GridFunction,
    grad_g: GridFunction,
    radius: float,
    n_pairs: int,
    rng: np.random.Generator,
) -> SobolevPointwiseReport:
    """Fit the smallest C in the partial pointwise Sobolev inequality.

    Over random same-slice pairs (x1, x2), (x1, y2) with |x2 - y2| <= radius,
    computes the largest ratio |f(x1,x2) - f(x1,y2)| / (|x2 - y2| *
    (M|grad|(x1,x2) + M|grad|(x1,y2))) where M is the partial maximal
    function of |grad| at the same radius.  A finite, radius-stable fit is
    the verifiable content; no specific value is asserted.
    """
    if g.ndim < 2:
        raise ValueError("needs a 2-block grid function")
    if g.values.shape != grad_g.values.shape:
        raise ValueError("gradient grid must match the function grid")
    mgrad = partial_maximal(grad_g, radius).values
    h2 = g.steps[-1]
    n2 = g.values.shape[-1]
    lead_shape = g.values.shape[:-1]
    max_offset = int(np.floor(radius / h2 + 1e-9))
    if max_offset < 1:
        raise ValueError("radius below the x2 grid step")
    lead_idx = tuple(
        rng.integers(0, s, size=n_pairs) for s in lead_shape
    )
    ia = rng.integers(0, n2, size=n_pairs)
    off = rng.integers(1, max_offset + 1, size=n_pairs) * rng.choice(
        [-1, 1], size=n_pairs
    )
    ib = np.clip(ia + off, 0, n2 - 1)
    keep = ib != ia
    fa = g.values[lead_idx + (ia,)][keep]
    fb = g.values[lead_idx + (ib,)][keep]
    ma = mgrad[lead_idx + (ia,)][keep]
    mb = mgrad[lead_idx + (ib,)][keep]
    dist = np.abs(ib - ia)[keep] * h2
    denom = dist * (ma + mb)
    num = np.abs(fa - fb)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(num == 0.0, 0.0, num / np.where(denom > 0, denom, np.inf))
    fitted = float(np.max(ratios)) if ratios.size else 0.0
    return SobolevPointwiseReport(fitted, int(keep.sum()), radius)
