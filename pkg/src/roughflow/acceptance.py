"""Desk-scale acceptance suite.

Each criterion function runs one end-to-end verification at pinned
tolerances and returns a result record; ``run_all`` executes the whole
suite and prints one pass/fail line per criterion.  ``budget_scale``
multiplies the Monte Carlo budgets (sample counts, never tolerances) for
quick smoke runs; pass/fail semantics are unchanged.

All randomness derives from the master seed through named child streams,
so repeated runs produce identical results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from . import analysis as an
from . import derivative as dv
from . import stability as st
from ._seeds import derive_rng, derive_seed
from .catalog import make_family
from .coefficients import MollifierSpec, mollify
from .density import (
    density_bound_rhs,
    select_t0,
    sup_lp_density_norm,
    track_density,
    uniform_density_bound,
)
from .flow import BrownianDriver, compose_time_shift, integrate, level_set_tail
from .measure import ReferenceMeasure

__all__ = ["CriterionResult", "run_all", "CRITERIA"]

DEFAULT_SEED = 20240915


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    seconds: float
    details: dict = dc_field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        keys = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items())
        return f"[{status}] criterion {self.index}: {self.name} ({self.seconds:.1f}s) {keys}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)) and v and isinstance(v[0], float):
        return "[" + ", ".join(f"{x:.3g}" for x in v) + "]"
    return str(v)


def _scaled(value: int, scale: float, minimum: int = 8) -> int:
    return max(minimum, int(round(value * scale)))


# ---------------------------------------------------------------------------
# 1. pathwise density oracle, translation flow
# ---------------------------------------------------------------------------


def criterion_1(seed: int, scale: float) -> CriterionResult:
    """Translation flow: tracked density vs the exact weight ratio.

    As stated, the check requires per-path relative error below 1e-2 at
    every grid time and a median error that halves under dt halving.  The
    left-point Riemann sum of the stochastic integral carries a pathwise
    error of order sqrt(dt) (a martingale of per-step variance ~ dt^2), so
    the stated tolerance and rate are not attainable; the criterion is
    evaluated faithfully and its measured values are reported.
    """
    t0 = time.time()
    fam = make_family("translation")
    m = fam.measure
    n_omega, n_x = _scaled(50, scale), 20  # 1000 trajectories at scale 1

    def run(dt_exp: int, driver=None):
        n_steps = 2**dt_exp
        drv = driver if driver is not None else BrownianDriver.generate(
            1, 2.0**-dt_exp, n_steps, n_omega, derive_seed(seed, "c1-driver")
        )
        x0 = m.sample(derive_rng(seed, "c1-x0"), n_x)
        ens = integrate(fam.field, drv, x0, 1.0)
        track = track_density(ens, fam.field, m)
        logw = m.log_weight(ens.states)
        oracle = logw - logw[:, :, 0:1]
        rel = np.abs(np.exp(track.log_density() - oracle) - 1.0)
        return rel.max(axis=2), drv

    fine = BrownianDriver.generate(
        1, 2.0**-11, 2**11, n_omega, derive_seed(seed, "c1-driver")
    )
    err_coarse, _ = run(10, fine.coarsen(2))
    err_fine, _ = run(11, fine)
    frac_within = float((err_coarse < 1e-2).mean())
    med_coarse = float(np.median(err_coarse))
    med_fine = float(np.median(err_fine))
    ratio = med_fine / med_coarse
    passed = frac_within == 1.0 and ratio <= 0.55
    return CriterionResult(
        1, "pathwise density oracle (translation flow)", passed,
        time.time() - t0,
        dict(
            frac_paths_within_1e2=frac_within,
            median_err=med_coarse,
            median_err_half_dt=med_fine,
            median_ratio=ratio,
        ),
    )


# ---------------------------------------------------------------------------
# 2. pathwise density oracle, linear drift
# ---------------------------------------------------------------------------


def criterion_2(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    fam = make_family("pure-drift")
    m = fam.measure
    dt = 2.0**-10
    drv = BrownianDriver.generate(1, dt, 2**10, 1, derive_seed(seed, "c2-driver"))
    x0 = m.sample(derive_rng(seed, "c2-x0"), _scaled(500, scale))
    ens = integrate(fam.field, drv, x0, 1.0)
    track = track_density(ens, fam.field, m)
    t = ens.times
    exact = x0[None, :, None, :] * np.exp(-t)[None, None, :, None]
    oracle = (
        -1.0 * t[None, None, :]
        + m.log_weight(exact)
        - m.log_weight(x0)[None, :, None]
    )
    rel = np.abs(np.exp(track.log_density() - oracle) - 1.0)
    worst = float(rel.max())
    passed = worst < 10.0 * dt
    return CriterionResult(
        2, "pathwise density oracle (linear drift)", passed, time.time() - t0,
        dict(max_rel_err=worst, tolerance=10.0 * dt),
    )


# ---------------------------------------------------------------------------
# 3. L^p density bound per catalog family
# ---------------------------------------------------------------------------

_C3_FAMILIES = ("linear", "log-singular", "partially-sobolev", "deriv-rough")


def criterion_3(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    q = 2.0
    ps = sorted({2.0, q / (q - 1.0)})
    results = {}
    passed = True
    for name in _C3_FAMILIES:
        fam = make_family(name)
        m = fam.measure
        t_horizon = select_t0(fam.p0, max(ps))
        dt = 2.0**-10
        n_steps = int(round(t_horizon / dt))
        n_omega, n_x = _scaled(100, np.sqrt(scale)), _scaled(100, np.sqrt(scale))
        drv = BrownianDriver.generate(
            fam.field.dim_noise, dt, n_steps, n_omega,
            derive_seed(seed, f"c3-driver-{name}"),
        )
        x0 = m.sample(derive_rng(seed, f"c3-x0-{name}"), n_x)
        ens = integrate(fam.field, drv, x0, t_horizon)
        track = track_density(ens, fam.field, m)
        for p in ps:
            measured = sup_lp_density_norm(track, p)
            rhs = density_bound_rhs(
                fam.field, m, p, t_horizon,
                _scaled(20000, scale), derive_rng(seed, f"c3-rhs-{name}-{p}"),
            )
            ok = (not rhs.divergent) and measured.value <= rhs.value + 2.0 * measured.se
            passed &= ok
            results[f"{name}:p={p:g}"] = (
                round(measured.value, 4), round(rhs.value, 4), ok
            )
    return CriterionResult(
        3, "L^p density bound per family", passed, time.time() - t0, results
    )


# ---------------------------------------------------------------------------
# 4. uniform density estimate across mollification levels
# ---------------------------------------------------------------------------


def criterion_4(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    levels = [2.0, 4.0, 8.0, 16.0]
    p = 2.0
    details = {}
    passed = True
    for name, spec_kwargs in (
        ("log-singular", dict(order=16, panels=1)),
        ("partially-sobolev", dict(order=16, panels=(2, 1))),
    ):
        fam = make_family(name)
        t_horizon = select_t0(fam.p0, p)
        dt = 2.0**-10
        n_steps = int(round(t_horizon / dt))
        n_omega, n_x = _scaled(40, np.sqrt(scale)), _scaled(50, np.sqrt(scale))
        drv = BrownianDriver.generate(
            fam.field.dim_noise, dt, n_steps, n_omega,
            derive_seed(seed, f"c4-driver-{name}"),
        )
        x0 = fam.measure.sample(derive_rng(seed, f"c4-x0-{name}"), n_x)
        report = uniform_density_bound(
            fam, levels, drv, x0, p,
            budget=_scaled(20000, scale),
            rng=derive_rng(seed, f"c4-rhs-{name}"),
            spec_kwargs=spec_kwargs,
        )
        passed &= report.passed
        details[name] = dict(
            norms=[round(v, 4) for v in report.norms],
            rhs=round(report.rhs, 4),
            product_form=report.product_form,
            ok=report.passed,
        )
    return CriterionResult(
        4, "uniform density estimate over levels", passed, time.time() - t0, details
    )


# ---------------------------------------------------------------------------
# 5. level-set tail bound
# ---------------------------------------------------------------------------

_C5_FAMILIES = ("linear", "log-singular", "partially-sobolev", "deriv-rough")


def criterion_5(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    radii = (2.0, 5.0, 10.0, 20.0)
    q = 2.0
    p = 2.0
    details = {}
    passed = True
    for name in _C5_FAMILIES:
        fam = make_family(name)
        m = fam.measure
        dt = 2.0**-10
        drv = BrownianDriver.generate(
            fam.field.dim_noise, dt, 2**10, _scaled(40, np.sqrt(scale)),
            derive_seed(seed, f"c5-driver-{name}"),
        )
        x0 = m.sample(derive_rng(seed, f"c5-x0-{name}"), _scaled(50, np.sqrt(scale)))
        ens = integrate(fam.field, drv, x0, 1.0)
        track = track_density(ens, fam.field, m)
        lam = sup_lp_density_norm(track, p).value
        fam_ok = True
        ratios = []
        for r in radii:
            rep = level_set_tail(
                ens, r, m, q, lam,
                mc_budget=_scaled(20000, scale),
                rng=derive_rng(seed, f"c5-norms-{name}-{r}"),
            )
            fam_ok &= rep.passed
            ratios.append(
                float(round(rep.empirical / rep.bound, 4)) if rep.bound > 0
                else np.inf
            )
        passed &= fam_ok
        details[name] = dict(tail_over_bound=ratios, lambda_pt=float(round(lam, 3)),
                             ok=fam_ok)
    return CriterionResult(
        5, "level-set tail bound", passed, time.time() - t0, details
    )


# ---------------------------------------------------------------------------
# 6. maximal-function inequalities
# ---------------------------------------------------------------------------


def _random_compact_grid(n: int, rng: np.random.Generator) -> an.GridFunction:
    """Random piecewise-constant function supported in B(2), grid B(2+delta)."""
    if n == 1:
        axis = np.linspace(-4.0, 4.0, 161)
        axes = (axis,)
    else:
        axis = np.linspace(-4.0, 4.0, 65)
        axes = (axis, axis)
    pts = np.meshgrid(*axes, indexing="ij")
    radius = np.sqrt(sum(p * p for p in pts))
    shape = radius.shape
    n_pieces = int(rng.integers(3, 9))
    vals = np.zeros(shape)
    for _ in range(n_pieces):
        lo = rng.uniform(0.0, 1.8)
        hi = lo + rng.uniform(0.05, 1.0)
        level = rng.normal(0.0, 1.0)
        ring = (radius >= lo) & (radius <= hi)
        sector = np.ones(shape, dtype=bool)
        if n == 2 and rng.random() < 0.7:
            ang = np.arctan2(pts[1], pts[0])
            a0 = rng.uniform(-np.pi, np.pi)
            width = rng.uniform(0.5, 2 * np.pi)
            sector = np.mod(ang - a0, 2 * np.pi) <= width
        vals = np.where(ring & sector, vals + level, vals)
    vals = np.where(radius <= 2.0, vals, 0.0)
    return an.GridFunction(axes, vals)


def criterion_6(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    n_funcs = _scaled(200, scale, minimum=20)
    deltas = (0.5, 1.0, 2.0)
    p_values = (1.5, 2.0, 4.0)
    thetas = (0.25, 0.5)
    total = failures = 0
    for n in (1, 2):
        m = ReferenceMeasure(n, 1.5)
        rng = derive_rng(seed, f"c6-funcs-{n}")
        for i in range(n_funcs):
            g = _random_compact_grid(n, rng)
            for delta in deltas:
                mf = an.local_maximal(g, delta)
                for p in p_values:
                    rep = an.maximal_lp_check(g, m, delta, p, maximal=mf)
                    total += 1
                    failures += not rep.passed
                for theta in thetas:
                    rep = an.maximal_exp_check(g, m, delta, theta, maximal=mf)
                    total += 1
                    failures += not rep.passed
    lam_ok = True
    lam_err = 0.0
    for n in (1, 2):
        for alpha in (1.0, 1.5, 2.5):
            m = ReferenceMeasure(n, alpha)
            for delta in (1.0, 2.0, 5.0):
                scan = an.weight_ring_ratio(m, delta)
                closed = (1.0 + 4.0 * delta**2) ** alpha
                rel = abs(scan - closed) / closed
                lam_err = max(lam_err, rel)
                lam_ok &= rel < 1e-6
    passed = failures == 0 and lam_ok
    return CriterionResult(
        6, "maximal-function inequalities", passed, time.time() - t0,
        dict(checks=total, failures=failures, ring_scan_max_rel_err=lam_err),
    )


# ---------------------------------------------------------------------------
# 7. weight-mollification inequality
# ---------------------------------------------------------------------------


def criterion_7(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    levels = (1.0, 2.0, 4.0, 8.0)
    margins = {}
    passed = True
    for n, alpha, n_grid in ((1, 3.0, 201), (2, 3.0, 41)):
        m = ReferenceMeasure(n, alpha)
        axis = np.linspace(-6.0, 6.0, n_grid)
        if n == 1:
            pts = axis[:, None]
        else:
            g1, g2 = np.meshgrid(axis, axis, indexing="ij")
            pts = np.stack([g1.ravel(), g2.ravel()], axis=-1)
        for k in levels:
            spec = MollifierSpec(dim=n, level=k, order=16, panels=2)
            conv = spec.convolve(m.log_weight, pts)
            margin = float(np.min(conv + alpha * np.log(3.0) - m.log_weight(pts)))
            margins[f"n{n}-k{k:g}"] = round(margin, 5)
            passed &= margin >= 0.0
    return CriterionResult(
        7, "weight-mollification inequality", passed, time.time() - t0, margins
    )


# ---------------------------------------------------------------------------
# 8. Cauchy / stability convergence and uniqueness
# ---------------------------------------------------------------------------


def criterion_8(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    levels = [2.0, 4.0, 8.0, 16.0]
    details = {}
    passed = True
    for name, spec_kwargs in (
        ("log-singular", dict(order=16, panels=1)),
        ("partially-sobolev", dict(order=16, panels=(2, 1))),
    ):
        fam = make_family(name)
        dt = 2.0**-10
        T = 0.25
        n_steps = int(round(T / dt))
        n_omega, n_x = _scaled(20, np.sqrt(scale)), _scaled(32, np.sqrt(scale))
        drv = BrownianDriver.generate(
            fam.field.dim_noise, dt, n_steps, n_omega,
            derive_seed(seed, f"c8-driver-{name}"),
        )
        x0 = fam.measure.sample(derive_rng(seed, f"c8-x0-{name}"), n_x)
        table = st.cauchy_experiment(
            fam, levels, drv, x0, T,
            norm_budget=_scaled(20000, scale),
            spec_kwargs=spec_kwargs,
        )
        metrics = table.metrics()
        decreasing = all(b < a for a, b in zip(metrics, metrics[1:]))
        unq = st.uniqueness_experiment(
            fam, levels[-1], drv, x0, T, spec_kwargs=spec_kwargs
        )
        below_gap = unq.metric < metrics[-1]
        passed &= decreasing and below_gap
        details[name] = dict(
            metrics=[round(v, 5) for v in metrics],
            uniqueness_metric=round(unq.metric, 6),
            decreasing=decreasing,
            below_final_gap=below_gap,
        )
    return CriterionResult(
        8, "Cauchy/stability convergence and uniqueness", passed,
        time.time() - t0, details,
    )


# ---------------------------------------------------------------------------
# 9. weak differentiability
# ---------------------------------------------------------------------------


def criterion_9(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    eps_seq = [2.0**-j for j in range(1, 5)]
    q, d = 2.0, 1
    alpha1 = q + d / 2.0 + 0.5
    alpha = 2 * alpha1 + q + d / 2.0 + 0.5
    m2 = ReferenceMeasure(2 * d, alpha)
    m1 = ReferenceMeasure(d, alpha1)
    dt = 2.0**-10
    drv = BrownianDriver.generate(
        1, dt, 2**10, _scaled(24, np.sqrt(scale)),
        derive_seed(seed, "c9-driver"),
    )
    xy0 = m2.sample(derive_rng(seed, "c9-xy0"), _scaled(48, np.sqrt(scale)))
    details = {}

    sys_lin = dv.lift(make_family("deriv-linear").field)
    tab_lin = dv.weak_derivative_convergence(sys_lin, eps_seq, drv, xy0, 1.0)
    lin_ok = max(tab_lin.metrics()) < 1e-10
    details["linear_max_metric"] = float(max(tab_lin.metrics()))

    passed = lin_ok
    for name in ("deriv-smooth", "deriv-rough"):
        sys_ = dv.lift(make_family(name).field)
        tab = dv.weak_derivative_convergence(sys_, eps_seq, drv, xy0, 1.0)
        ms = tab.metrics()
        ok = tab.monotone_decreasing() and ms[-1] < ms[0] / 4.0
        passed &= ok
        details[name] = dict(metrics=[round(v, 5) for v in ms], ok=ok)

    sys_rough = dv.lift(make_family("deriv-rough").field)
    hyp = dv.verify_hypotheses(
        sys_rough, m2, m1, p0=0.5, eps_set=[0.5, 0.25, 0.125],
        budget=_scaled(10000, scale), rng=derive_rng(seed, "c9-hyp"),
    )
    passed &= hyp.passed
    details["hypotheses"] = dict(
        eps_ratio=round(hyp.eps_ratio, 3),
        drift_domination=hyp.drift_domination_fraction,
        sigma_domination=hyp.sigma_domination_fraction,
        ok=hyp.passed,
    )
    return CriterionResult(
        9, "weak differentiability", passed, time.time() - t0, details
    )


# ---------------------------------------------------------------------------
# 10. flow property and determinism
# ---------------------------------------------------------------------------


def criterion_10(seed: int, scale: float) -> CriterionResult:
    t0 = time.time()
    dt = 2.0**-7
    details = {}
    passed = True
    for name in ("linear", "translation", "pure-drift", "log-singular",
                 "partially-sobolev", "deriv-smooth"):
        fam = make_family(name)
        field = fam.field
        if name == "log-singular":
            field = mollify(field, MollifierSpec(dim=2, level=4.0, order=16, panels=1))
        drv = BrownianDriver.generate(
            field.dim_noise, dt, 2**7, 4, derive_seed(seed, f"c10-{name}")
        )
        x0 = fam.measure.sample(derive_rng(seed, f"c10-x0-{name}"), 8)
        ens = integrate(field, drv, x0, 1.0)
        comp = compose_time_shift(field, ens, 0.5, 0.5)
        bitwise = bool(
            np.array_equal(comp.states, ens.states[:, :, drv.step_index(0.5):, :])
        )
        drv2 = BrownianDriver.generate(
            field.dim_noise, dt, 2**7, 4, derive_seed(seed, f"c10-{name}")
        )
        ens2 = integrate(field, drv2, x0, 1.0)
        identical = ens.states.tobytes() == ens2.states.tobytes()
        passed &= bitwise and identical
        details[name] = dict(compose_bitwise=bitwise, rerun_identical=identical)
    return CriterionResult(
        10, "flow property and determinism", passed, time.time() - t0, details
    )


CRITERIA: dict = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def run_all(
    seed: int = DEFAULT_SEED,
    budget_scale: float = 1.0,
    indices: Optional[list] = None,
    printer: Optional[Callable[[str], None]] = print,
) -> list:
    """Run the acceptance criteria and return their results.

    Prints one pass/fail line per criterion through ``printer`` (pass
    ``None`` to silence).
    """
    results = []
    for idx in sorted(indices or CRITERIA):
        res = CRITERIA[idx](seed, budget_scale)
        results.append(res)
        if printer is not None:
            printer(res.line())
    return results
