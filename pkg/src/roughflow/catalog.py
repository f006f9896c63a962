"""Built-in coefficient families, one per regularity regime.

Each family bundles a coefficient field with the integrability exponent q
it satisfies, the exponential-integrability parameter p0, and reference
measures whose decay exponents respect the standing constraints
(``alpha > q + n/2``; for block-structured fields additionally
``alpha1 > q + n1/2`` and ``alpha > alpha1 + n2/2``), each exceeding its
bound by 0.5.

Families:

* ``linear``            -- Ornstein-Uhlenbeck type: constant sigma, b = A x.
* ``translation``       -- sigma = 1, b = 0 (n = m = 1); additive noise.
* ``pure-drift``        -- sigma = 0, b = -x; deterministic contraction.
* ``log-singular``      -- n = 2 divergence-free vortex drift with a
                           log-singular magnitude at the origin, compact
                           support, plus a linear restoring term.  Sobolev
                           (W^{1,q}, q < 2) but locally unbounded.
* ``partially-sobolev`` -- block-structured on R^2: second-block
                           coefficients have a step-function dependence on
                           x1 (no x1-Sobolev regularity) and weak
                           x2-derivatives with a log singularity.
* ``deriv-linear`` / ``deriv-smooth`` / ``deriv-rough``
                        -- one-dimensional bases for the derivative-system
                           experiments; the rough one has a drift with a
                           log-singular (exponentially integrable)
                           derivative, Sobolev but not Lipschitz.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coefficients import CoefficientField, StructuredCoefficient, _smoothstep, _smoothstep_deriv
from .measure import ReferenceMeasure

__all__ = ["Family", "make_family", "FAMILY_NAMES"]

FAMILY_NAMES = (
    "linear",
    "translation",
    "pure-drift",
    "log-singular",
    "partially-sobolev",
    "deriv-linear",
    "deriv-smooth",
    "deriv-rough",
)


@dataclass
class Family:
    """A catalog coefficient field with its exponents and measures."""

    name: str
    field: CoefficientField
    q: float
    p0: float
    measure: ReferenceMeasure
    measure1: Optional[ReferenceMeasure] = None  # first-block measure (structured)

    @property
    def p(self) -> float:
        """Conjugate exponent of q."""
        return self.q / (self.q - 1.0)


def _alpha_for(q: float, n: int, extra: float = 0.0) -> float:
    return max(q + n / 2.0, extra) + 0.5


# ---------------------------------------------------------------------------
# smooth families
# ---------------------------------------------------------------------------


def _linear(dim: int, rate: float, noise: float) -> CoefficientField:
    eye = np.eye(dim)

    def sigma_fn(x):
        return np.broadcast_to(noise * eye, x.shape[:-1] + (dim, dim)).copy()

    def drift_fn(x):
        return -rate * x

    def sigma_jac_fn(x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    def drift_jac_fn(x):
        return np.broadcast_to(-rate * eye, x.shape[:-1] + (dim, dim)).copy()

    return CoefficientField(
        dim_state=dim, dim_noise=dim,
        sigma_fn=sigma_fn, drift_fn=drift_fn,
        sigma_jac_fn=sigma_jac_fn, drift_jac_fn=drift_jac_fn,
        smoothness="smooth", name=f"linear(rate={rate:g},noise={noise:g})",
        sigma_constant=True,
    )


def _translation() -> CoefficientField:
    return CoefficientField(
        dim_state=1, dim_noise=1,
        sigma_fn=lambda x: np.ones(x.shape[:-1] + (1, 1)),
        drift_fn=lambda x: np.zeros_like(x),
        sigma_jac_fn=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
        drift_jac_fn=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        smoothness="smooth", name="translation",
        sigma_constant=True,
    )


def _pure_drift(dim: int = 1) -> CoefficientField:
    def sigma_fn(x):
        return np.zeros(x.shape[:-1] + (dim, dim))

    return CoefficientField(
        dim_state=dim, dim_noise=dim,
        sigma_fn=sigma_fn,
        drift_fn=lambda x: -x,
        sigma_jac_fn=lambda x: np.zeros(x.shape[:-1] + (dim, dim, dim)),
        drift_jac_fn=lambda x: np.broadcast_to(
            -np.eye(dim), x.shape[:-1] + (dim, dim)).copy(),
        smoothness="smooth", name="pure-drift",
        sigma_constant=True,
    )


# ---------------------------------------------------------------------------
# log-singular vortex (n = 2)
# ---------------------------------------------------------------------------

# cutoff: 1 on |x| <= 1/2, 0 on |x| >= 1
def _zeta(r):
    return _smoothstep(2.0 - 2.0 * r)


def _zeta_deriv(r):
    return -2.0 * _smoothstep_deriv(2.0 - 2.0 * r)


def _log_singular(beta: float, noise: float) -> CoefficientField:
    """Drift -x + beta*log(1/r)*zeta(r) * (rotation of x/r); sigma constant.

    The swirl is divergence-free, so div(b) = -2 exactly and the
    exponential-integrability condition only sees the log-singular
    magnitude, which is integrable for p0 * beta < 2.
    """

    def swirl_scale(r):
        # g(r) = beta * log(1/r) * zeta(r) / r, the coefficient of x-perp
        safe = np.where(r > 0, r, 1.0)
        val = beta * (-np.log(safe)) * _zeta(safe) / safe
        return np.where(r > 0, val, 0.0)

    def swirl_scale_deriv(r):
        safe = np.where(r > 0, r, 1.0)
        logterm = -np.log(safe)
        s = beta * logterm * _zeta(safe)                      # s(r)
        sp = beta * (-_zeta(safe) / safe + logterm * _zeta_deriv(safe))
        val = sp / safe - s / safe**2                          # (s/r)'
        return np.where(r > 0, val, 0.0)

    def drift_fn(x):
        r = np.linalg.norm(x, axis=-1)
        g = swirl_scale(r)
        perp = np.stack([-x[..., 1], x[..., 0]], axis=-1)
        return -x + g[..., None] * perp

    def drift_jac_fn(x):
        r = np.linalg.norm(x, axis=-1)
        g = swirl_scale(r)
        gp = swirl_scale_deriv(r)
        perp = np.stack([-x[..., 1], x[..., 0]], axis=-1)
        safe_r = np.where(r > 0, r, 1.0)
        grad_g = gp[..., None] * x / safe_r[..., None]
        jac = np.zeros(x.shape[:-1] + (2, 2))
        jac[..., 0, 0] = -1.0
        jac[..., 1, 1] = -1.0
        jac += perp[..., :, None] * grad_g[..., None, :]
        jac[..., 0, 1] += -g
        jac[..., 1, 0] += g
        return jac

    def sigma_fn(x):
        return np.broadcast_to(noise * np.eye(2), x.shape[:-1] + (2, 2)).copy()

    def sigma_jac_fn(x):
        return np.zeros(x.shape[:-1] + (2, 2, 2))

    return CoefficientField(
        dim_state=2, dim_noise=2,
        sigma_fn=sigma_fn, drift_fn=drift_fn,
        sigma_jac_fn=sigma_jac_fn, drift_jac_fn=drift_jac_fn,
        smoothness="sobolev", name=f"log-singular(beta={beta:g})",
        sigma_constant=True,
    )


# ---------------------------------------------------------------------------
# partially Sobolev block family (n1 = n2 = 1)
# ---------------------------------------------------------------------------


def _loglip(u):
    """-u log|u| zeta(|u|): bounded, Sobolev, not Lipschitz at 0."""
    a = np.abs(u)
    safe = np.where(a > 0, a, 1.0)
    val = -u * np.log(safe) * _zeta(safe)
    return np.where(a > 0, val, 0.0)


def _loglip_deriv(u):
    a = np.abs(u)
    safe = np.where(a > 0, a, 1.0)
    sgn = np.sign(u)
    val = (-np.log(safe) - 1.0) * _zeta(safe) - u * np.log(safe) * _zeta_deriv(safe) * sgn
    return np.where(a > 0, val, 0.0)


def _partially_sobolev(step_amp: float, noise: float) -> StructuredCoefficient:
    """x1-block: smooth contraction; x2-block: step(x1) times a log-Lipschitz
    profile in x2.  The second block has no Sobolev regularity in x1."""

    def step(u):
        return np.sign(u) + (u == 0.0)  # value at the jump is irrelevant a.e.

    def sigma1_fn(x1):
        return (0.35 + 0.1 * np.tanh(x1))[..., None]

    def sigma1_jac_fn(x1):
        return (0.1 / np.cosh(x1) ** 2)[..., None, None]

    def drift1_fn(x1):
        return -x1

    def drift1_jac_fn(x1):
        return -np.ones(x1.shape[:-1] + (1, 1))

    def sigma2_fn(x):
        s = step(x[..., 0])
        return (noise * (1.0 + 0.5 * s) * (1.0 + 0.3 * np.sin(x[..., 1])))[..., None, None]

    def sigma2_jac_x2_fn(x):
        s = step(x[..., 0])
        return (noise * (1.0 + 0.5 * s) * 0.3 * np.cos(x[..., 1]))[..., None, None, None]

    def drift2_fn(x):
        return (-x[..., 1] + step_amp * step(x[..., 0]) * _loglip(x[..., 1]))[..., None]

    def drift2_jac_x2_fn(x):
        return (-1.0 + step_amp * step(x[..., 0]) * _loglip_deriv(x[..., 1]))[
            ..., None, None
        ]

    return StructuredCoefficient.from_blocks(
        n1=1, dim_state=2, dim_noise=1,
        sigma1_fn=sigma1_fn, sigma2_fn=sigma2_fn,
        drift1_fn=drift1_fn, drift2_fn=drift2_fn,
        sigma1_jac_fn=sigma1_jac_fn, sigma2_jac_x2_fn=sigma2_jac_x2_fn,
        drift1_jac_fn=drift1_jac_fn, drift2_jac_x2_fn=drift2_jac_x2_fn,
        smoothness="rough-partial",
        name=f"partially-sobolev(step={step_amp:g})",
    )


# ---------------------------------------------------------------------------
# derivative-system bases (d = 1)
# ---------------------------------------------------------------------------


def _deriv_base(kind: str) -> CoefficientField:
    if kind == "linear":
        def sigma_fn(x):
            return np.full(x.shape[:-1] + (1, 1), 0.5)

        def sigma_jac_fn(x):
            return np.zeros(x.shape[:-1] + (1, 1, 1))

        def drift_fn(x):
            return -0.8 * x

        def drift_jac_fn(x):
            return np.full(x.shape[:-1] + (1, 1), -0.8)

    elif kind == "smooth":
        def sigma_fn(x):
            return (0.5 + 0.2 * np.sin(x[..., 0]))[..., None, None]

        def sigma_jac_fn(x):
            return (0.2 * np.cos(x[..., 0]))[..., None, None, None]

        def drift_fn(x):
            return -x + 0.5 * np.cos(2.0 * x)

        def drift_jac_fn(x):
            return (-1.0 - np.sin(2.0 * x[..., 0]))[..., None, None]

    elif kind == "rough":
        def sigma_fn(x):
            return (0.4 + 0.2 * np.sin(x[..., 0]))[..., None, None]

        def sigma_jac_fn(x):
            return (0.2 * np.cos(x[..., 0]))[..., None, None, None]

        def drift_fn(x):
            return -x + 0.5 * _loglip(x)

        def drift_jac_fn(x):
            return (-1.0 + 0.5 * _loglip_deriv(x[..., 0]))[..., None, None]

    else:
        raise ValueError(f"unknown derivative base kind: {kind}")

    return CoefficientField(
        dim_state=1, dim_noise=1,
        sigma_fn=sigma_fn, drift_fn=drift_fn,
        sigma_jac_fn=sigma_jac_fn, drift_jac_fn=drift_jac_fn,
        smoothness="smooth" if kind != "rough" else "sobolev",
        name=f"deriv-{kind}",
    )


# ---------------------------------------------------------------------------
# factory
# ---------------------------------------------------------------------------


def make_family(name: str, **params) -> Family:
    """Build a catalog family by name.

    Recognized parameters (all optional): ``rate``, ``noise``, ``beta``,
    ``p0``, ``step_amp``, ``dim`` (linear / pure-drift only).
    """
    p0 = float(params.pop("p0", 1.0))
    if name == "linear":
        dim = int(params.pop("dim", 1))
        field = _linear(dim, float(params.pop("rate", 1.0)),
                        float(params.pop("noise", 0.6)))
        q = 2.0
        meas = ReferenceMeasure(dim, _alpha_for(q, dim))
        fam = Family(name, field, q, p0, meas)
    elif name == "translation":
        field = _translation()
        fam = Family(name, field, 2.0, p0, ReferenceMeasure(1, 1.5))
    elif name == "pure-drift":
        dim = int(params.pop("dim", 1))
        field = _pure_drift(dim)
        q = 2.0
        fam = Family(name, field, q, p0, ReferenceMeasure(dim, _alpha_for(q, dim)))
    elif name == "log-singular":
        beta = float(params.pop("beta", 1.2))
        field = _log_singular(beta, float(params.pop("noise", 0.3)))
        q = 1.5
        fam = Family(name, field, q, p0, ReferenceMeasure(2, _alpha_for(q, 2)))
    elif name == "partially-sobolev":
        field = _partially_sobolev(float(params.pop("step_amp", 0.4)),
                                   float(params.pop("noise", 0.25)))
        q = 2.0
        alpha1 = _alpha_for(q, 1)                       # q + n1/2 + 0.5
        alpha = _alpha_for(q, 2, extra=alpha1 + 0.5)    # also > alpha1 + n2/2
        fam = Family(name, field, q, p0,
                     ReferenceMeasure(2, alpha), ReferenceMeasure(1, alpha1))
    elif name in ("deriv-linear", "deriv-smooth", "deriv-rough"):
        kind = name.split("-", 1)[1]
        field = _deriv_base(kind)
        q = 2.0
        d = 1
        alpha1 = q + d / 2.0 + 0.5
        fam = Family(name, field, q, p0, ReferenceMeasure(d, alpha1))
    else:
        raise ValueError(f"unknown family {name!r}; known: {', '.join(FAMILY_NAMES)}")
    if params:
        raise ValueError(f"unused family parameters: {sorted(params)}")
    return fam
