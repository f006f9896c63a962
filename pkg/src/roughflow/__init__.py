"""roughflow: generalized stochastic flows of Ito SDEs with weakly
differentiable coefficients.

A numpy/scipy library for constructing, simulating and verifying flows of

    dX_t = sigma(X_t) dB_t + b(X_t) dt

under polynomial-weight reference measures, when sigma and b are only
Sobolev, partially Sobolev, or locally unbounded.  The toolkit covers bump
mollification of coefficients, pathwise Radon-Nikodym density tracking,
level-set / stability / entropy estimators, local and partial maximal
functions with weighted-integral inequalities, and the coupled system
defining the weak derivative of the flow with respect to its initial data.
"""

from ._seeds import derive_rng, derive_seed
from .catalog import FAMILY_NAMES, Family, make_family
from .coefficients import (
    CoefficientField,
    MollifierSpec,
    StructuredCoefficient,
    block_condition_integrals,
    condition_integrals,
    density_drift_term,
    density_noise_term,
    gradient_contraction,
    gradient_contraction_split,
    mollified_convergence,
    mollifier_domination_check,
    mollify,
    mollify_structured,
    scaled_drift,
    scaled_sigma,
)
from .density import (
    DensityTrack,
    density_bound_rhs,
    entropy,
    kde_crosscheck,
    lp_density_norm,
    select_t0,
    sup_lp_density_norm,
    track_density,
    uniform_density_bound,
)
from .flow import (
    BrownianDriver,
    FlowEnsemble,
    compose_time_shift,
    convergence_metric,
    integrate,
    level_set_tail,
)
from .measure import InfiniteMassError, MonteCarloEstimate, ReferenceMeasure

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
