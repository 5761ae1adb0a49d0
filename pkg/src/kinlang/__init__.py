"""Kinetic Langevin sampling with energy-thresholded symplectic steps, plus
weak-error and invariant-measure analysis tools for singular potentials."""

__version__ = "0.1.0"

from .analysis import (
    ErrorReport,
    GeneratorCheckReport,
    ReferenceSolution,
    analytic_mean_linear,
    apply_generator,
    fit_order,
    gibbs_moment,
    invariant_bias_curve,
    richardson,
    sample_gibbs_quadratic,
    stationarity_check,
    weak_error_curve,
)
from .errors import (
    ConfigError,
    DomainError,
    EscapedDomain,
    EscapedEnsembleError,
    InsufficientSignalError,
    InvalidInputError,
    KinlangError,
)
from .observables import Observable, PolynomialObservable, make_observable
from .potentials import (
    CompositePotential,
    DoubleWellPotential,
    HarmonicPotential,
    LennardJonesConfined,
    Potential,
    State,
    assumption_diagnostics,
    hamiltonian,
    make_potential,
    probe_ladder,
)
from .sampler import (
    CloudInit,
    EnsembleResult,
    ExpMomentCurve,
    RunSpec,
    derive_stream,
    ergodic_average,
    exp_moment,
    log_trend,
    run_ensemble,
    tail_probability,
)
from .scheme import (
    DEFAULT_ESCAPE_ENERGY,
    LyapunovParams,
    SchemeParams,
    StepOutcome,
    lyapunov,
    lyapunov_drift_probe,
    propose,
    step_stopped,
    step_unstopped,
    threshold,
)

__all__ = [name for name in dir() if not name.startswith("_")]
