"""RIS-aided joint localization and clock-offset synchronization simulator.

Library layout:

* :mod:`risloc.model` -- geometry, channel model, observation synthesis.
* :mod:`risloc.bounds` -- Fisher information and PEB/CEB error bounds.
* :mod:`risloc.estimators` -- joint ML and relaxed (decoupled) estimators.
* :mod:`risloc.montecarlo` -- reproducible RMSE sweeps vs SNR and vs G.
* :mod:`risloc.cli` -- the ``risloc`` command-line frontend.
"""

__version__ = "0.1.0"

from ._kernels import ACTIVE_BACKEND
from .bounds import BoundsReport, SingularFim, compute_bounds, location_fim
from .estimators import (
    DegenerateGeometry,
    InsufficientTransmissions,
    JointMlEstimate,
    RankDeficient,
    RmlEstimate,
    ml_cost,
    ml_estimate,
    rml_cost,
    rml_estimate,
)
from .model import (
    ChannelParams,
    CoincidentNodesError,
    KnownRisPath,
    LocationParams,
    ObservationSet,
    PrecodingConfig,
    ScenarioConfig,
    default_precoding,
    geometry_to_params,
    steering_vector,
    synthesize,
)
from .montecarlo import ExperimentConfig, SweepResult, TrialRecord, run_trial, sweep_g, sweep_snr

__all__ = [
    "ACTIVE_BACKEND",
    "BoundsReport",
    "ChannelParams",
    "CoincidentNodesError",
    "DegenerateGeometry",
    "ExperimentConfig",
    "InsufficientTransmissions",
    "JointMlEstimate",
    "KnownRisPath",
    "LocationParams",
    "ObservationSet",
    "PrecodingConfig",
    "RankDeficient",
    "RmlEstimate",
    "ScenarioConfig",
    "SingularFim",
    "SweepResult",
    "TrialRecord",
    "__version__",
    "compute_bounds",
    "default_precoding",
    "geometry_to_params",
    "location_fim",
    "ml_cost",
    "ml_estimate",
    "rml_cost",
    "rml_estimate",
    "run_trial",
    "steering_vector",
    "sweep_g",
    "sweep_snr",
    "synthesize",
]
