"""Data-driven robust H2 control via lifted linear predictors.

The toolkit fits linear predictors of nonlinear plants in a lifted
observable space, wraps the fit-to-fit variability of multiple datasets
into a polytopic vertex model, and synthesizes a single static feedback
gain with a certified worst-vertex H2 bound through LMI optimization on
a built-in dense interior-point solver.
"""

from .dynamics import (
    DuffingPlant,
    KdVPlant,
    LinearPlant,
    NoiseSpec,
    PlantState,
    Trajectory,
    simulate_closed_loop,
)
from .edmd import LinearPredictor, SnapshotDataset, SnapshotMatrices, assemble, fit_predictor
from .observables import (
    ObservableDictionary,
    dictionary_from_descriptor,
    identity_dictionary,
    monomial_dictionary,
    monomials_deg2,
    probe_dictionary,
)
from .polytope import PolytopeModel, build_polytope, convex_combine, entry_stats
from .sdp import LMIConstraint, MatrixVariable, SDPSolution, min_eig, solve
from .synthesis import (
    GeneralizedPlant,
    H2Certificate,
    SynthesisOptions,
    SynthesisResult,
    evaluate_h2_bound,
    h2_lyapunov,
    lqr_gain,
    nominal_synthesis,
    robust_synthesis,
    spectral_radius,
)
from .experiments import (
    ExperimentConfig,
    collect_datasets,
    duffing_config,
    kdv_config,
    l2_metric,
    run_experiment,
    vertex_prediction_report,
)

__version__ = "0.1.0"

__all__ = [
    "DuffingPlant",
    "KdVPlant",
    "LinearPlant",
    "NoiseSpec",
    "PlantState",
    "Trajectory",
    "simulate_closed_loop",
    "LinearPredictor",
    "SnapshotDataset",
    "SnapshotMatrices",
    "assemble",
    "fit_predictor",
    "ObservableDictionary",
    "dictionary_from_descriptor",
    "identity_dictionary",
    "monomial_dictionary",
    "monomials_deg2",
    "probe_dictionary",
    "PolytopeModel",
    "build_polytope",
    "convex_combine",
    "entry_stats",
    "LMIConstraint",
    "MatrixVariable",
    "SDPSolution",
    "min_eig",
    "solve",
    "GeneralizedPlant",
    "H2Certificate",
    "SynthesisOptions",
    "SynthesisResult",
    "evaluate_h2_bound",
    "h2_lyapunov",
    "lqr_gain",
    "nominal_synthesis",
    "robust_synthesis",
    "spectral_radius",
    "ExperimentConfig",
    "collect_datasets",
    "duffing_config",
    "kdv_config",
    "l2_metric",
    "run_experiment",
    "vertex_prediction_report",
]
