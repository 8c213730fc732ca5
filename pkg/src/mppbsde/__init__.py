"""Numerical BSDEs driven by marked point processes with a deterministic
compensator: simulation, lattice solvers, mean reflection and property
checks."""

__version__ = "0.1.0"

from .drivers import (  # noqa: E402
    Driver,
    GrowthParams,
    SamplePlan,
    SearchSpec,
    TerminalCondition,
    clamp_driver,
    clamp_terminal,
    inf_convolution,
    j_lambda,
    make_driver,
    regularized_driver,
    shift_driver,
    verify_structure,
)
from .lattice import (  # noqa: E402
    ContractionError,
    LatticeError,
    LatticeModel,
    TimeGrid,
    ValueField,
    closed_form_zero_driver,
    entropic_closed_form,
    forward_law,
    forward_residual,
    sample_trajectory,
    solve_backward,
    transition_kernel,
)
from .mpp import (  # noqa: E402
    CompensatorSpec,
    MarkSpace,
    Modulus,
    MppPath,
    PredictableField,
    SpecError,
    integral_nu,
    integral_p,
    integral_q,
    simulate_path,
    simulate_paths,
)
from .reflection import (  # noqa: E402
    LossFunction,
    make_loss,
    operator_L,
    picard_horizon,
    running_sup_reflect,
    skorokhod_report,
    solve_reflected,
    validate_loss,
)
from .scenario import Scenario, ScenarioError, builtin_scenario, load_scenario, parse_scenario  # noqa: E402
