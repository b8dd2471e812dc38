"""Robust regularized zero-forcing for CoMP under distributed CSIT.

Deterministic (large-system) sum-rate equivalents, Monte-Carlo simulation
and robust regularization/power design for distributed RZF precoding.
"""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    DegenerateChannelError,
    FixedPointError,
    OptimizationError,
    PowerConstraintError,
    ScenarioError,
    SingularSystemError,
    SpecializationError,
)
from .scenario import (  # noqa: E402
    Scenario,
    csit_coefficients,
    example1_mapping,
    load_scenario,
    make_scenario,
    table_one,
    write_scenario,
)
from .channel import ChannelDraw, sample_channel  # noqa: E402
from .precoding import PrecoderParams, McEstimate, monte_carlo, rzf_precoder  # noqa: E402
from .detequiv import (  # noqa: E402
    DetEquivReport,
    closed_form_m_iso,
    iso_specializations,
    mu_from_per_tx_power,
    sinr_det_equiv,
    solve_fixed_point,
    theorem_terms,
)
from .optimizer import (  # noqa: E402
    joint_optimize,
    naive_alpha,
    optimize_common_alpha,
    optimize_per_tx_alpha,
    optimize_power,
)

__all__ = [
    "__version__",
    "ChannelDraw",
    "DegenerateChannelError",
    "DetEquivReport",
    "FixedPointError",
    "McEstimate",
    "OptimizationError",
    "PowerConstraintError",
    "PrecoderParams",
    "Scenario",
    "ScenarioError",
    "SingularSystemError",
    "SpecializationError",
    "closed_form_m_iso",
    "csit_coefficients",
    "example1_mapping",
    "iso_specializations",
    "joint_optimize",
    "load_scenario",
    "make_scenario",
    "monte_carlo",
    "mu_from_per_tx_power",
    "naive_alpha",
    "optimize_common_alpha",
    "optimize_per_tx_alpha",
    "optimize_power",
    "rzf_precoder",
    "sample_channel",
    "sinr_det_equiv",
    "solve_fixed_point",
    "table_one",
    "theorem_terms",
    "write_scenario",
]
