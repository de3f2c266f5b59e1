"""Dissipativity certificates and supply-rate allocation for interconnected LTI systems.

The package certifies performance of a large interconnection by handing
each subsystem its own quadratic supply rate: admissibility of such an
allocation, the closest admissible one, capacity-bounded joint supplies
for groups of subsystems, and a consensus negotiation that splits the
work per subsystem.  Single-system analysis and output-feedback
synthesis (the tools those allocations are made of) are exposed too, as
is a JSON problem/report surface under the ``iqcalloc`` console script.
"""

from .admm import AdmmState, admm_solve
from .analysis import (
    StorageCertificate,
    certify_stability,
    dissipation_residual,
    iqc_analysis,
    l2_gain_bisect,
)
from .errors import IqcAllocError
from .grouping import GroupLocalization, GroupMatrix, group_localize
from .interconnect import (
    Interconnection,
    LocalProblemSet,
    gac_matrix,
    gac_quadratic,
)
from .localization import (
    Localization,
    closest_localization,
    localization_distance,
    localization_gap,
    masked_localization,
)
from .lti import (
    Controller,
    Signal,
    StateSpace,
    close_loop,
    energy,
    freq_gain_oracle,
    probe_signal,
    simulate,
)
from .multipliers import (
    Multiplier,
    QuadMultiplier,
    StabilityCertificate,
    check_stability_multiplier,
    constant_quad,
    l2gain_quad,
    passivity,
)
from .problem_io import ProblemFile, Report, load_problem, load_report
from .synthesis import SynthesisResult, bisect_gamma, synthesize

__version__ = "0.1.0"

__all__ = [
    "AdmmState",
    "Controller",
    "GroupLocalization",
    "GroupMatrix",
    "Interconnection",
    "IqcAllocError",
    "LocalProblemSet",
    "Localization",
    "Multiplier",
    "ProblemFile",
    "QuadMultiplier",
    "Report",
    "Signal",
    "StabilityCertificate",
    "StateSpace",
    "StorageCertificate",
    "SynthesisResult",
    "admm_solve",
    "bisect_gamma",
    "certify_stability",
    "check_stability_multiplier",
    "close_loop",
    "closest_localization",
    "constant_quad",
    "dissipation_residual",
    "energy",
    "freq_gain_oracle",
    "gac_matrix",
    "gac_quadratic",
    "group_localize",
    "iqc_analysis",
    "l2_gain_bisect",
    "l2gain_quad",
    "load_problem",
    "load_report",
    "localization_distance",
    "localization_gap",
    "masked_localization",
    "passivity",
    "probe_signal",
    "simulate",
    "synthesize",
]
