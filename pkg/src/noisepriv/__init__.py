"""Privacy analysis of noise-adding average consensus."""

__version__ = "0.1.0"

from .consensus import (Graph, NoiseSchedule, ScheduleKind, Trace, load_trace,
                        metropolis_weights, random_connected_graph, run_paca, save_trace,
                        telescope)
from .distributions import (CandidateSet, DomainSet, Kind, NoiseDistribution, shaded_area,
                            shift_reflect, stationary_set)
from .errors import ArgumentError, StateError
from .estimation import (EstimationResult, KnowledgeRegime, attack_full_knowledge,
                         estimate_k, estimate_k0, extract_info_set, residuals)
from .privacy import (AccurateNoiseSet, PrivacyReport, Scenario, accurate_noise_set,
                      compare_noise_families, delta_general, delta_monte_carlo,
                      delta_upper_bound_k, delta_whole_line)

__all__ = [
    "AccurateNoiseSet", "ArgumentError", "CandidateSet", "DomainSet", "EstimationResult",
    "Graph", "Kind", "KnowledgeRegime", "NoiseDistribution", "NoiseSchedule", "PrivacyReport",
    "Scenario", "ScheduleKind", "StateError", "Trace", "accurate_noise_set",
    "attack_full_knowledge", "compare_noise_families", "delta_general", "delta_monte_carlo",
    "delta_upper_bound_k", "delta_whole_line", "estimate_k", "estimate_k0", "extract_info_set",
    "load_trace", "metropolis_weights", "random_connected_graph", "residuals", "run_paca",
    "save_trace", "shaded_area", "shift_reflect", "stationary_set", "telescope",
]
