"""Exact absorbing-chain analysis of elitist evolutionary algorithms and their population scalability."""
from .model import (
    Instance,
    InstanceError,
    PopulationState,
    build_knapsack_instance,
    build_tabular_instance,
    deceptive_knapsack,
    high_set,
    onemax_knapsack,
)
from .operators import (
    MutationKernel,
    SelectionRule,
    bitwise_rejection_mutation,
    elitist_proportional_selection,
    elitist_truncation_selection,
    mix_with_global,
    mutation_mass,
    replicate_best_selection,
    tabular_mutation,
)
from .chain import (
    CapExceeded,
    TransitionSystem,
    build_lumped_chain,
    build_one_plus_one_chain,
    build_population_chain,
)

__version__ = "0.1.0"
from .instances import BUILTINS, Problem, builtin
from .spectral import analyze, hitting_vector, spectral_radius
from .scalability import (
    bridge_analysis,
    check_prop2_conditions,
    check_theorem2,
    check_theorem3,
    check_theorem4_necessary,
    rho_scalability,
    scalability_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
