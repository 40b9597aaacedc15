"""Distributed frequency control in power grids under limited communication.

Simulation of the coupled grid/controller dynamics (continuous, sampled and
degraded messaging), closed-form optimal dispatch, and small-signal
stability certification of the closed loop.
"""
from .controllers import (
    ControlContext,
    PowerAdjacencyError,
    consensus_rate,
    consensus_sampled_rate,
    hybrid_single_failure_rate,
    init_artificial,
    multi_failure_rate,
    pair_flow_rate,
    sequential_active_link,
)
from .dispatch import DispatchResult, cost_of, optimal_dispatch
from .kernels import BACKEND as KERNEL_BACKEND
from .model import (
    CONTINUOUS,
    CommGraph,
    DisturbanceEvent,
    Line,
    NodeParams,
    PowerGrid,
    Scenario,
    ScenarioFormatError,
    SystemState,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    toy_grid,
    validate,
    with_overrides,
)
from .simulator import (
    IntegrationError,
    RunSummary,
    ScenarioError,
    Trajectory,
    convergence_time,
    derivative,
    first_crossing_time,
    integrate,
    run_scenario,
    write_trajectory_csv,
)
from .stability import (
    IdentityReport,
    SpectrumReport,
    StateMatrix,
    assemble_state_matrix,
    build_Lc_star,
    characteristic_identity_check,
    check_sufficient_multi_node,
    check_sufficient_two_node,
    spectrum,
)

__version__ = "0.1.0"
