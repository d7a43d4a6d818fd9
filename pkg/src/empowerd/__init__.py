"""Empowerment on discrete grid worlds.

Exact channel-capacity computation (Blahut-Arimoto and the deterministic
path-counting closed form), a stochastic variational approximation
trained directly from pixel observations, an importance-sampling
Monte-Carlo cross-check, and a greedy planner that uses empowerment as an
intrinsic reward.
"""

__version__ = "0.1.0"

from .gridworld import (
    Action,
    EnvState,
    EnumerationError,
    GridSpec,
    InvalidStateError,
    ascii_map,
    box_room,
    cross_room,
    empty_room,
    enumerate_states,
    initial_state,
    key_door,
    render,
    rollout,
    step,
    two_rooms,
)
from .channel import (
    CapacityResult,
    DiscreteChannel,
    ba_step_from_variational,
    blahut_arimoto,
    build_channel,
    mutual_information,
    path_count_empowerment,
    terminal_marginal,
    variational_bound,
)
from .svim import (
    ExperienceBatch,
    SVIMConfig,
    SVIMModels,
    decoder_loss,
    empowerment_estimate,
    energy,
    exact_variational_reference,
    source_loss,
    svim_train,
)
from .particles import ISConfig, ParticleSet, distortion, init_particles, is_capacity, weight_update
from .plan import (
    EmpowermentMap,
    GreedyPolicy,
    ba_estimator,
    compute_map,
    greedy_action,
    path_count_estimator,
    run_agent,
    variational_estimator,
)

__all__ = [name for name in dir() if not name.startswith("_")]
