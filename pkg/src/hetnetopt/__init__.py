"""Joint user-association and activation-fraction optimization for HetNet downlinks."""

__version__ = "0.1.0"

from .model import (ChannelGains, ScenarioConfig, Topology, UtilityConfig,
                    generate_topology, load_instance, save_instance,
                    uniform_weights)
from .rate import (ActivationVector, GainMatrix, RateAllocation, RateMatrix,
                   conservative_rate, kkt_gamma, rate_matrix, system_utility,
                   theta_matrix)
from .setfn import Association, LoadVector, g_value, marginal_add, marginal_swap
from .gls import BoundCertificate, GlsConfig, gls, greedy_bound, greedy_stage, \
    local_search_bound, local_search_stage
from .distsim import (DistLsConfig, ProtocolTrace, distributed_greedy,
                      distributed_ls, restricted_greedy)
