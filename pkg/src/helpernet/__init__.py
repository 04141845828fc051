"""helpernet: emergency ad hoc network stack with energy-efficient
backpressure routing, a CSMA/CA MAC with OAI piggybacking, a deterministic
discrete-event simulator and a live emulation bridge for the operator
dashboard."""

from .core import (
    AppType,
    BROADCAST,
    EnergyState,
    GeoPosition,
    HTL_MAX,
    HelperPacket,
    NeighborEntry,
    NodeId,
    Oai,
    PacketKind,
    TransmissionStrategy,
    distance,
    packet_airtime,
)
from .engine import World, run
from .mac import MacConfig, MacFsm, MacPhase, backoff_duration, harvest_oai, maybe_beacon
from .messages import AppMessage, MessageService, ResourceKind
from .metrics import MetricsLog
from .node import NodeState, Router
from .radio import DEFAULT_STRATEGY, LinkModel, Radio, tx_cost
from .routing import (
    FloodCache,
    RoutingQueues,
    greedy_next_hop,
    seek_next_hop,
    utility,
)
from .scenario import (
    Scenario,
    ScenarioError,
    canonical_grid,
    load_scenario,
    random_geometric_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

__version__ = "0.1.0"

__all__ = [
    "AppMessage", "AppType", "BROADCAST", "DEFAULT_STRATEGY", "EnergyState",
    "FloodCache", "GeoPosition", "HTL_MAX", "HelperPacket", "LinkModel",
    "MacConfig", "MacFsm", "MacPhase", "MessageService", "MetricsLog",
    "NeighborEntry", "NodeId", "NodeState", "Oai", "PacketKind", "Radio",
    "Router", "RoutingQueues", "Scenario", "ScenarioError",
    "TransmissionStrategy", "World", "backoff_duration", "canonical_grid",
    "distance", "greedy_next_hop", "harvest_oai", "load_scenario",
    "maybe_beacon", "packet_airtime", "random_geometric_scenario", "run",
    "scenario_from_dict", "scenario_to_dict", "seek_next_hop", "tx_cost",
    "utility",
]
