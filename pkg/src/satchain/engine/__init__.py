"""Simulation core: placements and the DP-side transition, plus the online slot simulator."""
from .config import SystemConfig
from .placement import (REJECT, CostModel, InvalidPlacement, Placement, SystemState, check_constraints,
                        placement_cost, resource_usage, transition)
from .sim import (TRACE_FIELDS, BufferedRequest, RunStats, Simulator, Transition, action_name,
                  discounted_request_cost, execute_action, instant_cost, reject_action, serving_rate,
                  valid_actions)

__all__ = [
    "SystemConfig", "REJECT", "CostModel", "InvalidPlacement", "Placement", "SystemState",
    "check_constraints", "placement_cost", "resource_usage", "transition", "TRACE_FIELDS",
    "BufferedRequest", "RunStats", "Simulator", "Transition", "action_name", "discounted_request_cost",
    "execute_action", "instant_cost", "reject_action", "serving_rate", "valid_actions",
]
