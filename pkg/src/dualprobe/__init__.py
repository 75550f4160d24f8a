"""Dual-timescale in-band network telemetry: probe path planning, simulation and analysis."""

from .appd import Plan, check_plan, plan_auxiliary_paths
from .baselines import PLANNERS, plan_dfs, plan_euler, plan_latency_constrained
from .dppd import PolicyModel, build_instance, decode, load_model, save_model
from .metrics import TelemetryTask, compute_metrics, weighted_revenue
from .topo import Topology, gen_random_topology, select_service_network

__version__ = "0.1.0"

__all__ = [
    "Plan", "check_plan", "plan_auxiliary_paths", "PLANNERS", "plan_dfs", "plan_euler",
    "plan_latency_constrained", "PolicyModel", "build_instance", "decode", "load_model", "save_model",
    "TelemetryTask", "compute_metrics", "weighted_revenue", "Topology", "gen_random_topology",
    "select_service_network",
]
