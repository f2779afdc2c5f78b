"""Consensus Kalman filtering with partial state sharing under Byzantine perturbations."""
from .errors import BRCDFError, ConfigError, ConvergenceError, GraphError, NumericalError
from .model import NetworkGraph, ObservationModel, StateSpaceModel, build_network, bench_model, stream
from .selection import SelectionSchedule, advance, init_schedule
from .filtering import consensus_gain, gamma_bound, kalman_gain, riccati_step, steady_state_covariance
from .attack import AttackPlan, bcd_design, byzantine_set, design_covariance
from .simulation import Scenario, run_network

__version__ = "0.1.0"
