"""Federated learning with mixtures of shared linear components."""
from .data import ClientDataset, Federation
from .em import ComponentBank, SolverConfig, e_step, local_sgd_theta, m_step_pi
from .errors import ConfigError, ContractViolation, ConvergenceError, DatasetLoadError, FedMixError, InputError
from .losses import LinearHypothesis, LossKind
from .metrics import EvalReport, cluster_assignment_accuracy, mixture_accuracy, recovery_distance
from .surrogate import (
    FedEMObjective,
    QuadraticObjective,
    SurrogateObjective,
    run_decentralized_surrogate,
    run_federated_surrogate,
)
from .synth import GroundTruth, SyntheticConfig, generate, load_federation, save_federation
from .topology import Graph, StaticSchedule, make_schedule, metropolis_weights
from .training import RoundLog, personalize_unseen, train_dfedem, train_fedavg, train_fedem, train_local

__version__ = "0.1.0"

__all__ = [
    "ClientDataset",
    "ComponentBank",
    "ConfigError",
    "ContractViolation",
    "ConvergenceError",
    "DatasetLoadError",
    "EvalReport",
    "FedEMObjective",
    "FedMixError",
    "Federation",
    "Graph",
    "GroundTruth",
    "InputError",
    "LinearHypothesis",
    "LossKind",
    "QuadraticObjective",
    "RoundLog",
    "SolverConfig",
    "StaticSchedule",
    "SurrogateObjective",
    "SyntheticConfig",
    "cluster_assignment_accuracy",
    "e_step",
    "generate",
    "load_federation",
    "local_sgd_theta",
    "m_step_pi",
    "make_schedule",
    "metropolis_weights",
    "mixture_accuracy",
    "personalize_unseen",
    "recovery_distance",
    "run_decentralized_surrogate",
    "run_federated_surrogate",
    "save_federation",
    "train_dfedem",
    "train_fedavg",
    "train_fedem",
    "train_local",
]
