"""Distilling per-instance optimisation into one-shot trajectory policies."""
from .energy import IkEnergy, KtoEnergy
from .kinematics import ChainSpec, fk_jacobian, forward_kinematics
from .policy import PolicyNet, init_policy, load_policy, policy_actions, save_policy
from .problems import Problem, planar_ik, planar_kto
from .sampling import SampleDomain, detect_conflicts, poisson_disk_sample_n
from .solver import GNCounter, solve, step_gauss_newton
from .training import TrainConfig, TrainLog, train

__version__ = "0.1.0"
