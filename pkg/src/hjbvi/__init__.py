"""Monotone schemes and policy iteration for penalized nonlocal HJB variational inequalities."""
from .grid import Boundary, BoundaryRule, Lattice, TimePartition, UniformGrid
from .levy import LevyMeasure, choose_r, gamma1, gamma2, variance_gamma
from .driver import Driver, FluxParams, ObstacleSpec
from .policy import ControlGrid
from .scheme import Problem, SchemeConfig, Solution, check_cfl, run
from .models import EpsteinZinModel, InvestmentAmbiguityModel, build_problem
from .free_boundary import FreeBoundaryParams, NodeSet, estimate_C0, gamma_rho, hausdorff
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import convergence_table, increments, penalty_table, run_experiment

__version__ = "0.1.0"
