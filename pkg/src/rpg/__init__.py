"""Policy-gradient dialog and control agents with importance-weighted experience replay."""
from .episodes import Episode, ReplayBuffer, compute_returns
from .harness import ExperimentConfig, LearningCurve, run_experiment, run_training
from .learners import METHODS, MethodConfig, train_step
from .nets import PolicyNetwork, ValueNetwork
from .nn_core import (CheckpointError, ConfigurationError, GradientSet, Network, NumericError,
                      ParameterSet, load_params, save_params)

__version__ = "0.1.0"
