"""Sensorless speed, armature temperature and resistance estimation for brushed DC motors.

A cascade-forward network trained with BFGS maps measured armature voltage
and current to speed, temperature rise and armature resistance. Training data
come from an RK4 simulation of the motor's electro-thermal model.
"""

from .bfgs import TrainConfig, bfgs_update, minimize, newton_step, train, wolfe_line_search
from .cfnn import CfnnModel, CfnnTopology, forward, gradient, init_weights, param_count, sse_loss, tansig
from .estimator import ExperimentConfig, EvalReport, Thresholds, evaluate, run_experiment
from .motor_model import (MotorInput, MotorParams, MotorState, calibrate, default_params,
                          derivatives, heat_dissipation, power_losses, resistance, steady_state)
from .simulator import DutyProfile, Trajectory, add_awgn, integrate_rk4, make_dataset

__version__ = "0.1.0"
