"""
Tape autodiff, Adam and the training loop.
"""

from koss_ssm.train.autodiff import Tape, Var, backward
from koss_ssm.train.loop import TrainResult, train_loop
from koss_ssm.train.optim import AdamState, adam_step
