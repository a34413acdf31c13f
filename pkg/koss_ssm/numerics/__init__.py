"""
Numerical substrate: FFT, matrix exponential, linear solves and RK4.
"""

from koss_ssm.numerics.fft import fft, ifft
from koss_ssm.numerics.linalg import mat_exp, solve_linear, symmetrize
from koss_ssm.numerics.ode import rk4_step
