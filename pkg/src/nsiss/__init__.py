""" This package checks input-to-state stability certificates of state-dependent switched systems with nonsmooth
Lyapunov functions, composes certificates of interconnections, and simulates Filippov solutions.

Comparison functions live in nsiss.kfun and mode/input classes in nsiss.switched (both define Linear and Constant).
"""

from .config import config, Config
from .errors import *
from . import kfun, partition, switched, nonsmooth, certify, compose, linmat, scenario, test
from .partition import ProperPartition, Region, LinearForm, QuadraticForm, active_indices
from .switched import SwitchedSystem, hull_vertices, sliding_combination, simulate
from .nonsmooth import PiecewiseC1Fn, PiecewiseQuadratic, clarke_interval, lie_interval, continuity_check
from .certify import (ISSCertificate, DissipationCertificate, SamplePlan, CheckReport, check_main_iss,
                      check_switched_iss, check_dissipation, trajectory_check)
from .compose import SubsystemCertificate, small_gain_compose, cascade_compose
