"""Synthetic tasks, training loops, metrics, diagnostic suites, and the CLI."""

from .metrics import CalibrationResult, calibration_report, pearson
from .model import MLPModel
from .suites import distcheck_suite, gradcheck_suite, variance_compare
from .tasks import SyntheticTask, generate_example, generate_split, task_support
from .training import RunConfig, TrialRecord, evaluate, train
