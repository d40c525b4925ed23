"""Touch-based robot base self-calibration with a particle filter."""
from .se3 import Pose6, PoseSE3
from .config import load_config
from .experiment import RunResult, run_once, run_sweep

__all__ = ["Pose6", "PoseSE3", "load_config", "RunResult", "run_once", "run_sweep"]
__version__ = "0.1.0"
