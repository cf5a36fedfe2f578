"""Trajectory-vocabulary BEV planner with a rule-metric oracle and learned scorer."""

__version__ = "0.1.0"

from .core import BevGridSpec, EgoState, Scene, Trajectory, Waypoint  # noqa: F401
from .oracle import FinalScoreWeights, MetricVector  # noqa: F401
from .vocabulary import Vocabulary  # noqa: F401
