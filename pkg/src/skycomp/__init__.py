"""UAV cooperative multipoint uplink: rate bounds, placement optimization, planners."""
from .errors import (ConfigError, InfeasibleError, NonConvergenceError, NumericalDegeneracyError,
                     NumericalError, SingularChannelError)
from .scenario import EpisodeTracks, ScenarioConfig

__version__ = "0.1.0"
