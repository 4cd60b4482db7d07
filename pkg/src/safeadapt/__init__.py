"""Safe adaptive reference governors for matched-uncertainty plants.

Core pieces: model-reference adaptive control with projected laws
(:mod:`.adapt_core`), high-order barrier chains (:mod:`.barrier`),
error-based safety buffers and filters (:mod:`.ebsb`, :mod:`.ebsf`),
adaptive-CBF baselines (:mod:`.baselines`), set-membership identification
(:mod:`.smid`), and a planar double-integrator benchmark with a
closed-loop simulator (:mod:`.scenario`, :mod:`.sim`).  A FastAPI service
(:mod:`.service`) and CLI (:mod:`.cli`) sit on top.
"""

from .scenario import Scenario, build_benchmark, builtin_scenarios, load_scenario
from .sim import METHODS, SimulationAborted, Trace, jitter_metric, run

__all__ = [
    "METHODS",
    "Scenario",
    "SimulationAborted",
    "Trace",
    "build_benchmark",
    "builtin_scenarios",
    "jitter_metric",
    "load_scenario",
    "run",
    "__version__",
]

__version__ = "0.1.0"
