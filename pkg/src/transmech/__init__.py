"""Driven transmon coupled to two mechanical resonators: full Lindblad
simulation, dressed-model reduction, and entanglement / non-Gaussianity
measures."""

__version__ = "0.1.0"

from . import dynamics, errors, fock, measures, model, scenarios
from .dynamics import IntegratorConfig, Trajectory, integrate
from .fock import FockLayout
from .measures import MeasureRecord, measure_record
from .model import EffectiveSystem, FullSystem, SystemParams
from .scenarios import ScenarioConfig, load_config, run_scenario
