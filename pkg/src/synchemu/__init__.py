"""Synchronous-machine emulation toolkit.

Second-order oscillator metrics, the four-condition emulation checker, and a
WSCC 9-bus workbench (power flow, DAE simulation, small-signal analysis) with
a converter-interfaced generator.
"""

from .analysis import (
    Characterization,
    EmulationReport,
    Thresholds,
    eigen_analysis,
    electromechanical_modes,
    emulation_report,
    linearize_system,
)
from .errors import NumericalError, SynchEmuError, ValidationError
from .files import bundled_network, bundled_scenario, read_network, read_scenario
from .network import Network, build_ybus, solve_power_flow
from .oscillator import LinearOscillator, OscillatorParams, metrics, preset, step_response
from .simulation import Scenario, TimedEvent, prepare, run, scenario_from_file

__version__ = "0.1.0"
