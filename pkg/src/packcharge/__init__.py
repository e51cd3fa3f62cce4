"""Reduced-order electrochemical battery-pack simulation and
balancing-aware charging.

Layers, bottom up:

- ``cell``: single-cell electrochemistry (solid/electrolyte diffusion,
  kinetics, ageing) as pure state-space functions.
- ``pack``: N cells plus a lumped thermal network; flat state vector.
- ``sim``: fixed-step RK4 integration of duty-cycled charge schedules
  (switched, sigmoid-smoothed and average duty modes) with CSV traces.
- ``protocols``: CC-CV and voltage-triggered-bypass charging baselines and
  the reference discharge capacity test.
- ``nmpc``: receding-horizon charge optimization over per-cell duty cycles
  and the shared branch current.
- ``scenario`` / ``cli``: YAML-driven study definitions and the command
  line front end.
"""

from .constants import FARADAY, GAS_CONSTANT
from .errors import (ConfigError, DomainError, PackchargeError,
                     ParameterError, ProtocolError, SolverError,
                     StateValidityError)

__version__ = "0.1.0"

__all__ = [
    "FARADAY", "GAS_CONSTANT",
    "PackchargeError", "ConfigError", "DomainError", "ParameterError",
    "ProtocolError", "SolverError", "StateValidityError",
    "__version__",
]
