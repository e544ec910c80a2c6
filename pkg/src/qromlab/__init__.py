"""Simulator and cryptanalysis toolkit for key agreement against a purified quantum random oracle."""

from .algebra import GroupSpec, cyclic
from .attack import AttackOutcome, full_attack, ind_cpa_game
from .learner import learn
from .oracle import OracleSpec, PartialOracle
from .pcc import compatible, is_goodstate, search_counterexample
from .qstate import DensityOperator, QuantumState, Register, RegisterLayout
from .zoo import standard_zoo

__version__ = "0.1.0"

__all__ = [
    "GroupSpec",
    "cyclic",
    "OracleSpec",
    "PartialOracle",
    "QuantumState",
    "DensityOperator",
    "Register",
    "RegisterLayout",
    "AttackOutcome",
    "full_attack",
    "ind_cpa_game",
    "learn",
    "compatible",
    "is_goodstate",
    "search_counterexample",
    "standard_zoo",
    "__version__",
]
