"""Input coercion shared by the estimator and the command line."""

from __future__ import annotations

import numbers
import os
from pathlib import Path

from .exceptions import NetlistError
from .netlist import Circuit, parse_netlist, read_netlist, validate_circuit


def check_circuit(obj, validate: bool = True) -> Circuit:
    """Accept a Circuit, a netlist path or netlist text and return a Circuit.

    Strings containing a newline are parsed as netlist text; anything else
    is treated as a path. With ``validate`` the first diagnostic is raised.
    """
    if isinstance(obj, Circuit):
        circuit = obj
    elif isinstance(obj, (str, os.PathLike)):
        text = os.fspath(obj)
        circuit = parse_netlist(text) if "\n" in text else read_netlist(Path(text))
    else:
        raise TypeError(f"expected a Circuit, a path or netlist text, got {type(obj).__name__}")
    if validate:
        diags = validate_circuit(circuit)
        if diags:
            raise NetlistError("; ".join(str(d) for d in diags))
    return circuit


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonnegative(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {value!r}")
    if not value >= 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_params(params):
    """``"all"``, a comma-separated string or a sequence of ``"dev.param"``."""
    if isinstance(params, str):
        if not params.strip():
            raise ValueError("params must not be empty")
        return params
    params = list(params)
    if not params or not all(isinstance(p, str) for p in params):
        raise ValueError("params must be 'all' or a non-empty list of 'device.param' strings")
    return params
