"""Periodic steady-state sensitivities of switched and nonlinear circuits.

A transient simulation finds the steady state; its period FFT feeds a
harmonic-balance adjoint that yields sensitivities to all parameters
from one factorization.
"""

from .circuits import load_fixture
from .estimator import TfhaSensitivity
from .exceptions import *  # noqa: F401,F403
from .mna import MnaStructure, assemble_static, param_stamps
from .netlist import (
    Circuit,
    ParameterRef,
    list_parameters,
    parse_netlist,
    read_netlist,
    resolve_parameters,
    to_netlist,
    validate_circuit,
)
from .sensitivity import (
    SensitivityResult,
    TfhaConfig,
    fd_oracle,
    hb_adjoint_sensitivity,
    hb_adjoint_solve,
    hb_direct_sensitivity,
    make_qoi,
    relative_error,
    tfha_run,
    transient_dsa,
)
from .spectral import (
    HarmonicLadder,
    SpectralSolution,
    assemble_hb_jacobian,
    fft_period,
    hb_forward_solve,
    reconstruct_time,
    spectrum,
)
from .transient import TransientConfig, TransientSolution, run_to_steady_state

__version__ = "0.1.0"
