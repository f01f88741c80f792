"""Modified nodal analysis: matrix assembly, sources, devices and parameter stamps.

Residual convention used everywhere in the package::

    F(x, t) = A_C x' + A_G(t) x - i_nl(x) - i_s(t) = 0

``i_nl`` holds currents *injected* into nodes by nonlinear devices, so the
conductive Jacobian is ``J_G = A_G - d i_nl / d x``.  Unknowns are the
non-ground node voltages in netlist order followed by the branch currents
of inductors and voltage sources.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import NonFiniteState, UnknownParameter
from .netlist import GROUND, Circuit, Kind, ParameterRef

__all__ = [
    "MnaStructure",
    "SourceVector",
    "NonlinearEval",
    "ParamStamps",
    "assemble_static",
    "eval_sources",
    "eval_nonlinear",
    "param_stamps",
    "diode_current",
    "switch_conductance",
]


def diode_current(v, i_sat, n_vt):
    """Shockley diode with linear continuation above the critical voltage.

    The exponent is capped at ``v_crit = nVt*ln(nVt/(Is*sqrt(2)))``; beyond
    it the characteristic continues along its tangent, so current and
    conductance stay C1.  Returns ``(i_d, g_d)``.
    """
    v = np.asarray(v, dtype=float)
    v_crit = n_vt * np.log(n_vt / (i_sat * math.sqrt(2.0)))
    arg = np.minimum(v, v_crit) / n_vt
    e = np.exp(arg)
    g = i_sat / n_vt * e
    i = i_sat * (e - 1.0) + g * np.maximum(v - v_crit, 0.0)
    return i, g


def switch_conductance(s, ron, roff):
    """Conductance for control ``s`` in [0, 1], log-linear between 1/Roff and 1/Ron.

    Interpolating the logarithm spreads the on/off transition over the
    whole ramp; a linear blend would stay near 1/Ron until the last few
    percent of the ramp and switch almost instantaneously.
    """
    s = np.asarray(s, dtype=float)
    return (1.0 / roff) * (roff / ron) ** s


@dataclass(frozen=True)
class _RonModulation:
    # dg/dRon = -s*g/Ron, written as s*g*Ron times the on-state stamp -1/Ron**2
    control: Callable
    ron: float
    roff: float

    def __call__(self, t):
        s = np.asarray(self.control(t), dtype=float)
        return s * switch_conductance(s, self.ron, self.roff) * self.ron


@dataclass(frozen=True)
class SourceVector:
    values: np.ndarray


@dataclass(frozen=True)
class NonlinearEval:
    i_nl: np.ndarray
    g_nl: sp.csr_matrix


@dataclass(frozen=True)
class ParamStamps:
    """Derivatives of the system matrices with respect to one parameter.

    ``modulation`` is None for time-invariant devices.  For a switch it is
    a waveform ``m(t)`` with ``dA_G/dp(t) = m(t) * d_a_g``; ``m = 1`` while
    the switch is fully on.
    """

    d_a_c: sp.csr_matrix
    d_a_g: sp.csr_matrix
    modulation: Optional[Callable] = None

    def is_zero(self) -> bool:
        return self.d_a_c.count_nonzero() == 0 and self.d_a_g.count_nonzero() == 0


def _pair(ia, ib):
    """Two-terminal conductance pattern (+1 diagonal, -1 off-diagonal) without ground."""
    entries = [(ia, ia, 1.0), (ia, ib, -1.0), (ib, ia, -1.0), (ib, ib, 1.0)]
    return [(r, c, s) for r, c, s in entries if r >= 0 and c >= 0]


def _coo(entries, dim):
    if not entries:
        return sp.csr_matrix((dim, dim))
    r, c, v = zip(*entries)
    return sp.csr_matrix((v, (r, c)), shape=(dim, dim))


class MnaStructure:
    """Static MNA matrices plus the index tables used by the solvers.

    ``a_g`` and ``a_c`` exclude switches, whose conductance is time
    dependent; use :meth:`a_g_at` for the full conductive matrix.
    """

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        nodes = circuit.unknown_nodes
        node_index = {n: i for i, n in enumerate(nodes)}
        node_index[GROUND] = -1
        branches = [d for d in circuit.devices if d.is_branch]
        self.n_nodes = len(nodes)
        self.n_branches = len(branches)
        self.dim = self.n_nodes + self.n_branches
        self.unknown_names = [f"v({n})" for n in nodes] + [f"i({d.name})" for d in branches]
        self.unknown_map = {name: i for i, name in enumerate(self.unknown_names)}
        self.branch_index = {
            d.name: self.n_nodes + k for k, d in enumerate(branches)
        }
        self.node_index = node_index

        g_entries, c_entries = [], []
        self._stamps = {}
        sources = []
        diodes = []
        switches = []
        for dev in circuit.devices:
            ia, ib = (node_index[t] for t in dev.terminals)
            kind = dev.kind
            if kind is Kind.RESISTOR:
                pat = _pair(ia, ib)
                g_entries += [(r, c, s / dev.params["value"]) for r, c, s in pat]
                self._stamps[dev.name] = ("g", pat)
            elif kind is Kind.CAPACITOR:
                pat = _pair(ia, ib)
                c_entries += [(r, c, s * dev.params["value"]) for r, c, s in pat]
                self._stamps[dev.name] = ("c", pat)
            elif kind in (Kind.INDUCTOR, Kind.VOLTAGE_SOURCE):
                j = self.branch_index[dev.name]
                for node, s in ((ia, 1.0), (ib, -1.0)):
                    if node >= 0:
                        g_entries += [(node, j, s), (j, node, s)]
                if kind is Kind.INDUCTOR:
                    c_entries.append((j, j, -dev.params["value"]))
                    self._stamps[dev.name] = ("l", [(j, j, -1.0)])
                else:
                    sources.append((dev.waveform, [(j, 1.0)]))
            elif kind is Kind.CURRENT_SOURCE:
                sources.append(
                    (dev.waveform, [(n, s) for n, s in ((ia, -1.0), (ib, 1.0)) if n >= 0])
                )
            elif kind is Kind.DIODE:
                p = dev.params
                diodes.append((ia, ib, p["is"], p["n"] * p["vt"]))
            elif kind is Kind.SWITCH:
                pat = _pair(ia, ib)
                switches.append((dev, pat))
                self._stamps[dev.name] = ("s", pat)

        self.a_g = _coo(g_entries, self.dim)
        self.a_c = _coo(c_entries, self.dim)
        self._sources = sources
        self._init_diodes(diodes)
        self._init_switches(switches)

    # -- devices ---------------------------------------------------------

    def _init_diodes(self, diodes):
        ground = self.dim  # index of the appended zero in an extended state
        self.n_diodes = len(diodes)
        self._d_a = np.array([ground if d[0] < 0 else d[0] for d in diodes], dtype=int)
        self._d_k = np.array([ground if d[1] < 0 else d[1] for d in diodes], dtype=int)
        self._d_is = np.array([d[2] for d in diodes], dtype=float)
        self._d_nvt = np.array([d[3] for d in diodes], dtype=float)
        rows, cols, sign, dev = [], [], [], []
        irow, isign, idev = [], [], []
        for j, (ia, ik, _, _) in enumerate(diodes):
            # i_d flows anode -> cathode: injected -i_d at the anode, +i_d at the cathode
            for r, c, s in _pair(ia, ik):
                rows.append(r)
                cols.append(c)
                sign.append(-s)
                dev.append(j)
            for n, s in ((ia, -1.0), (ik, 1.0)):
                if n >= 0:
                    irow.append(n)
                    isign.append(s)
                    idev.append(j)
        self.nl_rows = np.array(rows, dtype=int)
        self.nl_cols = np.array(cols, dtype=int)
        self._nl_sign = np.array(sign, dtype=float)
        self._nl_dev = np.array(dev, dtype=int)
        self._i_rows = np.array(irow, dtype=int)
        self._i_sign = np.array(isign, dtype=float)
        self._i_dev = np.array(idev, dtype=int)

    def _init_switches(self, switches):
        self.switch_devices = [dev for dev, _ in switches]
        rows, cols, sign, idx = [], [], [], []
        for j, (_, pat) in enumerate(switches):
            for r, c, s in pat:
                rows.append(r)
                cols.append(c)
                sign.append(s)
                idx.append(j)
        self.sw_rows = np.array(rows, dtype=int)
        self.sw_cols = np.array(cols, dtype=int)
        self._sw_sign = np.array(sign, dtype=float)
        self._sw_idx = np.array(idx, dtype=int)

    @property
    def is_linear(self) -> bool:
        return self.n_diodes == 0

    @property
    def is_time_invariant(self) -> bool:
        return not self.switch_devices

    def diode_voltages(self, x):
        """Junction voltages; ``x`` may be (dim,) or (dim, N)."""
        x = np.asarray(x, dtype=float)
        ext = np.concatenate([x, np.zeros((1,) + x.shape[1:])], axis=0)
        return ext[self._d_a] - ext[self._d_k]

    def nonlinear(self, x):
        """Return ``(i_nl, g_vals)`` with ``g_vals`` aligned to ``nl_rows/nl_cols``.

        Works on a single state (dim,) or on samples (dim, N).
        """
        x = np.asarray(x, dtype=float)
        if self.n_diodes == 0:
            return np.zeros(x.shape), np.zeros((0,) + x.shape[1:])
        vd = self.diode_voltages(x)
        shape = (-1,) + (1,) * (x.ndim - 1)
        i_d, g_d = diode_current(vd, self._d_is.reshape(shape), self._d_nvt.reshape(shape))
        i_nl = np.zeros(x.shape)
        np.add.at(i_nl, self._i_rows, self._i_sign.reshape(shape) * i_d[self._i_dev])
        g_vals = self._nl_sign.reshape(shape) * g_d[self._nl_dev]
        return i_nl, g_vals

    def switch_conductance(self, t):
        """Conductance of every switch at ``t``; shape (n_switch,) + t.shape."""
        t = np.asarray(t, dtype=float)
        out = np.empty((len(self.switch_devices),) + t.shape)
        for j, dev in enumerate(self.switch_devices):
            out[j] = switch_conductance(dev.waveform(t), dev.params["ron"], dev.params["roff"])
        return out

    def switch_values(self, t):
        """Switch stamp values aligned to ``sw_rows/sw_cols``."""
        g = self.switch_conductance(t)
        shape = (-1,) + (1,) * np.ndim(t)
        return self._sw_sign.reshape(shape) * g[self._sw_idx]

    def a_g_at(self, t: float) -> sp.csr_matrix:
        if self.is_time_invariant:
            return self.a_g
        extra = sp.csr_matrix(
            (self.switch_values(t), (self.sw_rows, self.sw_cols)), shape=(self.dim, self.dim)
        )
        return (self.a_g + extra).tocsr()

    def sources(self, t):
        """Source vector at ``t`` (scalar) or samples (dim, N) for an array."""
        t = np.asarray(t, dtype=float)
        out = np.zeros((self.dim,) + t.shape)
        for wf, rows in self._sources:
            value = wf(t)
            for r, s in rows:
                out[r] += s * value
        return out

    # -- parameters ------------------------------------------------------

    def stamps(self, p: ParameterRef) -> ParamStamps:
        try:
            dev = self.circuit.device(p.device_name)
        except KeyError:
            raise UnknownParameter(f"no device named {p.device_name!r}") from None
        entry = self._stamps.get(dev.name)
        allowed = {"g": "value", "c": "value", "l": "value", "s": "ron"}
        if entry is None or allowed[entry[0]] != p.param_name:
            raise UnknownParameter(f"{dev.name}.{p.param_name} is not a design parameter")
        tag, pat = entry
        zero = sp.csr_matrix((self.dim, self.dim))
        if tag == "g":
            scale = -1.0 / dev.params["value"] ** 2
            return ParamStamps(zero, _coo([(r, c, s * scale) for r, c, s in pat], self.dim))
        if tag in ("c", "l"):
            return ParamStamps(_coo(pat, self.dim), zero)
        ron, roff = dev.params["ron"], dev.params["roff"]
        scale = -1.0 / ron**2
        return ParamStamps(
            zero,
            _coo([(r, c, s * scale) for r, c, s in pat], self.dim),
            _RonModulation(dev.waveform, ron, roff),
        )


def assemble_static(c: Circuit) -> MnaStructure:
    return MnaStructure(c)


def eval_sources(c, t: float) -> SourceVector:
    mna = c if isinstance(c, MnaStructure) else MnaStructure(c)
    return SourceVector(mna.sources(float(t)))


def eval_nonlinear(c, x) -> NonlinearEval:
    mna = c if isinstance(c, MnaStructure) else MnaStructure(c)
    x = np.asarray(x, dtype=float)
    if x.shape != (mna.dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({mna.dim},)")
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("state vector contains non-finite entries")
    i_nl, g_vals = mna.nonlinear(x)
    g = sp.csr_matrix((g_vals, (mna.nl_rows, mna.nl_cols)), shape=(mna.dim, mna.dim))
    return NonlinearEval(i_nl, g)


def param_stamps(c, p: ParameterRef) -> ParamStamps:
    mna = c if isinstance(c, MnaStructure) else MnaStructure(c)
    return mna.stamps(p)
