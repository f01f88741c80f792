"""SPICE-subset netlist parsing, validation and serialization.

The grammar accepts R, C, L, V, I, D and S cards plus the ``.period`` and
``.end`` directives; see ``docs/netlist-grammar.md``.  Anything else is a
hard error.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .exceptions import (
    DuplicateName,
    NetlistSyntaxError,
    UnknownDeviceKind,
    UnknownParameter,
)

__all__ = [
    "Kind",
    "Dc",
    "Sin",
    "Pulse",
    "Pwm",
    "Device",
    "Circuit",
    "ParameterRef",
    "Diagnostic",
    "parse_value",
    "parse_netlist",
    "read_netlist",
    "validate_circuit",
    "list_parameters",
    "to_netlist",
]

GROUND = "0"

DIODE_DEFAULTS = {"is": 1e-12, "n": 1.0, "vt": 0.025852}


class Kind(enum.Enum):
    RESISTOR = "R"
    CAPACITOR = "C"
    INDUCTOR = "L"
    VOLTAGE_SOURCE = "V"
    CURRENT_SOURCE = "I"
    DIODE = "D"
    SWITCH = "S"


# --------------------------------------------------------------------------
# waveforms


def _exact(value: float) -> Fraction:
    # shortest round-trip decimal of the parsed float, as an exact rational
    return Fraction(repr(float(value)))


def _fmt(value: float) -> str:
    return repr(float(value))


@dataclass(frozen=True)
class Dc:
    value: float

    period = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.value))
        return out if out.ndim else float(out)

    def cycles_in(self, period: float) -> Optional[Fraction]:
        return None

    def to_text(self) -> str:
        return f"DC {_fmt(self.value)}"


@dataclass(frozen=True)
class Sin:
    """``offset + amplitude*sin(2*pi*freq*t + phase)``, phase in degrees."""

    offset: float
    amplitude: float
    freq: float
    phase: float = 0.0

    @property
    def period(self) -> float:
        return 1.0 / self.freq

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.offset + self.amplitude * np.sin(
            2.0 * math.pi * self.freq * t + math.radians(self.phase)
        )
        return out if np.ndim(out) else float(out)

    def cycles_in(self, period: float) -> Fraction:
        return _exact(period) * _exact(self.freq)

    def to_text(self) -> str:
        args = (self.offset, self.amplitude, self.freq, self.phase)
        return "SIN(" + " ".join(_fmt(a) for a in args) + ")"


def _trapezoid(tau, v1, v2, rise, width, fall):
    t_on = rise + width
    t_off = t_on + fall
    up = v1 + (v2 - v1) * tau / (rise if rise > 0 else 1.0)
    down = v2 - (v2 - v1) * (tau - t_on) / (fall if fall > 0 else 1.0)
    return np.select(
        [tau < rise, tau < t_on, tau < t_off],
        [up, np.full_like(tau, v2), down],
        default=v1,
    )


@dataclass(frozen=True)
class Pulse:
    """SPICE PULSE, evaluated periodically for all t (including t < delay)."""

    v1: float
    v2: float
    delay: float
    rise: float
    fall: float
    width: float
    period: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tau = np.mod(t - self.delay, self.period)
        out = _trapezoid(tau, self.v1, self.v2, self.rise, self.width, self.fall)
        return out if out.ndim else float(out)

    def cycles_in(self, period: float) -> Fraction:
        return _exact(period) / _exact(self.period)

    def to_text(self) -> str:
        args = (self.v1, self.v2, self.delay, self.rise, self.fall, self.width, self.period)
        return "PULSE(" + " ".join(_fmt(a) for a in args) + ")"


@dataclass(frozen=True)
class Pwm:
    """Switch control in [0, 1] with linear rise/fall ramps.

    The plateau is shortened by half of each ramp so the time average
    equals ``duty``.
    """

    duty: float
    period: float
    rise: float
    fall: float
    delay: float = 0.0

    @property
    def width(self) -> float:
        return self.duty * self.period - 0.5 * (self.rise + self.fall)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tau = np.mod(t - self.delay, self.period)
        out = _trapezoid(tau, 0.0, 1.0, self.rise, self.width, self.fall)
        return out if out.ndim else float(out)

    def cycles_in(self, period: float) -> Fraction:
        return _exact(period) / _exact(self.period)

    def to_text(self) -> str:
        args = (self.duty, self.period, self.rise, self.fall, self.delay)
        return "PWM(" + " ".join(_fmt(a) for a in args) + ")"


Waveform = Union[Dc, Sin, Pulse, Pwm]


# --------------------------------------------------------------------------
# circuit model


@dataclass(frozen=True)
class Device:
    name: str
    kind: Kind
    terminals: tuple
    params: dict = field(default_factory=dict)
    waveform: Optional[Waveform] = None

    @property
    def is_branch(self) -> bool:
        """Devices that carry an explicit branch current unknown."""
        return self.kind in (Kind.INDUCTOR, Kind.VOLTAGE_SOURCE)


@dataclass(frozen=True)
class ParameterRef:
    device_name: str
    param_name: str
    nominal_value: float

    def __str__(self):
        return f"{self.device_name}.{self.param_name}"


@dataclass(frozen=True)
class Circuit:
    """Parsed circuit. Treat as immutable; use :meth:`with_value` to vary it."""

    title: str
    nodes: tuple
    devices: tuple
    fundamental_period: float

    @property
    def unknown_nodes(self) -> tuple:
        return tuple(n for n in self.nodes if n != GROUND)

    def device(self, name: str) -> Device:
        key = name.upper()
        for dev in self.devices:
            if dev.name.upper() == key:
                return dev
        raise KeyError(name)

    def parameter(self, spec) -> ParameterRef:
        """Resolve ``"R1.value"`` (or a ParameterRef) against this circuit."""
        if isinstance(spec, ParameterRef):
            dev_name, pname = spec.device_name, spec.param_name
        else:
            dev_name, _, pname = str(spec).partition(".")
            pname = pname or "value"
        try:
            dev = self.device(dev_name)
        except KeyError:
            raise UnknownParameter(f"no device named {dev_name!r}") from None
        pname = pname.lower()
        if pname not in dev.params:
            raise UnknownParameter(f"device {dev.name} has no parameter {pname!r}")
        return ParameterRef(dev.name, pname, float(dev.params[pname]))

    def with_value(self, spec, value: float) -> "Circuit":
        ref = self.parameter(spec)
        devices = tuple(
            replace(d, params={**d.params, ref.param_name: float(value)})
            if d.name == ref.device_name
            else d
            for d in self.devices
        )
        return replace(self, devices=devices)

    def has_nonlinear(self) -> bool:
        return any(d.kind is Kind.DIODE for d in self.devices)

    def has_switch(self) -> bool:
        return any(d.kind is Kind.SWITCH for d in self.devices)


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    subject: str
    message: str = ""

    def __str__(self):
        return f"{self.rule}({self.subject}): {self.message}"


# --------------------------------------------------------------------------
# parsing

_NUMBER = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[kmunp])?$", re.IGNORECASE
)
_SCALE = {"k": "1e3", "m": "1e-3", "u": "1e-6", "n": "1e-9", "p": "1e-12", "meg": "1e6"}
_CALL = re.compile(r"([A-Za-z]+)\s*\(([^()]*)\)")

_KIND_BY_LETTER = {k.value: k for k in Kind}
_SOURCE_ARITY = {"SIN": (3, 4), "PULSE": (7, 7)}


def parse_value(token: str) -> float:
    """Parse a number with an optional SPICE scale suffix (k m u n p meg)."""
    m = _NUMBER.match(token.strip())
    if not m:
        raise ValueError(f"not a number: {token!r}")
    # scale in decimal so "100u" becomes the double nearest to 1e-4
    value = Decimal(m.group(1))
    if m.group(2):
        value *= Decimal(_SCALE[m.group(2).lower()])
    return float(value)


def _numbers(tokens, lineno):
    try:
        return [parse_value(t) for t in tokens]
    except ValueError as exc:
        raise NetlistSyntaxError(str(exc), lineno) from None


def _split_call(line, lineno):
    """Return (tokens, (func, args) or None) for one card."""
    m = _CALL.search(line)
    if m is None:
        if "(" in line or ")" in line:
            raise NetlistSyntaxError("unbalanced parenthesis", lineno)
        return line.split(), None
    rest = line[: m.start()] + " " + line[m.end():]
    if "(" in rest or ")" in rest:
        raise NetlistSyntaxError("more than one waveform descriptor", lineno)
    args = [a for a in re.split(r"[\s,]+", m.group(2).strip()) if a]
    return rest.split(), (m.group(1).upper(), args)


def _keywords(tokens, allowed, lineno):
    out = {}
    for tok in tokens:
        key, eq, val = tok.partition("=")
        if not eq:
            raise NetlistSyntaxError(f"expected KEY=VALUE, got {tok!r}", lineno)
        key = key.lower()
        if key not in allowed:
            raise NetlistSyntaxError(f"unknown keyword {key.upper()!r}", lineno)
        out[key] = _numbers([val], lineno)[0]
    return out


def _source_waveform(tokens, call, lineno):
    if call is not None:
        func, args = call
        if tokens:
            raise NetlistSyntaxError("unexpected tokens around waveform", lineno)
        if func not in _SOURCE_ARITY:
            raise NetlistSyntaxError(f"unknown source function {func}", lineno)
        lo, hi = _SOURCE_ARITY[func]
        if not lo <= len(args) <= hi:
            raise NetlistSyntaxError(f"{func} takes {lo}..{hi} arguments", lineno)
        vals = _numbers(args, lineno)
        return Sin(*vals) if func == "SIN" else Pulse(*vals)
    if len(tokens) == 2 and tokens[0].upper() == "DC":
        tokens = tokens[1:]
    if len(tokens) != 1:
        raise NetlistSyntaxError("source needs a value, DC, SIN(...) or PULSE(...)", lineno)
    return Dc(_numbers(tokens, lineno)[0])


def _parse_card(line, lineno):
    tokens, call = _split_call(line, lineno)
    name = tokens[0]
    kind = _KIND_BY_LETTER.get(name[0].upper())
    if kind is None:
        raise UnknownDeviceKind(f"unsupported device {name!r}", lineno)
    if len(tokens) < 3:
        raise NetlistSyntaxError(f"{name}: expected two nodes", lineno)
    terminals = tuple(tokens[1:3])
    rest = tokens[3:]

    if kind in (Kind.RESISTOR, Kind.CAPACITOR, Kind.INDUCTOR):
        if call is not None or len(rest) != 1:
            raise NetlistSyntaxError(f"{name}: expected exactly one value", lineno)
        return Device(name, kind, terminals, {"value": _numbers(rest, lineno)[0]})
    if kind in (Kind.VOLTAGE_SOURCE, Kind.CURRENT_SOURCE):
        return Device(name, kind, terminals, {}, _source_waveform(rest, call, lineno))
    if kind is Kind.DIODE:
        if call is not None:
            raise NetlistSyntaxError(f"{name}: diodes take no waveform", lineno)
        params = dict(DIODE_DEFAULTS)
        params.update(_keywords(rest, DIODE_DEFAULTS, lineno))
        return Device(name, kind, terminals, params)
    # switch
    if call is None or call[0] != "PWM":
        raise NetlistSyntaxError(f"{name}: switch needs a PWM(...) control", lineno)
    params = _keywords(rest, ("ron", "roff"), lineno)
    if set(params) != {"ron", "roff"}:
        raise NetlistSyntaxError(f"{name}: switch needs RON= and ROFF=", lineno)
    args = call[1]
    if not 4 <= len(args) <= 5:
        raise NetlistSyntaxError("PWM takes 4..5 arguments", lineno)
    return Device(name, kind, terminals, params, Pwm(*_numbers(args, lineno)))


def parse_netlist(text: str) -> Circuit:
    """Parse netlist text into a :class:`Circuit`.

    The first line is the title. ``*`` starts a comment line, ``;`` an
    inline comment, ``.end`` stops parsing.
    """
    lines = text.splitlines()
    if not lines:
        raise NetlistSyntaxError("empty netlist", 1)
    title = lines[0].strip()
    devices = []
    seen = {}
    period = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split(";", 1)[0].strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("."):
            words = line.split()
            directive = words[0].lower()
            if directive == ".end":
                break
            if directive == ".period":
                if len(words) != 2:
                    raise NetlistSyntaxError(".period takes one value", lineno)
                period = _numbers(words[1:], lineno)[0]
                continue
            raise NetlistSyntaxError(f"unsupported directive {words[0]}", lineno)
        dev = _parse_card(line, lineno)
        key = dev.name.upper()
        if key in seen:
            raise DuplicateName(
                f"duplicate device name {dev.name!r} (first on line {seen[key]})", lineno
            )
        seen[key] = lineno
        devices.append(dev)

    nodes = [GROUND]
    for dev in devices:
        for node in dev.terminals:
            if node not in nodes:
                nodes.append(node)
    if period is None:
        periods = [d.waveform.period for d in devices if d.waveform is not None]
        periods = [p for p in periods if p is not None]
        period = max(periods) if periods else 1.0
    return Circuit(title, tuple(nodes), tuple(devices), float(period))


def read_netlist(path) -> Circuit:
    with open(path, encoding="utf-8") as fh:
        return parse_netlist(fh.read())


# --------------------------------------------------------------------------
# validation


def _positive(diags, dev, names):
    for pname in names:
        value = dev.params[pname]
        if not (value > 0 and math.isfinite(value)):
            diags.append(
                Diagnostic("NonPositiveParameter", dev.name, f"{pname}={value!r} must be > 0")
            )


def _check_waveform(diags, dev, period):
    wf = dev.waveform
    if isinstance(wf, Sin) and not wf.freq > 0:
        diags.append(Diagnostic("InvalidWaveform", dev.name, "SIN frequency must be > 0"))
        return
    if isinstance(wf, (Pulse, Pwm)):
        if not wf.period > 0 or wf.rise < 0 or wf.fall < 0:
            diags.append(
                Diagnostic("InvalidWaveform", dev.name, "period must be > 0, ramps >= 0")
            )
            return
        width = wf.width
        if width < 0 or wf.rise + width + wf.fall > wf.period:
            diags.append(
                Diagnostic("InvalidWaveform", dev.name, "ramps and width exceed the period")
            )
            return
    if isinstance(wf, Pwm) and not 0.0 <= wf.duty <= 1.0:
        diags.append(Diagnostic("InvalidWaveform", dev.name, "duty must lie in [0, 1]"))
        return
    ratio = wf.cycles_in(period) if period > 0 else None
    if ratio is not None and (ratio.denominator != 1 or ratio < 1):
        diags.append(
            Diagnostic(
                "Incommensurate",
                dev.name,
                f"waveform period does not divide the fundamental period {period!r}",
            )
        )


def validate_circuit(c: Circuit) -> list:
    """Return a list of :class:`Diagnostic`; empty means the circuit is usable."""
    diags = []
    if not c.fundamental_period > 0:
        diags.append(
            Diagnostic("NonPositivePeriod", "circuit", f"period={c.fundamental_period!r}")
        )
    seen = set()
    for dev in c.devices:
        key = dev.name.upper()
        if key in seen:
            diags.append(Diagnostic("DuplicateName", dev.name, "device names must be unique"))
        seen.add(key)
        for node in dev.terminals:
            if node not in c.nodes:
                diags.append(Diagnostic("UnknownNode", dev.name, f"node {node!r}"))
        if dev.kind in (Kind.RESISTOR, Kind.CAPACITOR, Kind.INDUCTOR):
            _positive(diags, dev, ["value"])
        elif dev.kind is Kind.DIODE:
            _positive(diags, dev, ["is", "vt"])
            if not dev.params["n"] >= 1.0:
                diags.append(
                    Diagnostic("InvalidParameter", dev.name, f"n={dev.params['n']!r} must be >= 1")
                )
        elif dev.kind is Kind.SWITCH:
            _positive(diags, dev, ["ron", "roff"])
        if dev.waveform is not None:
            _check_waveform(diags, dev, c.fundamental_period)

    adjacency = {n: set() for n in c.nodes}
    for dev in c.devices:
        a, b = dev.terminals
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)
    reached = {GROUND}
    stack = [GROUND]
    while stack:
        for nxt in adjacency.get(stack.pop(), ()):
            if nxt not in reached:
                reached.add(nxt)
                stack.append(nxt)
    for node in c.nodes:
        if node not in reached:
            diags.append(Diagnostic("FloatingNode", node, "no path to ground"))
    return diags


def list_parameters(c: Circuit) -> list:
    """Design parameters: element values of R, C, L and the switch on-resistance."""
    owned = {
        Kind.RESISTOR: ("value",),
        Kind.CAPACITOR: ("value",),
        Kind.INDUCTOR: ("value",),
        Kind.SWITCH: ("ron",),
    }
    refs = []
    for dev in c.devices:
        for pname in sorted(owned.get(dev.kind, ())):
            refs.append(ParameterRef(dev.name, pname, float(dev.params[pname])))
    return refs


def resolve_parameters(c: Circuit, specs: Union[str, Sequence]) -> list:
    """Turn ``"all"`` or a list of ``"dev.param"`` strings into ParameterRefs."""
    if isinstance(specs, str):
        if specs.strip().lower() == "all":
            return list_parameters(c)
        specs = [s for s in re.split(r"[\s,]+", specs) if s]
    return [c.parameter(s) for s in specs]


# --------------------------------------------------------------------------
# serialization


def to_netlist(c: Circuit) -> str:
    """Serialize back to netlist text; ``parse_netlist`` inverts this exactly."""
    lines = [c.title]
    for dev in c.devices:
        head = f"{dev.name} {dev.terminals[0]} {dev.terminals[1]}"
        if dev.kind in (Kind.RESISTOR, Kind.CAPACITOR, Kind.INDUCTOR):
            lines.append(f"{head} {_fmt(dev.params['value'])}")
        elif dev.kind in (Kind.VOLTAGE_SOURCE, Kind.CURRENT_SOURCE):
            lines.append(f"{head} {dev.waveform.to_text()}")
        elif dev.kind is Kind.DIODE:
            kw = " ".join(f"{k.upper()}={_fmt(dev.params[k])}" for k in DIODE_DEFAULTS)
            lines.append(f"{head} {kw}")
        else:
            lines.append(
                f"{head} RON={_fmt(dev.params['ron'])} ROFF={_fmt(dev.params['roff'])} "
                f"{dev.waveform.to_text()}"
            )
    lines.append(f".period {_fmt(c.fundamental_period)}")
    lines.append(".end")
    return "\n".join(lines) + "\n"
