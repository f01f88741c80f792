"""CSV and JSON writers for waveforms, spectra and sensitivity results.

Floats are written with ``repr`` (shortest round-trip form) and every
record has a fixed field order, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

SCHEMA = "tfha/1"

__all__ = [
    "SCHEMA",
    "write_waveform_csv",
    "write_spectrum_csv",
    "sensitivity_record",
    "write_sensitivity_json",
    "write_sensitivity_csv",
    "waveform_record",
    "write_json",
]


def _num(value):
    value = float(value)
    return None if not math.isfinite(value) else value


def _text(value) -> str:
    return repr(float(value))


def write_waveform_csv(path, t_grid, samples, names) -> Path:
    """One row per sample; header ``t,<names...>``."""
    path = Path(path)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names])
        for i, t in enumerate(np.asarray(t_grid, dtype=float)):
            w.writerow([_text(t)] + [_text(v) for v in samples[:, i]])
    return path


def write_spectrum_csv(path, frequencies_hz, phasors, names) -> Path:
    """One row per harmonic; header ``k,freq_hz,<name>_re,<name>_im,...``."""
    path = Path(path)
    phasors = np.atleast_2d(np.asarray(phasors, dtype=complex))
    header = ["k", "freq_hz"]
    for n in names:
        header += [f"{n}_re", f"{n}_im"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, f in enumerate(np.asarray(frequencies_hz, dtype=float)):
            row = [str(k), _text(f)]
            for v in phasors[:, k]:
                row += [_text(v.real), _text(v.imag)]
            w.writerow(row)
    return path


def sensitivity_record(result, analysis: str, qoi: str) -> dict:
    """JSON-ready dict for one SensitivityResult, in a fixed key order."""
    spec = np.asarray(result.spectrum, dtype=complex)
    return {
        "schema": SCHEMA,
        "analysis": analysis,
        "qoi": qoi,
        "device": result.parameter.device_name,
        "param": result.parameter.param_name,
        "nominal_value": float(result.parameter.nominal_value),
        "k_used": int(result.k_used),
        "est_rel_error": _num(result.est_rel_error),
        "fundamental_hz": float(result.omega0 / (2.0 * math.pi)),
        "spectrum": [[float(v.real), float(v.imag)] for v in spec],
        "time_series": [float(v) for v in np.asarray(result.time_series, dtype=float)],
    }


def write_json(path, record) -> Path:
    path = Path(path)
    text = json.dumps(record, indent=1, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_sensitivity_json(path, result, analysis: str, qoi: str) -> Path:
    return write_json(path, sensitivity_record(result, analysis, qoi))


def write_sensitivity_csv(path, result, t_grid) -> Path:
    """Long format: spectrum rows then time rows.

    Columns are ``series,index,abscissa,re,im``; ``series`` is
    ``spectrum`` (abscissa in Hz) or ``time`` (abscissa in s, im = 0).
    """
    path = Path(path)
    spec = np.asarray(result.spectrum, dtype=complex)
    f0 = result.omega0 / (2.0 * math.pi)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "index", "abscissa", "re", "im"])
        for k, v in enumerate(spec):
            w.writerow(["spectrum", str(k), _text(k * f0), _text(v.real), _text(v.imag)])
        for i, (t, v) in enumerate(zip(t_grid, result.time_series)):
            w.writerow(["time", str(i), _text(t), _text(v), _text(0.0)])
    return path


def waveform_record(analysis: str, names, t_grid, samples, **extra) -> dict:
    rec = {"schema": SCHEMA, "analysis": analysis}
    rec.update({k: _num(v) if isinstance(v, float) else v for k, v in extra.items()})
    rec["names"] = list(names)
    rec["t"] = [float(v) for v in t_grid]
    rec["x"] = [[float(v) for v in row] for row in np.asarray(samples, dtype=float)]
    return rec
