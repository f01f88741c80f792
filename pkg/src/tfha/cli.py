"""Command-line front end.

    tfha <analysis> <netlist> [--qoi Q] [--params P] [--samples-per-period N]
         [--err-tol E] [--k-start K] [--out DIR] [--format csv,json]
         [--config FILE]

Exit codes: 0 on success, 1 on user error, 2 when a solver does not
converge (partial outputs are still written where available).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .exceptions import NotConverged, SolverError, TfhaError
from .mna import MnaStructure
from .netlist import read_netlist, validate_circuit
from .sensitivity import SensitivityResult, TfhaConfig, make_qoi, tfha_run
from .spectral import HarmonicLadder, SpectralSolution, hb_forward_solve
from .transient import TransientConfig, TransientSolution, run_to_steady_state

logger = logging.getLogger(__name__)

ANALYSES = ("transient", "hb", "tfha", "validate")
FORMATS = ("csv", "json")

__all__ = ["RunConfig", "build_parser", "load_config_file", "emit_outputs", "main"]


@dataclass
class RunConfig:
    analysis: str
    netlist_path: str
    qoi: Optional[str] = None
    params: Optional[str] = None
    samples_per_period: int = 1024
    max_periods: int = 1000
    steady_tol: float = 1e-6
    newton_tol: float = 1e-9
    newton_max_iter: int = 50
    err_tol: float = 1e-3
    k_start: int = 8
    k_growth_factor: float = 2.0
    output_dir: str = "."
    formats: tuple = ("json",)

    def __post_init__(self):
        if self.analysis not in ANALYSES:
            raise ValueError(f"unknown analysis {self.analysis!r}")
        if isinstance(self.formats, str):
            self.formats = tuple(f.strip() for f in self.formats.split(",") if f.strip())
        bad = [f for f in self.formats if f not in FORMATS]
        if bad or not self.formats:
            raise ValueError(f"--format must be a subset of {{csv, json}}, got {self.formats!r}")
        if self.analysis == "tfha":
            if not self.qoi:
                raise ValueError("the tfha analysis needs --qoi")
            if not self.params:
                raise ValueError("the tfha analysis needs --params")

    def transient_config(self) -> TransientConfig:
        return TransientConfig(self.samples_per_period, self.max_periods, self.steady_tol,
                               self.newton_tol, self.newton_max_iter)

    def tfha_config(self) -> TfhaConfig:
        return TfhaConfig(self.k_start, self.k_growth_factor, self.err_tol,
                          self.transient_config())


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_ALIASES = {"out": "output_dir", "format": "formats", "netlist": "netlist_path"}


def _coerce(key, raw):
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


def load_config_file(path) -> dict:
    """Read a flat ``key = value`` file; ``#`` and ``;`` start comments."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read config file {str(path)!r}: {exc.strerror}") from None
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ValueError(f"malformed config file {str(path)!r}: {exc}") from None
    if parser.sections() != ["run"]:
        raise ValueError(f"config file {str(path)!r} must be flat key=value, without sections")
    out = {}
    for raw_key, raw in parser["run"].items():
        key = raw_key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in _FIELDS or key == "analysis":
            raise ValueError(f"unknown config key {raw_key!r} in {str(path)!r}")
        out[key] = _coerce(key, raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tfha", description="Periodic steady-state sensitivity analysis.")
    p.add_argument("analysis", choices=ANALYSES)
    p.add_argument("netlist")
    p.add_argument("--qoi", help='quantity of interest, e.g. "v(out)" or "i(L1)"')
    p.add_argument("--params", help='"all" or comma-separated device.param list')
    p.add_argument("--samples-per-period", type=int, dest="samples_per_period")
    p.add_argument("--err-tol", type=float, dest="err_tol")
    p.add_argument("--k-start", type=int, dest="k_start",
                   help="initial harmonic count (tfha) or harmonic count (hb)")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--format", dest="formats", help="csv, json or csv,json")
    p.add_argument("--config", help="flat key=value file; command-line flags win")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = load_config_file(args.config) if args.config else {}
    for key in ("qoi", "params", "samples_per_period", "err_tol", "k_start",
                "output_dir", "formats"):
        flag = getattr(args, key)
        if flag is not None:
            values[key] = flag
    return RunConfig(analysis=args.analysis, netlist_path=args.netlist, **values)


# --------------------------------------------------------------------------
# output


def _stem(analysis, qoi, extra=None):
    parts = [analysis, qoi or "all"]
    if extra:
        parts.append(extra)
    return "_".join(parts)


def _signals(qoi, mna):
    """Names and rows selected for a waveform or spectrum dump."""
    if qoi:
        sel = make_qoi(mna, qoi)
        return [qoi], sel.weights
    return list(mna.unknown_names), None


def emit_outputs(results, cfg: RunConfig, mna: Optional[MnaStructure] = None) -> list:
    """Write each result in every requested format; returns the paths written."""
    if results is None or (isinstance(results, (list, tuple)) and not results):
        logger.warning("no results to write")
        return []
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(results, TransientSolution):
        names, weights = _signals(cfg.qoi, mna)
        x = results.x_samples if weights is None else (weights @ results.x_samples)[None, :]
        stem = out_dir / _stem(cfg.analysis, cfg.qoi)
        if "csv" in cfg.formats:
            written.append(io.write_waveform_csv(stem.with_suffix(".csv"), results.t_grid, x, names))
        if "json" in cfg.formats:
            rec = io.waveform_record(cfg.analysis, names, results.t_grid, x,
                                     period=float(results.period),
                                     periods_run=int(results.periods_run),
                                     period_mismatch=float(results.period_mismatch))
            written.append(io.write_json(stem.with_suffix(".json"), rec))
        return written
    if isinstance(results, SpectralSolution):
        names, weights = _signals(cfg.qoi, mna)
        ph = results.phasors if weights is None else (weights @ results.phasors)[None, :]
        freqs = results.ladder.frequencies / (2.0 * np.pi)
        stem = out_dir / _stem(cfg.analysis, cfg.qoi)
        if "csv" in cfg.formats:
            written.append(io.write_spectrum_csv(stem.with_suffix(".csv"), freqs, ph, names))
        if "json" in cfg.formats:
            rec = {"schema": io.SCHEMA, "analysis": cfg.analysis, "names": names,
                   "freq_hz": [float(f) for f in freqs],
                   "phasors": [[[float(v.real), float(v.imag)] for v in row] for row in ph]}
            written.append(io.write_json(stem.with_suffix(".json"), rec))
        return written
    for res in results:
        if not isinstance(res, SensitivityResult):
            raise TypeError(f"cannot emit {type(res).__name__}")
        stem = out_dir / _stem(cfg.analysis, cfg.qoi, str(res.parameter))
        if "csv" in cfg.formats:
            n = len(res.time_series)
            t = np.arange(n) * (2.0 * np.pi / res.omega0 / n) if res.omega0 else np.zeros(n)
            written.append(io.write_sensitivity_csv(Path(f"{stem}.csv"), res, t))
        if "json" in cfg.formats:
            written.append(io.write_sensitivity_json(Path(f"{stem}.json"), res, cfg.analysis, cfg.qoi))
    return written


# --------------------------------------------------------------------------
# driver


def _run(cfg: RunConfig) -> int:
    try:
        circuit = read_netlist(cfg.netlist_path)
    except OSError as exc:
        print(f"error: cannot read netlist {cfg.netlist_path!r}: {exc.strerror}", file=sys.stderr)
        return 1
    diags = validate_circuit(circuit)
    if cfg.analysis == "validate":
        for d in diags:
            print(d)
        print(f"{len(diags)} diagnostics")
        return 0 if not diags else 1
    if diags:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        return 1

    mna = MnaStructure(circuit)
    if cfg.qoi:
        make_qoi(mna, cfg.qoi)
    if cfg.analysis == "transient":
        sol = run_to_steady_state(circuit, cfg.transient_config(), mna=mna)
        for path in emit_outputs(sol, cfg, mna):
            print(path)
    elif cfg.analysis == "hb":
        ladder = HarmonicLadder.from_period(circuit.fundamental_period, cfg.k_start)
        sol = hb_forward_solve(circuit, ladder, n_samples=cfg.samples_per_period)
        for path in emit_outputs(sol, cfg, mna):
            print(path)
    else:
        try:
            results = tfha_run(circuit, cfg.qoi, cfg.params, cfg.tfha_config())
        except NotConverged as exc:
            for path in emit_outputs(exc.results, cfg, mna):
                print(path)
            raise
        for path in emit_outputs(results, cfg, mna):
            print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    pkg_logger = logging.getLogger("tfha")
    pkg_logger.addHandler(handler)
    old_level = pkg_logger.level
    pkg_logger.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = resolve_config(args)
        return _run(cfg)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TfhaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 1
    finally:
        pkg_logger.removeHandler(handler)
        pkg_logger.setLevel(old_level)


if __name__ == "__main__":
    sys.exit(main())
