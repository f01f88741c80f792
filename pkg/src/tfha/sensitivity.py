"""Sensitivities of a quantity of interest with respect to circuit parameters.

Routes:

* harmonic-balance direct (one linear solve per parameter),
* harmonic-balance adjoint (one factorization, reused for every parameter),
* the transient-forward / harmonic-adjoint refinement loop (:func:`tfha_run`),
* transient direct sensitivity and central finite differences as oracles.
"""

from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la

from .exceptions import (
    NoSteadyState,
    NotConverged,
    ShapeMismatch,
    SingularIterationMatrix,
    UnknownTarget,
    ZeroFineNorm,
)
from .mna import MnaStructure, ParamStamps
from .netlist import Circuit, ParameterRef, resolve_parameters
from .spectral import (
    HarmonicLadder,
    HbSystem,
    SpectralSolution,
    _grid_values,
    assemble_hb_jacobian,
    fft_period,
    reconstruct_time,
    spectrum,
)
from .transient import (
    TransientConfig,
    TransientSolution,
    TrapezoidIntegrator,
    detect_periodicity,
    run_to_steady_state,
)

logger = logging.getLogger(__name__)

__all__ = [
    "QoiSelector",
    "AdjointSolution",
    "SensitivityResult",
    "TfhaConfig",
    "make_qoi",
    "qoi_rhs",
    "stamp_rhs",
    "project",
    "hb_direct_sensitivity",
    "hb_adjoint_solve",
    "hb_adjoint_sensitivity",
    "relative_error",
    "tfha_run",
    "transient_dsa",
    "fd_oracle",
]


# --------------------------------------------------------------------------
# quantity of interest


@dataclass(frozen=True)
class QoiSelector:
    target: str
    weights: np.ndarray

    def __call__(self, x_samples):
        return self.weights @ np.asarray(x_samples)


_QOI = re.compile(r"^\s*([vViI])\s*\(\s*([^,()\s]+)\s*(?:,\s*([^,()\s]+)\s*)?\)\s*$")


def make_qoi(mna: MnaStructure, target: str) -> QoiSelector:
    """Build a selector from ``v(node)``, ``v(a,b)`` or ``i(device)``."""
    m = _QOI.match(target)
    if m is None:
        raise UnknownTarget(f"cannot parse quantity of interest {target!r}")
    w = np.zeros(mna.dim)
    kind, a, b = m.group(1).lower(), m.group(2), m.group(3)
    if kind == "v":
        for node, sign in ((a, 1.0), (b, -1.0)):
            if node is None or node == "0":
                continue
            idx = mna.node_index.get(node)
            if idx is None:
                raise UnknownTarget(f"unknown node {node!r}")
            w[idx] += sign
    else:
        if b is not None:
            raise UnknownTarget(f"branch current takes one device: {target!r}")
        match = [n for n in mna.branch_index if n.upper() == a.upper()]
        if not match:
            raise UnknownTarget(f"{a!r} has no branch current (only L and V devices do)")
        w[mna.branch_index[match[0]]] = 1.0
    return QoiSelector(target.strip(), w)


def qoi_rhs(sel: QoiSelector, ladder: HarmonicLadder) -> np.ndarray:
    """Stacked functional with the selector weights in every harmonic block."""
    return np.tile(np.asarray(sel.weights, dtype=complex), ladder.size)


def project(sel: QoiSelector, stacked, dim: Optional[int] = None) -> np.ndarray:
    """Per-harmonic QoI of a stacked phasor vector."""
    stacked = np.asarray(stacked)
    dim = dim or len(sel.weights)
    return stacked.reshape(-1, dim) @ sel.weights


# --------------------------------------------------------------------------
# HB direct / adjoint


def stamp_rhs(stamps: ParamStamps, spec: SpectralSolution) -> np.ndarray:
    """Stacked ``(dA/dp) X``; block k is ``(j k w0 dA_C + dA_G) X_k``.

    A modulated (switch) stamp is applied as a product in time on the
    grid the phasors came from, matching the conversion matrices.
    """
    phasors = spec.phasors
    w = spec.ladder.frequencies
    if stamps.modulation is None:
        out = stamps.d_a_g @ phasors
    else:
        n = spec.n_samples or max(8, 1 << int(np.ceil(np.log2(4 * spec.ladder.size))))
        t = np.arange(n) * (spec.ladder.period / n)
        x_t = _grid_values(phasors, n)
        out = spectrum(stamps.modulation(t)[None, :] * (stamps.d_a_g @ x_t), spec.ladder.k_max)
    out = out + 1j * w[None, :] * (stamps.d_a_c @ phasors)
    return out.T.reshape(-1)


def hb_direct_sensitivity(sys: HbSystem, spec: SpectralSolution, stamps: ParamStamps,
                          factorization=None) -> np.ndarray:
    """Stacked ``dX/dp`` from ``J dX/dp = -(dA/dp) X``.

    Uses the system's cached factorization unless one is passed.
    """
    if spec.ladder != sys.ladder:
        raise ShapeMismatch("system and spectrum use different ladders")
    return sys.solve(-stamp_rhs(stamps, spec), factorization)


@dataclass
class AdjointSolution:
    """Adjoint vectors of the real-form system, one column per output.

    Columns ``0..K`` belong to ``Re U_k``, columns ``K+1..2K`` to
    ``Im U_1..Im U_K``; ``dU/dp = -lam.T @ to_real((dA/dp) X)``.
    """

    ladder: HarmonicLadder
    dim: int
    lam: np.ndarray
    rhs: np.ndarray
    residual: float

    def complex_view(self, k: int) -> np.ndarray:
        """Adjoint of ``Re U_k`` as a stacked complex vector (b-part mapped to Im)."""
        n1 = self.dim * self.ladder.size
        col = self.lam[:, k]
        out = col[:n1].astype(complex)
        out[self.dim:] += 1j * col[n1:]
        return out


def _output_matrix(rhs, dim, k_max):
    n1 = dim * (k_max + 1)
    e = np.zeros((dim * (2 * k_max + 1), 2 * k_max + 1))
    blocks = np.asarray(rhs, dtype=complex).reshape(k_max + 1, dim)
    for k in range(k_max + 1):
        w = blocks[k]
        a = slice(k * dim, (k + 1) * dim)
        e[a, k] = w.real
        if k:
            b = slice(n1 + (k - 1) * dim, n1 + k * dim)
            e[b, k] = -w.imag
            e[a, k_max + k] = w.imag
            e[b, k_max + k] = w.real
    return e


def hb_adjoint_solve(sys: HbSystem, rhs, factorization=None) -> AdjointSolution:
    """Solve the transposed real system once for every output harmonic.

    ``rhs`` is the stacked functional from :func:`qoi_rhs`; block k
    defines the functional producing harmonic k of the QoI.
    """
    rhs = np.asarray(rhs)
    if rhs.shape != (sys.n_complex,):
        raise ShapeMismatch(f"rhs has shape {rhs.shape}, expected ({sys.n_complex},)")
    lu = factorization if factorization is not None else sys.lu
    e = _output_matrix(rhs, sys.dim, sys.ladder.k_max)
    lam = lu.solve(e, trans="T")
    lam = lam.reshape(e.shape)
    resid = np.linalg.norm(sys.real_matrix.T @ lam - e) / max(np.linalg.norm(e), 1e-300)
    return AdjointSolution(sys.ladder, sys.dim, lam, e, float(resid))


def hb_adjoint_sensitivity(adj: AdjointSolution, spec: SpectralSolution,
                           stamps: ParamStamps) -> np.ndarray:
    """QoI spectrum ``dU_k/dp`` for k = 0..K from a shared adjoint solution."""
    if spec.ladder != adj.ladder:
        raise ShapeMismatch("adjoint and spectrum use different ladders")
    r = stamp_rhs(stamps, spec)
    k_max = adj.ladder.k_max
    z = np.concatenate([r.real, r[adj.dim:].imag])
    v = adj.lam.T @ z
    out = -v[: k_max + 1].astype(complex)
    out[1:] -= 1j * v[k_max + 1:]
    return out


# --------------------------------------------------------------------------
# refinement loop


@dataclass
class SensitivityResult:
    parameter: ParameterRef
    spectrum: np.ndarray
    time_series: np.ndarray
    k_used: int
    est_rel_error: float
    omega0: float = 0.0
    history: list = field(default_factory=list)


def relative_error(coarse, fine) -> float:
    """``||fine - pad(coarse)|| / ||fine||`` over the fine harmonics."""
    c = np.asarray(getattr(coarse, "spectrum", coarse), dtype=complex)
    f = np.asarray(getattr(fine, "spectrum", fine), dtype=complex)
    if len(c) > len(f):
        raise ShapeMismatch("coarse spectrum has more harmonics than the fine one")
    padded = np.zeros_like(f)
    padded[: len(c)] = c
    denom = np.linalg.norm(f)
    if denom == 0.0:
        raise ZeroFineNorm("fine sensitivity spectrum is identically zero")
    return float(np.linalg.norm(f - padded) / denom)


@dataclass(frozen=True)
class TfhaConfig:
    k_start: int = 8
    k_growth_factor: float = 2.0
    err_tol: float = 1e-3
    transient: TransientConfig = TransientConfig()
    k_limit: Optional[int] = None
    strict: bool = True

    def __post_init__(self):
        if self.k_start < 1:
            raise ValueError("k_start must be >= 1")
        if not self.k_growth_factor > 1:
            raise ValueError("k_growth_factor must exceed 1")
        if not self.err_tol >= 0:
            raise ValueError("err_tol must be >= 0")


def _threads():
    try:
        return max(1, int(os.environ.get("TFHA_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def tfha_run(c: Circuit, sel, params, cfg: TfhaConfig = TfhaConfig(),
             steady: Optional[TransientSolution] = None) -> list:
    """Transient steady state, then harmonic adjoint sensitivities with refinement.

    The number of harmonics grows geometrically from ``k_start`` until the
    largest estimated relative error over all parameters is at most
    ``err_tol`` or the sample grid is exhausted.
    """
    mna = MnaStructure(c)
    if isinstance(sel, str):
        sel = make_qoi(mna, sel)
    params = resolve_parameters(c, params)
    if not params:
        raise ValueError("no parameters given")
    stamps = [mna.stamps(p) for p in params]
    if steady is None:
        steady = run_to_steady_state(c, cfg.transient, mna=mna)
    n = steady.x_samples.shape[1]
    k_top = n // 2 - 1
    if cfg.k_limit is not None:
        k_top = min(k_top, cfg.k_limit)
    k = min(cfg.k_start, k_top)
    prev = None
    histories = [[] for _ in params]
    while True:
        ladder = HarmonicLadder.from_period(steady.period, k)
        spec = fft_period(steady, k)
        system = assemble_hb_jacobian(mna, c, steady, ladder)
        adj = hb_adjoint_solve(system, qoi_rhs(sel, ladder))
        spectra = _map(lambda st: hb_adjoint_sensitivity(adj, spec, st), stamps)
        ests = [float("nan")] * len(params)
        if prev is not None:
            for i, (old, new) in enumerate(zip(prev, spectra)):
                try:
                    ests[i] = relative_error(old, new)
                except ZeroFineNorm:
                    ests[i] = 0.0
                histories[i].append((k, ests[i]))
            logger.info("K=%d: max estimated error %.3e", k, max(ests))
        done = prev is not None and max(ests) <= cfg.err_tol
        if done or k >= k_top:
            break
        prev = spectra
        k = min(max(int(round(k * cfg.k_growth_factor)), k + 1), k_top)

    results = [
        SensitivityResult(p, s, reconstruct_time((s, ladder.omega0), steady.t_grid),
                          k, e, ladder.omega0, h)
        for p, s, e, h in zip(params, spectra, ests, histories)
    ]
    if not done:
        msg = (f"harmonic refinement stopped at K={k} with estimated error "
               f"{max(ests):.3e} > {cfg.err_tol:.3e}")
        if cfg.strict:
            raise NotConverged(msg, results, ests)
        logger.warning(msg)
    return results


# --------------------------------------------------------------------------
# oracles


def transient_dsa(c: Circuit, p, steady: TransientSolution,
                  cfg: TransientConfig = TransientConfig()) -> np.ndarray:
    """Periodic ``dx/dp`` over one period by differentiating the trapezoidal scheme.

    Linearization coefficients are taken from the stored steady-state
    samples, which lie on the integration grid.
    """
    mna = MnaStructure(c)
    ref = c.parameter(p)
    st = mna.stamps(ref)
    n = steady.x_samples.shape[1]
    integ = TrapezoidIntegrator(mna, n, cfg)
    dt = integ.dt
    x = steady.x_samples
    a_c = integ.a_c
    d_a_c = st.d_a_c.toarray()
    d_a_g = st.d_a_g.toarray()
    mod = (np.ones(n) if st.modulation is None
           else np.asarray(st.modulation(steady.t_grid), dtype=float))
    jac = [integ.jacobian_g(x[:, i], i) for i in range(n)]
    try:
        lus = [la.lu_factor((2.0 / dt) * a_c + jac[i]) for i in range(n)]
    except la.LinAlgError as exc:
        raise SingularIterationMatrix(str(exc)) from None

    y = np.zeros(mna.dim)
    ydot = np.zeros(mna.dim)
    prev = None
    for period in range(1, cfg.max_periods + 1):
        samples = np.empty((mna.dim, n))
        for i in range(n):
            i0, i1 = i, (i + 1) % n
            euler = period == 1 and i == 0
            coef, h = (1.0, 0.0) if euler else (2.0, 1.0)
            dq_known = (coef / dt) * (d_a_c @ (x[:, i1] - x[:, i0]) - a_c @ y)
            rhs = -dq_known + h * ydot - mod[i1] * (d_a_g @ x[:, i1])
            if euler:
                y1 = np.linalg.solve((1.0 / dt) * a_c + jac[i1], rhs)
            else:
                y1 = la.lu_solve(lus[i1], rhs)
            ydot = (coef / dt) * (a_c @ y1) + dq_known - h * ydot
            y = y1
            samples[:, i] = y
        samples = np.roll(samples, 1, axis=1)
        if prev is not None and detect_periodicity(prev, samples) <= cfg.steady_tol:
            return samples
        prev = samples
    raise NoSteadyState(f"sensitivity of {ref} not periodic after {cfg.max_periods} periods")


def fd_oracle(c: Circuit, sel, p, h_rel: float,
              cfg: TransientConfig = TransientConfig(), x0=None) -> np.ndarray:
    """Central difference of full steady-state re-simulations, sampled like ``t_grid``.

    Both runs start at t = 0 with identical sources, so they share phase.
    The transient tolerances are tightened so the steady-state error stays
    well below the difference quotient.
    """
    if not 1e-8 <= h_rel <= 1e-2:
        raise ValueError("h_rel must lie in [1e-8, 1e-2]")
    mna = MnaStructure(c)
    if isinstance(sel, str):
        sel = make_qoi(mna, sel)
    ref = c.parameter(p)
    tight = replace(cfg, steady_tol=min(cfg.steady_tol, 1e-13),
                    newton_tol=min(cfg.newton_tol, 1e-13))
    p0 = ref.nominal_value
    runs = []
    for sign in (1.0, -1.0):
        varied = c.with_value(ref, p0 * (1.0 + sign * h_rel))
        runs.append(run_to_steady_state(varied, tight, x0=x0))
    return (sel(runs[0].x_samples) - sel(runs[1].x_samples)) / (2.0 * h_rel * p0)
