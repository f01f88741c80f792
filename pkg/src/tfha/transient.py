"""Fixed-step trapezoidal transient analysis and periodic steady-state detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .exceptions import (
    NewtonDivergence,
    NoSteadyState,
    NonFiniteState,
    ShapeMismatch,
    SingularIterationMatrix,
)
from .mna import MnaStructure
from .netlist import Circuit

logger = logging.getLogger(__name__)

__all__ = [
    "TransientConfig",
    "TransientSolution",
    "TrapezoidIntegrator",
    "newton_step",
    "run_to_steady_state",
    "detect_periodicity",
]


@dataclass(frozen=True)
class TransientConfig:
    samples_per_period: int = 1024
    max_periods: int = 1000
    steady_tol: float = 1e-6
    newton_tol: float = 1e-9
    newton_max_iter: int = 50

    def __post_init__(self):
        n = self.samples_per_period
        if int(n) != n or n < 8 or (int(n) & (int(n) - 1)):
            raise ValueError(f"samples_per_period must be a power of two >= 8, got {n!r}")
        if self.max_periods < 2:
            raise ValueError("max_periods must be >= 2")
        if not (self.steady_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")


@dataclass
class TransientSolution:
    """Final period of a periodic steady state.

    Column ``i`` of ``x_samples`` is the state at ``t_grid[i] = i*T/N``
    (time measured modulo the fundamental period).
    """

    t_grid: np.ndarray
    x_samples: np.ndarray
    periods_run: int
    period_mismatch: float
    period: float
    mismatch_history: list = field(default_factory=list)
    qdot_end: np.ndarray = None

    @property
    def dt(self) -> float:
        return self.period / self.x_samples.shape[1]


def detect_periodicity(prev, curr, eps: float = 1e-30) -> float:
    """Relative Frobenius distance between two sampled periods."""
    prev = np.asarray(prev, dtype=float)
    curr = np.asarray(curr, dtype=float)
    if prev.shape != curr.shape:
        raise ShapeMismatch(f"period shapes differ: {prev.shape} vs {curr.shape}")
    return float(np.linalg.norm(curr - prev) / max(np.linalg.norm(curr), eps))


class TrapezoidIntegrator:
    """Trapezoidal rule on a uniform grid with step ``T/N``.

    The charge-derivative history ``qdot = A_C x'`` is carried between
    steps, so purely algebraic rows are enforced exactly at every step:

        (c/dt) A_C (x1 - x0) - h*qdot0 + f(x1, t1) = 0,   c = 2, h = 1

    The backward Euler variant (``c = 1``, ``h = 0``) starts an
    integration from an inconsistent initial state.
    """

    def __init__(self, mna: MnaStructure, n_samples: int, cfg: TransientConfig):
        self.mna = mna
        self.cfg = cfg
        self.n = n_samples
        self.period = mna.circuit.fundamental_period
        self.dt = self.period / n_samples
        dim = mna.dim
        self.a_c = mna.a_c.toarray()
        self._a_g = mna.a_g.toarray()
        grid = np.arange(n_samples) * self.dt
        # forcing is sampled once per phase so every period sees bit-identical inputs
        self.src = mna.sources(grid)
        self.sw = mna.switch_values(grid) if not mna.is_time_invariant else None
        self._sw_flat = mna.sw_rows * dim + mna.sw_cols
        self._nl_flat = mna.nl_rows * dim + mna.nl_cols
        self._ag_cache = {}
        self._lu_cache = {}

    def a_g(self, phase: int) -> np.ndarray:
        """Dense A_G at grid phase ``phase`` (switches included)."""
        if self.sw is None:
            return self._a_g
        cached = self._ag_cache.get(phase)
        if cached is None:
            cached = self._a_g.copy()
            np.add.at(cached.ravel(), self._sw_flat, self.sw[:, phase])
            self._ag_cache[phase] = cached
        return cached

    def f(self, x, phase):
        """Conductive part of the residual: A_G x - i_nl(x) - i_s."""
        i_nl, _ = self.mna.nonlinear(x)
        return self.a_g(phase) @ x - i_nl - self.src[:, phase]

    def jacobian_g(self, x, phase):
        """J_G = A_G - d i_nl/dx as a dense matrix."""
        jg = self.a_g(phase).copy()
        if self.mna.n_diodes:
            _, g_vals = self.mna.nonlinear(x)
            np.subtract.at(jg.ravel(), self._nl_flat, g_vals)
        return jg

    def _linear_solve(self, phase, coef, rhs):
        key = (phase if self.sw is not None else 0, coef)
        lu = self._lu_cache.get(key)
        if lu is None:
            mat = (coef / self.dt) * self.a_c + self.a_g(phase)
            try:
                with np.errstate(all="raise"):
                    lu = la.lu_factor(mat, check_finite=True)
            except (la.LinAlgError, FloatingPointError, ValueError) as exc:
                raise SingularIterationMatrix(str(exc)) from None
            if np.any(np.diag(lu[0]) == 0.0):
                raise SingularIterationMatrix("iteration matrix is singular")
            self._lu_cache[key] = lu
        return la.lu_solve(lu, rhs)

    def step(self, x0, qdot0, phase, backward_euler=False):
        """Advance one step to grid phase ``phase``; returns ``(x1, qdot1)``."""
        coef, h = (1.0, 0.0) if backward_euler else (2.0, 1.0)
        q0 = self.a_c @ x0
        hist = (coef / self.dt) * q0 + h * qdot0
        if self.mna.is_linear:
            x1 = self._linear_solve(phase, coef, hist + self.src[:, phase])
        else:
            x1 = self._newton(x0.copy(), hist, phase, coef)
        qdot1 = (coef / self.dt) * (self.a_c @ x1 - q0) - h * qdot0
        return x1, qdot1

    def residual(self, x1, hist, phase, coef):
        return (coef / self.dt) * (self.a_c @ x1) - hist + self.f(x1, phase)

    def _newton(self, x, hist, phase, coef):
        cfg = self.cfg
        ag = self.a_g(phase)
        src = self.src[:, phase]
        mass = (coef / self.dt) * self.a_c
        mna = self.mna
        norm = np.inf
        for _ in range(cfg.newton_max_iter + 1):
            i_nl, g_vals = mna.nonlinear(x)
            r = mass @ x - hist + ag @ x - i_nl - src
            norm = float(np.linalg.norm(r))
            if not np.isfinite(norm):
                raise NonFiniteState("non-finite residual during Newton iteration")
            if norm <= cfg.newton_tol:
                return x
            mat = mass + ag
            np.subtract.at(mat.ravel(), self._nl_flat, g_vals)
            try:
                x = x - np.linalg.solve(mat, r)
            except np.linalg.LinAlgError as exc:
                raise SingularIterationMatrix(str(exc)) from None
        raise NewtonDivergence(
            f"Newton did not converge in {cfg.newton_max_iter} iterations "
            f"(last residual norm {norm:.3e})",
            residual_norm=norm,
        )

    def run_period(self, x, qdot, start_with_euler=False):
        """Integrate one period; returns samples rolled so column 0 is phase 0."""
        samples = np.empty((self.mna.dim, self.n))
        for i in range(self.n):
            phase = (i + 1) % self.n
            x, qdot = self.step(x, qdot, phase, backward_euler=start_with_euler and i == 0)
            samples[:, i] = x
        return np.roll(samples, 1, axis=1), x, qdot


def newton_step(mna: MnaStructure, c: Circuit, x_prev, t_next: float, dt: float,
                cfg: TransientConfig, qdot_prev=None):
    """One trapezoidal step from ``t_next - dt`` to ``t_next``.

    Without ``qdot_prev`` the history is the classic ``-f(x_prev, t_prev)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x_prev = np.asarray(x_prev, dtype=float)
    a_c = mna.a_c.toarray()
    t_prev = t_next - dt

    def f(x, t):
        i_nl, _ = mna.nonlinear(x)
        return mna.a_g_at(t) @ x - i_nl - mna.sources(t)

    if qdot_prev is None:
        qdot_prev = -f(x_prev, t_prev)
    hist = (2.0 / dt) * (a_c @ x_prev) + qdot_prev
    a_g = mna.a_g_at(t_next).toarray()
    x = x_prev.copy()
    norm = np.inf
    for _ in range(cfg.newton_max_iter + 1):
        r = (2.0 / dt) * (a_c @ x) - hist + f(x, t_next)
        norm = float(np.linalg.norm(r))
        if not np.isfinite(norm):
            raise NonFiniteState("non-finite residual during Newton iteration")
        if norm <= cfg.newton_tol:
            return x
        jac = (2.0 / dt) * a_c + a_g
        if mna.n_diodes:
            _, g_vals = mna.nonlinear(x)
            np.subtract.at(jac, (mna.nl_rows, mna.nl_cols), g_vals)
        try:
            x = x - np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise SingularIterationMatrix(str(exc)) from None
    raise NewtonDivergence(
        f"Newton did not converge in {cfg.newton_max_iter} iterations "
        f"(last residual norm {norm:.3e})",
        residual_norm=norm,
    )


def run_to_steady_state(c: Circuit, cfg: TransientConfig = TransientConfig(), x0=None,
                        mna: MnaStructure = None) -> TransientSolution:
    """Integrate from ``x(0) = 0`` (or ``x0``) period by period until periodic.

    Stops once the relative distance between two consecutive sampled
    periods is at most ``cfg.steady_tol``.
    """
    mna = mna if mna is not None else MnaStructure(c)
    integ = TrapezoidIntegrator(mna, cfg.samples_per_period, cfg)
    x = np.zeros(mna.dim) if x0 is None else np.array(x0, dtype=float)
    qdot = np.zeros(mna.dim)
    prev = None
    history = []
    for k in range(1, cfg.max_periods + 1):
        samples, x, qdot = integ.run_period(x, qdot, start_with_euler=(k == 1))
        if prev is not None:
            mismatch = detect_periodicity(prev, samples)
            history.append(mismatch)
            logger.debug("period %d: mismatch %.3e", k, mismatch)
            if mismatch <= cfg.steady_tol:
                grid = np.arange(integ.n) * integ.dt
                return TransientSolution(grid, samples, k, mismatch, integ.period,
                                         history, qdot)
        prev = samples
    raise NoSteadyState(
        f"no periodic steady state after {cfg.max_periods} periods "
        f"(last mismatch {history[-1] if history else float('nan'):.3e})",
        history,
    )
