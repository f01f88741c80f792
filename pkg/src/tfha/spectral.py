"""One-sided phasors, conversion matrices and the harmonic-balance Jacobian.

Phasor convention: ``x(t) = X_0 + sum_{k>=1} 2 Re(X_k exp(j k w0 t))`` with
``X_0`` real.  Stacked vectors use the index ``k*dim + i``.

A real time-varying conductance couples ``X_l`` and ``conj(X_l)``, so the
Jacobian acting on one-sided phasors is only real-linear::

    J dX = J_direct @ dX + J_conj @ conj(dX)

All solves therefore go through an equivalent real system on
``z = [Re dX_0..Re dX_K, Im dX_1..Im dX_K]`` of size ``dim*(2K+1)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import HarmonicOverflow, HbDivergence, SingularJacobian
from .mna import MnaStructure
from .netlist import Circuit

logger = logging.getLogger(__name__)

__all__ = [
    "HarmonicLadder",
    "SpectralSolution",
    "ConversionBlocks",
    "HbSystem",
    "spectrum",
    "fft_period",
    "reconstruct_time",
    "conversion_matrix",
    "assemble_hb_matrix",
    "assemble_hb_jacobian",
    "hb_forward_solve",
]


@dataclass(frozen=True)
class HarmonicLadder:
    omega0: float
    k_max: int

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")

    @classmethod
    def from_period(cls, period: float, k_max: int) -> "HarmonicLadder":
        return cls(2.0 * np.pi / period, int(k_max))

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.k_max + 1) * self.omega0

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega0

    @property
    def size(self) -> int:
        return self.k_max + 1


@dataclass
class SpectralSolution:
    """Phasors ``(dim, K+1)``; ``n_samples`` is the time grid they came from."""

    ladder: HarmonicLadder
    phasors: np.ndarray
    n_samples: Optional[int] = None

    def stacked(self) -> np.ndarray:
        return self.phasors.T.reshape(-1)


def _check_k(k_max, n):
    if k_max > n // 2 - 1:
        raise HarmonicOverflow(
            f"{k_max} harmonics need at least {2 * (k_max + 1)} samples, got {n}"
        )


def spectrum(samples, k_max: int) -> np.ndarray:
    """One-sided coefficients 0..k_max of uniformly sampled periodic data (last axis)."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[-1]
    _check_k(k_max, n)
    out = np.fft.rfft(samples, axis=-1)[..., : k_max + 1] / n
    out[..., 0] = out[..., 0].real
    return out


def _grid_values(phasors, n):
    """Evaluate one-sided phasors (..., K+1) on the uniform grid of ``n`` points."""
    phasors = np.asarray(phasors)
    k1 = phasors.shape[-1]
    _check_k(k1 - 1, n)
    full = np.zeros(phasors.shape[:-1] + (n // 2 + 1,), dtype=complex)
    full[..., :k1] = phasors
    full[..., 0] = full[..., 0].real
    return np.fft.irfft(full * n, n=n, axis=-1)


def fft_period(sol, k_max: int) -> SpectralSolution:
    """Phasors of harmonics 0..k_max of a sampled steady-state period."""
    x = sol.x_samples
    ladder = HarmonicLadder.from_period(sol.period, k_max)
    return SpectralSolution(ladder, spectrum(x, k_max), x.shape[1])


def reconstruct_time(spec, t_grid) -> np.ndarray:
    """Evaluate the one-sided series at arbitrary instants.

    ``spec`` is a SpectralSolution, or a ``(phasors, omega0)`` pair where
    ``phasors`` has the harmonic index on its last axis.
    """
    if isinstance(spec, SpectralSolution):
        phasors, omega0 = spec.phasors, spec.ladder.omega0
    else:
        phasors, omega0 = spec
    phasors = np.asarray(phasors, dtype=complex)
    t = np.asarray(t_grid, dtype=float)
    k = np.arange(phasors.shape[-1])
    basis = np.exp(1j * omega0 * np.outer(k, t))
    basis[0] = 0.5
    return 2.0 * np.real(phasors @ basis)


# --------------------------------------------------------------------------
# conversion matrices


@dataclass(frozen=True)
class ConversionBlocks:
    """``Y = direct @ X + conj @ conj(X)`` maps phasors of dx to those of g*dx."""

    direct: np.ndarray
    conj: np.ndarray

    def apply(self, phasors):
        phasors = np.asarray(phasors, dtype=complex)
        return self.direct @ phasors + self.conj @ np.conj(phasors)


def _conversion_tensors(g_samples, k_max):
    """Direct/conjugate coefficient blocks for each row of ``g_samples`` (m, N)."""
    g_samples = np.atleast_2d(np.asarray(g_samples, dtype=float))
    n = g_samples.shape[-1]
    _check_k(k_max, n)
    coeffs = np.fft.fft(g_samples, axis=-1) / n
    k = np.arange(k_max + 1)[:, None]
    l = np.arange(k_max + 1)[None, :]
    direct = coeffs[:, (k - l) % n]
    conj = coeffs[:, (k + l) % n]
    # conj(X_0) = X_0 is already carried by the direct term
    conj[:, :, 0] = 0.0
    return direct, conj


def conversion_matrix(g_samples, k_max: int) -> ConversionBlocks:
    """Conversion blocks of one periodic waveform sampled on a uniform grid.

    Exact with respect to the sampled product: for phasors ``X`` of a
    waveform band-limited to ``k_max``, ``apply(X)`` equals the truncated
    DFT of ``g * x`` on the same grid.
    """
    direct, conj = _conversion_tensors(np.asarray(g_samples, dtype=float)[None, :], k_max)
    return ConversionBlocks(direct[0], conj[0])


# --------------------------------------------------------------------------
# HB system


class HbSystem:
    """Frequency-domain system matrix and Jacobian on a harmonic ladder."""

    def __init__(self, ladder, dim, block_a, jacobian, jacobian_conj=None):
        self.ladder = ladder
        self.dim = dim
        n1 = dim * ladder.size
        self.block_a = sp.csr_matrix(block_a, dtype=complex)
        self.jacobian = sp.csr_matrix(jacobian, dtype=complex)
        if jacobian_conj is None:
            jacobian_conj = sp.csr_matrix((n1, n1), dtype=complex)
        self.jacobian_conj = sp.csr_matrix(jacobian_conj, dtype=complex)

    @property
    def n_complex(self) -> int:
        return self.dim * self.ladder.size

    @property
    def n_real(self) -> int:
        return self.dim * (2 * self.ladder.k_max + 1)

    @property
    def coupling(self) -> sp.csr_matrix:
        """Nonlinear and time-varying contributions, ``jacobian - block_a``."""
        return (self.jacobian - self.block_a).tocsr()

    def apply(self, stacked):
        stacked = np.asarray(stacked, dtype=complex)
        return self.jacobian @ stacked + self.jacobian_conj @ np.conj(stacked)

    def to_real(self, stacked) -> np.ndarray:
        stacked = np.asarray(stacked, dtype=complex)
        return np.concatenate([stacked.real, stacked[self.dim:].imag], axis=0)

    def from_real(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        n1 = self.n_complex
        out = z[:n1].astype(complex)
        out[self.dim:] += 1j * z[n1:]
        return out

    @cached_property
    def real_matrix(self) -> sp.csc_matrix:
        j1, j2 = self.jacobian, self.jacobian_conj
        r1, i1 = _split(j1)
        r2, i2 = _split(j2)
        full = sp.bmat([[r1 + r2, i2 - i1], [i1 + i2, r1 - r2]], format="csr")
        n1 = self.n_complex
        keep = np.r_[np.arange(n1), n1 + np.arange(self.dim, n1)]
        return full[keep][:, keep].tocsc()

    def factorize(self):
        """Fresh sparse LU of the real system (not cached)."""
        mat = self.real_matrix
        try:
            lu = spla.splu(mat)
        except RuntimeError as exc:
            raise SingularJacobian(
                f"HB Jacobian is singular: {exc}", _condition_estimate(mat)
            ) from None
        diag = np.abs(lu.U.diagonal())
        if not np.all(np.isfinite(diag)) or diag.min() <= 1e-300:
            raise SingularJacobian("HB Jacobian is singular", _condition_estimate(mat))
        return lu

    @cached_property
    def lu(self):
        return self.factorize()

    def solve(self, rhs, factorization=None):
        """Solve ``J dX = rhs`` for stacked complex vectors."""
        lu = factorization if factorization is not None else self.lu
        return self.from_real(lu.solve(self.to_real(rhs)))


def _split(mat):
    mat = sp.csr_matrix(mat)
    re = sp.csr_matrix((mat.data.real, mat.indices, mat.indptr), shape=mat.shape)
    im = sp.csr_matrix((mat.data.imag, mat.indices, mat.indptr), shape=mat.shape)
    return re, im


def _condition_estimate(mat):
    if mat.shape[0] > 3000:
        return None
    with np.errstate(all="ignore"):
        return float(np.linalg.cond(mat.toarray()))


def _switch_mean(mna):
    """Exact period average of each switch conductance."""
    out = []
    for dev in mna.switch_devices:
        gon, goff = 1.0 / dev.params["ron"], 1.0 / dev.params["roff"]
        wf = dev.waveform
        # the conductance is exponential in time along each ramp
        ramp = gon if gon == goff else (gon - goff) / np.log(gon / goff)
        off = wf.period - wf.rise - wf.width - wf.fall
        out.append((gon * wf.width + ramp * (wf.rise + wf.fall) + goff * off) / wf.period)
    return np.asarray(out)


def _block_diag(mna, ladder, a_g):
    a_c = sp.csr_matrix(mna.a_c, dtype=complex)
    a_g = sp.csr_matrix(a_g, dtype=complex)
    blocks = [1j * w * a_c + a_g for w in ladder.frequencies]
    return sp.block_diag(blocks, format="csr")


def assemble_hb_matrix(mna: MnaStructure, ladder: HarmonicLadder) -> sp.csr_matrix:
    """Block diagonal ``A_k = j k w0 A_C + A_G``, switches at their time average."""
    a_g = mna.a_g
    if not mna.is_time_invariant:
        means = _switch_mean(mna)
        vals = mna._sw_sign * means[mna._sw_idx]
        a_g = a_g + sp.csr_matrix((vals, (mna.sw_rows, mna.sw_cols)), shape=a_g.shape)
    return _block_diag(mna, ladder, a_g)


def _conversion_sparse(rows, cols, waveforms, dim, k_max):
    """Stacked conversion matrices for stamp entries ``(rows[e], cols[e])``."""
    n1 = dim * (k_max + 1)
    if len(rows) == 0:
        empty = sp.csr_matrix((n1, n1), dtype=complex)
        return empty, empty
    direct, conj = _conversion_tensors(waveforms, k_max)
    k = np.arange(k_max + 1)
    rr = (k[None, :, None] * dim + np.asarray(rows)[:, None, None])
    cc = (k[None, None, :] * dim + np.asarray(cols)[:, None, None])
    rr, cc = np.broadcast_arrays(rr, cc)
    shape = (n1, n1)
    d = sp.csr_matrix((direct.ravel(), (rr.ravel(), cc.ravel())), shape=shape)
    c = sp.csr_matrix((conj.ravel(), (rr.ravel(), cc.ravel())), shape=shape)
    return d, c


def jacobian_from_samples(mna: MnaStructure, ladder: HarmonicLadder, x_samples) -> HbSystem:
    """HB Jacobian linearized along sampled states ``x_samples`` (dim, N)."""
    x_samples = np.asarray(x_samples, dtype=float)
    n = x_samples.shape[1]
    k_max = ladder.k_max
    _check_k(k_max, n)
    block_a = assemble_hb_matrix(mna, ladder)
    base = _block_diag(mna, ladder, mna.a_g)
    direct = base
    conj = sp.csr_matrix(base.shape, dtype=complex)
    t = np.arange(n) * (ladder.period / n)
    if mna.switch_devices:
        d, c = _conversion_sparse(mna.sw_rows, mna.sw_cols, mna.switch_values(t),
                                  mna.dim, k_max)
        direct = direct + d
        conj = conj + c
    if mna.n_diodes:
        _, g_vals = mna.nonlinear(x_samples)
        d, c = _conversion_sparse(mna.nl_rows, mna.nl_cols, g_vals, mna.dim, k_max)
        direct = direct - d
        conj = conj - c
    return HbSystem(ladder, mna.dim, block_a, direct, conj)


def assemble_hb_jacobian(mna: MnaStructure, c: Circuit, steady, ladder: HarmonicLadder) -> HbSystem:
    """Jacobian linearized along a converged transient period.

    Conductance waveforms are sampled on the transient grid before
    truncation to ``ladder.k_max``.
    """
    if abs(ladder.period - steady.period) > 1e-12 * steady.period:
        raise ValueError("ladder and steady state have different periods")
    return jacobian_from_samples(mna, ladder, steady.x_samples)


# --------------------------------------------------------------------------
# harmonic balance Newton


def _hb_residual(mna, ladder, phasors, n, src_spec, t):
    x_t = _grid_values(phasors, n)
    f_t = mna.a_g @ x_t
    if mna.switch_devices:
        sw = mna.switch_values(t)
        np.add.at(f_t, mna.sw_rows, sw * x_t[mna.sw_cols])
    if mna.n_diodes:
        i_nl, _ = mna.nonlinear(x_t)
        f_t = f_t - i_nl
    resid = spectrum(f_t, ladder.k_max) - src_spec
    resid += 1j * ladder.frequencies[None, :] * (mna.a_c @ phasors)
    return resid, x_t


def hb_forward_solve(c: Circuit, ladder: HarmonicLadder, tol: float = 1e-10,
                     max_iter: int = 50, n_samples: Optional[int] = None,
                     initial: Optional[np.ndarray] = None) -> SpectralSolution:
    """Harmonic-balance Newton iteration with a backtracking line search.

    Nonlinear currents are evaluated on a time grid of ``n_samples``
    points (default: the next power of two >= 4(K+1)).
    """
    mna = MnaStructure(c)
    k_max = ladder.k_max
    n = n_samples or max(8, 1 << int(np.ceil(np.log2(4 * (k_max + 1)))))
    _check_k(k_max, n)
    t = np.arange(n) * (ladder.period / n)
    src_spec = spectrum(mna.sources(t), k_max)
    phasors = (np.zeros((mna.dim, k_max + 1), dtype=complex) if initial is None
               else np.array(initial, dtype=complex))
    history = []

    def norm_of(res):
        return float(np.linalg.norm(res[:, 0].real) ** 2 + 2 * np.linalg.norm(res[:, 1:]) ** 2) ** 0.5

    resid, x_t = _hb_residual(mna, ladder, phasors, n, src_spec, t)
    for it in range(max_iter + 1):
        norm = norm_of(resid)
        history.append(norm)
        logger.debug("HB iteration %d: residual %.3e", it, norm)
        if norm <= tol:
            out = SpectralSolution(ladder, phasors, n)
            out.residual_history = history
            return out
        if it == max_iter:
            break
        system = jacobian_from_samples(mna, ladder, x_t)
        step = system.solve(-resid.T.reshape(-1)).reshape(k_max + 1, mna.dim).T
        alpha = 1.0
        for _ in range(30):
            trial = phasors + alpha * step
            trial[:, 0] = trial[:, 0].real
            new_resid, new_x = _hb_residual(mna, ladder, trial, n, src_spec, t)
            if norm_of(new_resid) <= (1.0 - 1e-4 * alpha) * norm:
                break
            alpha *= 0.5
        phasors, resid, x_t = trial, new_resid, new_x
    raise HbDivergence(
        f"harmonic balance did not converge in {max_iter} iterations "
        f"(residual {history[-1]:.3e})",
        history,
    )
