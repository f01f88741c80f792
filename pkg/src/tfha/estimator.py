"""Scikit-learn style wrapper around the transient-plus-adjoint workflow."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_circuit, check_nonnegative, check_params, check_positive_int
from .sensitivity import TfhaConfig, tfha_run
from .transient import TransientConfig, run_to_steady_state


class TfhaSensitivity(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Periodic steady-state sensitivities of one output to circuit parameters.

    ``fit`` takes a Circuit, netlist path or netlist text, finds the steady
    state by transient simulation and computes the harmonic adjoint
    sensitivities. ``transform`` returns the time-domain sensitivities as
    an array of shape ``(n_params, samples_per_period)``.

    Fitted attributes: ``results_``, ``steady_state_``, ``parameter_names_``,
    ``k_used_``, ``est_rel_error_``.
    """

    def __init__(self, qoi="v(out)", params="all", samples_per_period=1024,
                 k_start=8, k_growth_factor=2.0, err_tol=1e-3, steady_tol=1e-6,
                 max_periods=1000, strict=True):
        self.qoi = qoi
        self.params = params
        self.samples_per_period = samples_per_period
        self.k_start = k_start
        self.k_growth_factor = k_growth_factor
        self.err_tol = err_tol
        self.steady_tol = steady_tol
        self.max_periods = max_periods
        self.strict = strict

    def _config(self) -> TfhaConfig:
        transient = TransientConfig(
            samples_per_period=check_positive_int(self.samples_per_period, "samples_per_period", 8),
            max_periods=check_positive_int(self.max_periods, "max_periods", 2),
            steady_tol=self.steady_tol,
        )
        return TfhaConfig(
            k_start=check_positive_int(self.k_start, "k_start"),
            k_growth_factor=self.k_growth_factor,
            err_tol=check_nonnegative(self.err_tol, "err_tol"),
            transient=transient,
            strict=self.strict,
        )

    def fit(self, X, y=None):
        circuit = check_circuit(X)
        params = check_params(self.params)
        cfg = self._config()
        steady = run_to_steady_state(circuit, cfg.transient)
        results = tfha_run(circuit, self.qoi, params, cfg, steady=steady)
        self.circuit_ = circuit
        self.steady_state_ = steady
        self.results_ = results
        self.parameter_names_ = np.array([str(r.parameter) for r in results], dtype=object)
        self.k_used_ = results[0].k_used
        self.est_rel_error_ = np.array([r.est_rel_error for r in results])
        return self

    def transform(self, X=None):
        check_is_fitted(self, "results_")
        return np.vstack([r.time_series for r in self.results_])

    def spectra(self):
        """Complex one-sided spectra, shape ``(n_params, k_used + 1)``."""
        check_is_fitted(self, "results_")
        return np.vstack([r.spectrum for r in self.results_])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "results_")
        return self.parameter_names_.copy()
