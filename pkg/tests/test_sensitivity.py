import logging

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from tfha import (
    HarmonicLadder,
    TfhaConfig,
    TransientConfig,
    assemble_hb_jacobian,
    fd_oracle,
    fft_period,
    hb_adjoint_sensitivity,
    hb_adjoint_solve,
    hb_direct_sensitivity,
    hb_forward_solve,
    list_parameters,
    load_fixture,
    make_qoi,
    parse_netlist,
    relative_error,
    run_to_steady_state,
    tfha_run,
    transient_dsa,
)
from tfha.exceptions import NotConverged, ShapeMismatch, UnknownTarget, ZeroFineNorm
from tfha.mna import MnaStructure, ParamStamps
from tfha.sensitivity import HbSystem, project, qoi_rhs
from tfha.spectral import jacobian_from_samples

from conftest import rel_l2

DIVIDER_EXACT = -1.0 * 1e3 / (2e3) ** 2
ISOLATED = "isolated\nV1 a 0 DC 1\nR1 a 0 1k\nR2 b 0 1k\nC2 b 0 1u\n.period 1m\n"


def linear_system(c, k_max):
    """HB system and exact steady-state spectrum of a linear circuit."""
    mna = MnaStructure(c)
    ladder = HarmonicLadder.from_period(c.fundamental_period, k_max)
    spec = hb_forward_solve(c, ladder)
    sys = jacobian_from_samples(mna, ladder, np.zeros((mna.dim, spec.n_samples)))
    return mna, ladder, spec, sys


def rc_derivative(w):
    r, cap = 1e3, 50e-9
    return 0.5j * 1j * w * cap / (1 + 1j * w * r * cap) ** 2  # V1 phasor is -0.5j


class TestQoi:
    def test_node_voltage_stacking(self):
        mna = MnaStructure(load_fixture("divider"))
        rhs = qoi_rhs(make_qoi(mna, "v(in)"), HarmonicLadder(1.0, 2))
        expected = np.zeros(9)
        expected[[0, 3, 6]] = 1.0
        np.testing.assert_array_equal(rhs, expected)

    def test_differential(self):
        mna = MnaStructure(load_fixture("divider"))
        rhs = qoi_rhs(make_qoi(mna, "v(in,out)"), HarmonicLadder(1.0, 1)).real
        np.testing.assert_array_equal(rhs, [1, -1, 0, 1, -1, 0])

    def test_branch_current(self):
        mna = MnaStructure(load_fixture("divider"))
        rhs = qoi_rhs(make_qoi(mna, "i(v1)"), HarmonicLadder(1.0, 1)).real
        np.testing.assert_array_equal(rhs, [0, 0, 1, 0, 0, 1])

    @pytest.mark.parametrize("target", ["v(nowhere)", "i(R1)", "x(out)", "v(a,b,c)", "i(V1,V2)"])
    def test_bad_targets(self, target):
        with pytest.raises(UnknownTarget):
            make_qoi(MnaStructure(load_fixture("divider")), target)


class TestDirect:
    def test_zero_stamps(self):
        mna, ladder, spec, sys = linear_system(load_fixture("rc_filter"), 4)
        zero = sp.csr_matrix((mna.dim, mna.dim))
        assert not hb_direct_sensitivity(sys, spec, ParamStamps(zero, zero)).any()

    def test_divider_closed_form(self):
        c = load_fixture("divider")
        mna, ladder, spec, sys = linear_system(c, 2)
        dx = hb_direct_sensitivity(sys, spec, mna.stamps(c.parameter("R1")))
        du = project(make_qoi(mna, "v(out)"), dx)
        assert du[0].real == pytest.approx(DIVIDER_EXACT, rel=1e-12)
        assert np.abs(du[1:]).max() < 1e-18

    def test_rc_symbolic(self):
        c = load_fixture("rc_filter")
        mna, ladder, spec, sys = linear_system(c, 3)
        dx = hb_direct_sensitivity(sys, spec, mna.stamps(c.parameter("R1")))
        du = project(make_qoi(mna, "v(out)"), dx)
        expected = rc_derivative(ladder.omega0)
        assert abs(du[1] - expected) <= 1e-10 * abs(expected)

    def test_ladder_mismatch(self):
        c = load_fixture("rc_filter")
        mna, ladder, spec, sys = linear_system(c, 3)
        _, _, spec2, _ = linear_system(c, 4)
        with pytest.raises(ShapeMismatch):
            hb_direct_sensitivity(sys, spec2, mna.stamps(c.parameter("R1")))


class TestAdjoint:
    def test_identity_system(self):
        ladder = HarmonicLadder(1.0, 2)
        eye = sp.identity(6, dtype=complex)
        sys = HbSystem(ladder, 2, eye, eye)
        rhs = np.tile([1.0, -2.0], 3).astype(complex)
        adj = hb_adjoint_solve(sys, rhs)
        np.testing.assert_array_equal(adj.lam, adj.rhs)
        total = sum(adj.complex_view(k) for k in range(3))
        np.testing.assert_array_equal(total, rhs)

    def test_resistive_k0_real(self):
        c = parse_netlist("t\nV1 a 0 DC 1\nR1 a b 1k\nR2 b 0 2k\n.period 1m\n")
        mna, ladder, spec, sys = linear_system(c, 0)
        adj = hb_adjoint_solve(sys, qoi_rhs(make_qoi(mna, "v(b)"), ladder))
        assert adj.lam.dtype == np.float64
        assert not adj.complex_view(0).imag.any()

    def test_rectifier_residual(self, rectifier, rectifier_steady):
        mna = MnaStructure(rectifier)
        ladder = HarmonicLadder.from_period(1e-3, 32)
        sys = assemble_hb_jacobian(mna, rectifier, rectifier_steady, ladder)
        adj = hb_adjoint_solve(sys, qoi_rhs(make_qoi(mna, "v(out)"), ladder))
        assert adj.residual <= 1e-10
        recheck = np.linalg.norm(sys.real_matrix.T @ adj.lam - adj.rhs) / np.linalg.norm(adj.rhs)
        assert recheck <= 1e-10

    def test_divider_sign(self):
        c = load_fixture("divider")
        mna, ladder, spec, sys = linear_system(c, 2)
        adj = hb_adjoint_solve(sys, qoi_rhs(make_qoi(mna, "v(out)"), ladder))
        du = hb_adjoint_sensitivity(adj, spec, mna.stamps(c.parameter("R1")))
        assert du[0].real == pytest.approx(DIVIDER_EXACT, rel=1e-12)

    def test_zero_stamps(self):
        mna, ladder, spec, sys = linear_system(load_fixture("rlc"), 4)
        adj = hb_adjoint_solve(sys, qoi_rhs(make_qoi(mna, "v(out)"), ladder))
        zero = sp.csr_matrix((mna.dim, mna.dim))
        assert not hb_adjoint_sensitivity(adj, spec, ParamStamps(zero, zero)).any()

    @pytest.mark.parametrize("name,qoi", [("rc_filter", "v(out)"), ("rlc", "i(L1)"),
                                          ("rlc", "v(a,out)")])
    def test_matches_direct(self, name, qoi):
        c = load_fixture(name)
        mna, ladder, spec, sys = linear_system(c, 6)
        sel = make_qoi(mna, qoi)
        adj = hb_adjoint_solve(sys, qoi_rhs(sel, ladder))
        for ref in list_parameters(c):
            stamps = mna.stamps(ref)
            direct = project(sel, hb_direct_sensitivity(sys, spec, stamps))
            adjoint = hb_adjoint_sensitivity(adj, spec, stamps)
            assert np.linalg.norm(adjoint - direct) <= 1e-10 * np.linalg.norm(direct)

    def test_rhs_shape(self):
        mna, ladder, spec, sys = linear_system(load_fixture("rc_filter"), 2)
        with pytest.raises(ShapeMismatch):
            hb_adjoint_solve(sys, np.ones(4))


class TestRelativeError:
    def test_identical(self):
        s = np.array([1.0, 0.5j, 0.1 - 0.2j])
        assert relative_error(s, s) == 0.0

    def test_zero_coarse(self):
        assert relative_error(np.zeros(3), np.array([1.0, 2.0, 3j])) == 1.0

    def test_missing_harmonic(self):
        fine = np.array([np.sqrt(0.99), 0.1j])
        assert relative_error(fine[:1], fine) == pytest.approx(0.1, rel=1e-14)

    def test_zero_fine(self):
        with pytest.raises(ZeroFineNorm):
            relative_error(np.zeros(2), np.zeros(4))

    def test_coarse_longer(self):
        with pytest.raises(ShapeMismatch):
            relative_error(np.ones(5), np.ones(3))

    @given(st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False), min_size=1, max_size=8),
           st.integers(0, 8))
    def test_padding_is_conservative(self, fine, cut):
        fine = np.array(fine)
        if not np.linalg.norm(fine):
            return
        cut = min(cut, len(fine))
        err = relative_error(fine[:cut], fine)
        assert err == pytest.approx(np.linalg.norm(fine[cut:]) / np.linalg.norm(fine), abs=1e-15)
        assert 0.0 <= err <= 1.0 + 1e-15


class TestTfhaRun:
    def test_linear_single_harmonic(self):
        res = tfha_run(load_fixture("rc_filter"), "v(out)", "all",
                       TfhaConfig(transient=TransientConfig(samples_per_period=256)))
        assert [r.k_used for r in res] == [16, 16]
        assert max(r.est_rel_error for r in res) < 1e-12

    def test_result_fields(self, rectifier, rectifier_steady):
        (r,) = tfha_run(rectifier, "v(out)", ["R1.value"], TfhaConfig(), steady=rectifier_steady)
        assert len(r.time_series) == 1024 and len(r.spectrum) == r.k_used + 1
        assert r.omega0 == pytest.approx(2 * np.pi * 1e3)
        assert [k for k, _ in r.history] == [16, 32][: len(r.history)]
        assert r.spectrum[0].imag == 0.0

    def test_not_converged_strict(self, rectifier, rectifier_steady):
        cfg = TfhaConfig(err_tol=0.0, k_limit=16)
        with pytest.raises(NotConverged) as err:
            tfha_run(rectifier, "v(out)", "all", cfg, steady=rectifier_steady)
        assert len(err.value.results) == 2 and len(err.value.estimates) == 2
        assert all(r.k_used == 16 for r in err.value.results)

    def test_not_converged_lenient(self, rectifier, rectifier_steady, caplog):
        cfg = TfhaConfig(err_tol=0.0, k_limit=16, strict=False)
        with caplog.at_level(logging.WARNING, logger="tfha"):
            res = tfha_run(rectifier, "v(out)", "all", cfg, steady=rectifier_steady)
        assert len(res) == 2
        assert "harmonic refinement stopped" in caplog.text

    def test_threads_do_not_change_results(self, rectifier, rectifier_steady, monkeypatch):
        one = tfha_run(rectifier, "v(out)", "all", TfhaConfig(), steady=rectifier_steady)
        monkeypatch.setenv("TFHA_THREADS", "4")
        four = tfha_run(rectifier, "v(out)", "all", TfhaConfig(), steady=rectifier_steady)
        for a, b in zip(one, four):
            assert np.array_equal(a.spectrum, b.spectrum)

    def test_estimator_bounds_true_error(self, rectifier, rectifier_steady):
        mna = MnaStructure(rectifier)
        sel = make_qoi(mna, "v(out)")

        def level(k):
            ladder = HarmonicLadder.from_period(1e-3, k)
            spec = fft_period(rectifier_steady, k)
            sys = assemble_hb_jacobian(mna, rectifier, rectifier_steady, ladder)
            adj = hb_adjoint_solve(sys, qoi_rhs(sel, ladder))
            return [hb_adjoint_sensitivity(adj, spec, mna.stamps(p))
                    for p in list_parameters(rectifier)]

        levels = {k: level(k) for k in (8, 16, 32, 64, 128)}
        for i in range(2):
            for k in (8, 16, 32):
                est = relative_error(levels[k][i], levels[2 * k][i])
                true = relative_error(levels[k][i], levels[128][i])
                assert true <= 3 * est


class TestOracles:
    def test_dsa_divider(self):
        c = load_fixture("divider")
        cfg = TransientConfig(samples_per_period=32)
        steady = run_to_steady_state(c, cfg)
        dx = transient_dsa(c, "R1", steady, cfg)
        np.testing.assert_allclose(dx[1], DIVIDER_EXACT, rtol=1e-12)

    def test_dsa_zero_response(self):
        c = parse_netlist(ISOLATED)
        cfg = TransientConfig(samples_per_period=32)
        dx = transient_dsa(c, "R2", run_to_steady_state(c, cfg), cfg)
        assert not dx.any()

    def test_fd_divider(self):
        c = load_fixture("divider")
        fd = fd_oracle(c, "v(out)", "R1", 1e-4, TransientConfig(samples_per_period=32))
        np.testing.assert_allclose(fd, DIVIDER_EXACT, rtol=1e-7)

    def test_fd_zero_response(self):
        c = parse_netlist(ISOLATED)
        fd = fd_oracle(c, "v(b)", "R2", 1e-4, TransientConfig(samples_per_period=32))
        assert np.abs(fd).max() < 1e-12

    def test_fd_step_range(self):
        with pytest.raises(ValueError):
            fd_oracle(load_fixture("divider"), "v(out)", "R1", 0.1)

    def test_fd_second_order(self, rectifier):
        cfg = TransientConfig(samples_per_period=256, steady_tol=1e-12, newton_tol=1e-13)
        steady = run_to_steady_state(rectifier, cfg)
        sel = make_qoi(MnaStructure(rectifier), "v(out)")
        dsa = sel(transient_dsa(rectifier, "C1", steady, cfg))
        errs = [rel_l2(fd_oracle(rectifier, sel, "C1", h, cfg, x0=steady.x_samples[:, 0]), dsa)
                for h in (1e-2, 1e-3, 1e-4)]
        assert 70 <= errs[0] / errs[1] <= 130
        assert 50 <= errs[1] / errs[2] <= 150

    def test_switched_rc_hb_converges_to_dsa(self):
        c = parse_netlist("switched rc\nV1 in 0 DC 1\nR1 in a 100\nS1 a out RON=10 ROFF=1meg "
                          "PWM(0.4 10u 1u 1u)\nC1 out 0 10n\nR2 out 0 1k\n.period 10u\n")
        errs = []
        for n in (256, 512):
            cfg = TransientConfig(samples_per_period=n, steady_tol=1e-12)
            steady = run_to_steady_state(c, cfg)
            sel = make_qoi(MnaStructure(c), "v(out)")
            res = tfha_run(c, sel, "all", TfhaConfig(err_tol=0.0, transient=cfg, strict=False),
                           steady=steady)
            for r in res:
                assert r.parameter.device_name in {"R1", "S1", "C1", "R2"}
            errs.append([rel_l2(r.time_series, sel(transient_dsa(c, r.parameter, steady, cfg)))
                         for r in res])
        for coarse, fine in zip(*errs):
            assert coarse / fine == pytest.approx(4.0, abs=1.0)
