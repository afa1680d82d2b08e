import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from relaxo.drt import (
    SIMULATION_SETS,
    DrtModel,
    DrtProcess,
    Kind,
    canonical_set_name,
    eval_f_s,
    eval_g,
    eval_g1,
    matched_beta,
    simulation_set,
)

# mpmath at 40 digits, frozen
B_RQ_G_AT_1 = 0.087976689318057970948
MATCHED_BETA_069 = 0.78608862531042584507
MATCHED_BETA_1 = 0.62961439772891416631


def ln_unit(mu=0.0, sigma=1.0):
    return DrtModel([DrtProcess.lognormal(mu, sigma)])


class TestProcess:
    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            DrtProcess.rq(0.0, 0.5)
        with pytest.raises(ValueError):
            DrtProcess.rq(1.0, 1.0)
        with pytest.raises(ValueError):
            DrtProcess.rq(1.0, 0.0)
        with pytest.raises(ValueError):
            DrtProcess(Kind.LN, 1.0, -0.1)
        with pytest.raises(ValueError):
            DrtProcess.rq(1.0, 0.5, scale=-1)

    def test_lognormal_stores_mode_time(self):
        p = DrtProcess.lognormal(-3.5, 0.8)
        assert p.t0 == pytest.approx(math.exp(-3.5 - 0.64), rel=1e-15)
        assert p.mu == pytest.approx(-3.5, abs=1e-14)
        assert p.peak_time == pytest.approx(math.exp(-3.5), rel=1e-14)

    def test_empty_model_rejected(self):
        with pytest.raises(ValueError):
            DrtModel([])


class TestEvalG:
    def test_lognormal_at_mean(self):
        assert eval_g(ln_unit(), 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)

    @pytest.mark.parametrize("beta", [0.2, 0.5, 0.8, 0.95])
    def test_rq_at_center(self, beta):
        m = DrtModel([DrtProcess.rq(1.0, beta)])
        expected = math.tan(beta * math.pi / 2) / (2 * math.pi)
        assert eval_g(m, 1.0) == pytest.approx(expected, rel=1e-14)

    def test_two_process_sum(self):
        assert eval_g(simulation_set("B-RQ"), 1.0) == pytest.approx(B_RQ_G_AT_1, rel=1e-14)

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            eval_g(ln_unit(), 0.0)
        with pytest.raises(ValueError):
            eval_g(ln_unit(), [1.0, -2.0])

    @pytest.mark.parametrize("name", sorted(SIMULATION_SETS))
    def test_nonnegative(self, name):
        t = np.logspace(-12, 8, 500)
        assert np.all(eval_g(SIMULATION_SETS[name], t) >= 0)

    @pytest.mark.parametrize(
        "proc",
        [DrtProcess.rq(0.3, 0.5), DrtProcess.rq(2.0, 0.9), DrtProcess(Kind.LN, 0.1, 0.3),
         DrtProcess(Kind.LN, 5.0, 1.0)],
    )
    def test_unit_normalisation(self, proc):
        # integrate in s = ln t, where g dt = g1 ds
        val, _ = quad(lambda s: float(proc.g1(math.exp(s))), -200, 200, points=[math.log(proc.t0)],
                      limit=500)
        assert val == pytest.approx(1.0, abs=1e-6)


class TestEvalG1:
    def test_identity(self, rng):
        m = simulation_set("C-LN")
        t = np.exp(rng.uniform(-10, 5, 50))
        assert np.allclose(eval_g1(m, t), t * eval_g(m, t), rtol=1e-14, atol=0)

    def test_lognormal_shifted_gaussian(self, rng):
        for _ in range(20):
            s, sig = rng.uniform(-3, 3), rng.uniform(0.1, 1.5)
            t0 = 0.37
            m = DrtModel([DrtProcess(Kind.LN, t0, sig)])
            expected = math.exp(-((s - sig**2) ** 2) / (2 * sig**2)) / (sig * math.sqrt(2 * math.pi))
            assert eval_g1(m, t0 * math.exp(s)) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("beta", [0.3, 0.72])
    def test_rq_at_t0(self, beta):
        m = DrtModel([DrtProcess.rq(0.05, beta)])
        assert eval_g1(m, 0.05) == pytest.approx(math.tan(beta * math.pi / 2) / (2 * math.pi), rel=1e-14)

    def test_rq_s_space_uses_direct_substitution(self):
        # g(t0 e^s) carries e^{-s}; it is not symmetric in s
        p = DrtProcess.rq(1.0, 0.6)
        assert p.g(math.e) != pytest.approx(p.g(1 / math.e))
        assert p.g1(math.e) == pytest.approx(p.g1(1 / math.e), rel=1e-14)

    def test_lognormal_s_closed_form(self, rng):
        for _ in range(100):
            sig, t0, s = rng.uniform(0.1, 1.2), math.exp(rng.uniform(-5, 2)), rng.uniform(-4, 4)
            m = DrtModel([DrtProcess(Kind.LN, t0, sig)])
            f = math.exp(-(sig**4 + s**2) / (2 * sig**2)) / (t0 * sig * math.sqrt(2 * math.pi))
            assert eval_g(m, t0 * math.exp(s)) == pytest.approx(f, rel=1e-12)


class TestMatchedBeta:
    def test_large_sigma_limit(self):
        assert matched_beta(50.0) < 1e-300 or matched_beta(50.0) == pytest.approx(0.0, abs=1e-12)
        assert matched_beta(10.0) < matched_beta(5.0) < matched_beta(1.0)

    def test_values(self):
        assert matched_beta(0.69) == pytest.approx(MATCHED_BETA_069, rel=1e-14)
        assert matched_beta(1.0) == pytest.approx(MATCHED_BETA_1, rel=1e-14)

    def test_domain(self):
        with pytest.raises(ValueError):
            matched_beta(0.0)
        with pytest.raises(ValueError):
            matched_beta(-1.0)

    @given(st.floats(0.1, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_peak_heights_match(self, sigma):
        beta = matched_beta(sigma)
        assert 0 < beta < 1
        t0 = 0.7
        lhs = math.sin(beta * math.pi) / (1 + math.cos(beta * math.pi)) / (2 * math.pi * t0)
        rhs = math.exp(-sigma**2 / 2) / (t0 * sigma * math.sqrt(2 * math.pi))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    @given(st.floats(0.001, 0.999))
    @settings(max_examples=60, deadline=None)
    def test_half_angle_identity(self, beta):
        mp.mp.dps = 40
        b = mp.mpf(beta)
        lhs = mp.sin(b * mp.pi) / (1 + mp.cos(b * mp.pi))
        assert float(abs(lhs / mp.tan(b * mp.pi / 2) - 1)) <= 1e-14

    @given(st.floats(0.001, 0.9))
    @settings(max_examples=60, deadline=None)
    def test_half_angle_identity_float(self, beta):
        # 1 + cos(beta*pi) cancels as beta -> 1, so float64 is checked away from it
        lhs = math.sin(beta * math.pi) / (1 + math.cos(beta * math.pi))
        assert lhs == pytest.approx(math.tan(beta * math.pi / 2), rel=1e-14)

    def test_high_precision_oracle(self):
        mp.mp.dps = 30
        for s in (0.1, 0.35, 0.83):
            ref = 2 / mp.pi * mp.atan(mp.sqrt(2 * mp.pi) / s * mp.e ** (-mp.mpf(s) ** 2 / 2))
            assert matched_beta(s) == pytest.approx(float(ref), rel=1e-14)

    def test_fit_pairing(self):
        # the fit tables pair beta 0.72 with sigma 0.83
        assert round(matched_beta(0.83), 2) == 0.72


class TestEvalFs:
    def test_peak_at_mode(self):
        m = DrtModel([DrtProcess(Kind.LN, 0.2, 0.6)])
        s = np.linspace(m.processes[0].s_center - 5, m.processes[0].s_center + 5, 201)
        f = eval_f_s(m, s)
        dense = np.linspace(s[0], s[-1], 200001)
        mode = dense[np.argmax(eval_f_s(m, dense))]
        assert np.argmax(f) == np.argmin(np.abs(s - mode))

    def test_zero_scale_model(self):
        m = DrtModel([DrtProcess.rq(1.0, 0.5, 0.0), DrtProcess(Kind.LN, 1.0, 0.5, 0.0)])
        assert not np.any(eval_f_s(m, np.linspace(-5, 5, 11)))

    def test_set_a_ln_unimodal(self):
        s = np.linspace(math.log(1e-6), math.log(1e4), 200)
        f = eval_f_s(simulation_set("A-LN"), s)
        assert np.all(f >= 0)
        d = np.sign(np.diff(f))
        d = d[d != 0]
        assert np.count_nonzero(np.diff(d)) == 1

    def test_matches_g1(self, rng):
        m = simulation_set("B-LN")
        s = rng.uniform(-10, 5, 30)
        assert np.allclose(eval_f_s(m, s), eval_g1(m, np.exp(s)), rtol=1e-13, atol=1e-300)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            eval_f_s(ln_unit(), [0.0, np.inf])


class TestSimulationSets:
    def test_parameters(self):
        b = simulation_set("B-RQ").processes
        assert [p.shape for p in b] == [0.7, 0.5]
        assert [p.t0 for p in b] == pytest.approx([math.exp(-4), 1.0])
        c = simulation_set("C-LN").processes
        assert [p.mu for p in c] == pytest.approx([-5.0, -3.25], abs=1e-12)
        assert [p.shape for p in c] == pytest.approx([math.log(1.7), math.log(1.5)])
        assert [p.scale for p in c] == [0.7, 0.3]

    @pytest.mark.parametrize("alias", ["A-RQ", "RQ-A", "(1,RQ)", "rq_a", " a-rq "])
    def test_aliases(self, alias):
        assert canonical_set_name(alias) == "A-RQ"

    def test_unknown(self):
        with pytest.raises(KeyError):
            simulation_set("D-RQ")
