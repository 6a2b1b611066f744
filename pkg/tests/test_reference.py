import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detpo.env import EnvKind, EnvParams
from detpo.reference import (BandSolution, LqrSolution, ThresholdSolution, band_policy, f_c, f_c_alt,
                             grid_search_scalar, lqr_policy, search_band_width, search_threshold,
                             solve_lqr, solve_reference, threshold_policy)


class TestFc:
    def test_known_value(self):
        assert f_c(np.sqrt(0.3)) == pytest.approx(0.417891, abs=1e-6)
        assert f_c_alt(np.sqrt(0.3)) == pytest.approx(0.417891, abs=1e-6)

    def test_forms_agree(self):
        x = np.logspace(-4, 4, 801)
        assert np.max(np.abs(f_c(x) - f_c_alt(x)) / f_c(x)) <= 1e-12 or \
            np.max(np.abs(f_c(x) - f_c_alt(x)) / f_c(x)) <= 1e-8

    def test_limits(self):
        assert f_c(1e-6) < 1e-5
        assert f_c(1e6) > 1 - 1e-5

    def test_rejects_nonpositive(self):
        for x in (0.0, -1.0):
            with pytest.raises(ValueError):
                f_c(x)

    @given(st.floats(1e-3, 1e3))
    def test_in_unit_interval(self, x):
        assert 0.0 < f_c(x) < 1.0


class TestSolveLqr:
    def test_paper_params(self):
        sol = solve_lqr(1.0, 0.3, 0.9)
        assert sol.omega == pytest.approx(0.417891, abs=1e-6)
        assert sol.psi == pytest.approx(0.877734, abs=1e-6)
        assert sol.psi == sol.omega / (1 - (1 - sol.omega) * 0.9)
        assert sol.markowitz_scale == pytest.approx(1 / 0.6)

    def test_costless(self):
        sol = solve_lqr(0.0, 0.3, 0.9)
        assert sol.omega == 1.0 and sol.psi == 1.0
        assert lqr_policy(0.7, 1.2, sol) == pytest.approx(1.2 / 0.6 - 0.7)

    def test_rho_zero(self):
        sol = solve_lqr(2.0, 0.5, 0.0)
        assert sol.psi == sol.omega

    def test_monotone_in_ratio(self):
        ratios = np.logspace(-2, 2, 50)
        om = [solve_lqr(1.0, r, 0.9).omega for r in ratios]
        assert np.all(np.diff(om) > 0)

    @pytest.mark.parametrize("args", [(1.0, 0.0, 0.9), (1.0, 0.3, 1.0), (-1.0, 0.3, 0.9)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            solve_lqr(*args)

    @given(g=st.floats(1e-3, 1e2), lam=st.floats(1e-3, 1e2), rho=st.floats(0.01, 0.99))
    def test_unit_interval(self, g, lam, rho):
        sol = solve_lqr(g, lam, rho)
        assert 0 < sol.omega < 1 and 0 < sol.psi < 1


class TestPolicies:
    sol = solve_lqr(1.0, 0.3, 0.9)

    def test_lqr_examples(self):
        assert lqr_policy(0.0, 0.0, self.sol) == 0.0
        p = 0.8
        assert lqr_policy(self.sol.psi * p / 0.6, p, self.sol) == pytest.approx(0.0, abs=1e-15)
        assert lqr_policy(1.0, 0.0, self.sol) == pytest.approx(-0.417891, abs=1e-6)
        k1, k2 = self.sol.gains
        assert k2 == pytest.approx(self.sol.omega * self.sol.psi / 0.6)

    def test_band_examples(self):
        sol = BandSolution(0.5, 0.3)
        m = 0.6 / 0.6
        assert band_policy(m + 0.2, 0.6, sol) == 0.0
        assert band_policy(m + 0.5 + 0.5, 0.6, sol) == pytest.approx(-0.5)
        zero = BandSolution(0.0, 0.3)
        assert band_policy(0.2, 0.6, zero) == pytest.approx(m - 0.2)
        with pytest.raises(ValueError):
            BandSolution(-0.1, 0.3)

    @given(pi=st.floats(-10, 10), p=st.floats(-4, 4), b=st.floats(0, 3))
    def test_band_never_overshoots(self, pi, p, b):
        sol = BandSolution(b, 0.3)
        m = p / 0.6
        new = pi + band_policy(pi, p, sol)
        assert m - b - 1e-9 <= new <= m + b + 1e-9 or new == pi

    def test_threshold_examples(self):
        sol = ThresholdSolution(0.3, 2.0)
        assert threshold_policy(1.0, 0.2, sol) == 0.0
        assert threshold_policy(2.0, 0.5, sol) == 0.0
        assert threshold_policy(-2.0, 0.1, ThresholdSolution(0.0, 2.0)) == 4.0

    @given(pi=st.floats(-2, 2), p=st.floats(-4, 4), q=st.floats(0, 1))
    def test_threshold_targets(self, pi, p, q):
        new = pi + threshold_policy(pi, p, ThresholdSolution(q, 2.0))
        assert new in (-2.0, pi, 2.0) or np.isclose(abs(new), 2.0)

    def test_vectorised(self):
        pi = np.linspace(-1, 1, 5)[:, None]
        p = np.linspace(-2, 2, 7)[None, :]
        assert lqr_policy(pi, p, self.sol).shape == (5, 7)
        assert band_policy(pi, p, BandSolution(0.3, 0.3)).shape == (5, 7)
        assert threshold_policy(pi, p, ThresholdSolution(0.3, 2.0)).shape == (5, 7)


class TestGridSearch:
    def test_argmax_and_ties(self):
        res = grid_search_scalar(lambda x, s: -(x - 0.3) ** 2, 0, 1, 11)
        assert res.best_param == pytest.approx(0.3)
        flat = grid_search_scalar(lambda x, s: 1.0, 0, 1, 11)
        assert flat.best_param == 0.0

    def test_tuple_objective(self):
        res = grid_search_scalar(lambda x, s: (-abs(x - 0.5), x), 0, 1, 5)
        assert res.best_param == 0.5 and np.allclose(res.pnl, res.grid)

    def test_invalid(self):
        with pytest.raises(ValueError):
            grid_search_scalar(lambda x, s: x, 1, 0, 5)
        with pytest.raises(ValueError):
            grid_search_scalar(lambda x, s: x, 0, 1, 1)

    def test_costless_band(self):
        prm = EnvParams("band", gamma_cost=0.0, lambda_risk=0.3)
        sol, _ = search_band_width(prm, n_episodes=2, horizon=500, refine=False)
        assert sol.half_width == 0.0

    def test_costless_threshold(self):
        prm = EnvParams("maxpos", gamma_cost=0.0, maxpos=2.0)
        sol, _ = search_threshold(prm, n_episodes=2, horizon=500, refine=False)
        assert sol.threshold == 0.0

    def test_deterministic_and_refined(self, tmp_path):
        prm = EnvParams("band", gamma_cost=4.0, lambda_risk=0.3)
        a, ra = search_band_width(prm, n_episodes=2, horizon=1000, seed=4)
        b, rb = search_band_width(prm, n_episodes=2, horizon=1000, seed=4)
        assert a == b and np.array_equal(ra.values, rb.values)
        assert len(ra.stages) == 2
        assert np.all(np.diff(ra.grid) >= 0)
        ra.to_csv(tmp_path / "g.csv")
        assert (tmp_path / "g.csv").read_text().startswith("param,mean_reward,mean_pnl")

    def test_wrong_kind(self):
        with pytest.raises(ValueError):
            search_band_width(EnvParams("lqr", lambda_risk=0.3))
        with pytest.raises(ValueError):
            search_threshold(EnvParams("lqr", lambda_risk=0.3))

    def test_solve_reference_dispatch(self):
        sol, search = solve_reference(EnvParams("lqr", lambda_risk=0.3))
        assert isinstance(sol, LqrSolution) and search is None
        sol, search = solve_reference(EnvParams("maxpos", gamma_cost=4.0, maxpos=2.0),
                                      n_episodes=1, horizon=300, refine=False)
        assert isinstance(sol, ThresholdSolution) and search is not None
