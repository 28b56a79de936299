"""Payoff model tests.

Claims:
    - lognormal paths evaluate the closed exponential at x = 0 and match the
      closed-form call price in Monte Carlo over one million draws
    - the Euler recursion degenerates correctly with zero noise and reduces
      to one multiplicative step for constant volatility
    - claims (basket, digital, barriers, best-of, vanilla) implement their
      indicator/rectifier definitions and discounting
    - barrier payoffs are nondecreasing along the single-parameter path
      drift direction
    - claim/model compatibility is validated eagerly
"""

import numpy as np
import pytest
from pytest import approx

from tiltmc import (
    BarrierBasketCall,
    BarrierCall,
    Basket,
    BestOf,
    BlackScholesMulti,
    ConstantVol,
    Digital,
    IncompatibleClaim,
    LocalVol1D,
    NonFiniteInput,
    Payoff,
    PowerLawVol,
    TabulatedVol,
    VanillaCall,
    VanillaPut,
    asset_paths,
    bs_call_price,
    build_payoff,
    draw_samples,
    new_stream,
    path_drift_single,
)


def _basket40(rho=0.2, strike=50.0):
    model = BlackScholesMulti.create(40, [1.0], 50.0, 0.2, 0.05, rho)
    return model, Basket(weights=np.full(40, 1.0 / 40.0), strike=strike)


class TestAssetPaths:
    def test_bs_at_zero_noise(self):
        model = BlackScholesMulti.create(1, [1.0], 50.0, 0.2, 0.05)
        s = asset_paths(model, np.zeros(1))
        # S_T = S0 exp((r - sigma^2/2) T) = 50 e^{0.03}
        assert s[0, 0] == approx(50.0 * np.exp(0.03))
        assert s[0, 0] == approx(51.52273, abs=1e-5)

    def test_localvol_zero_vol_is_deterministic(self):
        model = LocalVol1D(spot=80.0, rate=0.03, maturity=1.0, n_steps=5, vol_fn=ConstantVol(1e-12))
        x = np.array([3.0, -2.0, 1.0, 0.0, 5.0])
        s = asset_paths(model, x)[:, 0]
        h = 1.0 / 5.0
        expected = 80.0 * (1.0 + 0.03 * h) ** np.arange(1, 6)
        assert s == approx(expected, rel=1e-9)

    def test_localvol_single_step_constant_vol(self):
        sigma, maturity = 0.25, 1.0
        model = LocalVol1D(spot=100.0, rate=0.05, maturity=maturity, n_steps=1, vol_fn=ConstantVol(sigma))
        x = np.array([0.7])
        s = asset_paths(model, x)
        assert s[0, 0] == approx(100.0 * (1.0 + sigma * np.sqrt(maturity) * 0.7 + 0.05 * maturity))

    def test_batched_evaluation_matches_single(self):
        model = BlackScholesMulti.create(2, [0.5, 1.0], [50.0, 60.0], [0.2, 0.3], 0.05, 0.4)
        rng = np.random.default_rng(5)
        batch = rng.standard_normal((7, model.dim))
        stacked = np.stack([asset_paths(model, row) for row in batch])
        assert asset_paths(model, batch) == approx(stacked)

    def test_terminal_law_matches_closed_form_call(self):
        model = BlackScholesMulti.create(1, [1.0], 100.0, 0.2, 0.05)
        payoff = build_payoff(model, VanillaCall(strike=100.0))
        block = draw_samples(new_stream(88, 0), 1_000_000, 1)
        values = payoff(block.values)
        se = values.std() / np.sqrt(values.size)
        assert values.mean() == approx(bs_call_price(100.0, 100.0, 0.05, 0.2, 1.0), abs=4 * se)


class TestClaims:
    def test_basket_at_zero_noise(self):
        model, claim = _basket40()
        payoff = build_payoff(model, claim)
        expected = np.exp(-0.05) * (50.0 * np.exp(0.03) - 50.0)
        assert payoff(np.zeros(40)) == approx(expected)
        assert payoff(np.zeros(40)) == approx(1.448462, abs=1e-5)

    def test_digital_below_level_pays_zero(self):
        model = BlackScholesMulti.create(1, [1.0], 100.0, 0.2, 0.05)
        payoff = build_payoff(model, Digital(level=140.0))
        assert payoff(np.zeros(1)) == 0.0
        # Far above the level it pays the discounted unit.
        assert payoff(np.array([10.0])) == approx(np.exp(-0.05))

    def test_barrier_knockout_annihilates(self):
        times = np.array([0.5, 1.0])
        model = BlackScholesMulti.create(1, times, 100.0, 0.2, 0.05)
        payoff = build_payoff(model, BarrierCall(strike=50.0, barrier=80.0))
        # First coordinate very negative: monitoring date breaches the
        # barrier even though the terminal value recovers above the strike.
        x = np.array([-4.0, 8.0])
        s = asset_paths(model, x)[:, 0]
        assert s[0] < 80.0 < s[1]
        assert payoff(x) == 0.0

    def test_vanilla_call_closed_chain(self):
        model = BlackScholesMulti.create(1, [1.0], 100.0, 0.2, 0.05)
        payoff = build_payoff(model, VanillaCall(strike=95.0))
        rng = np.random.default_rng(17)
        for x in rng.standard_normal(10):
            expected = np.exp(-0.05) * max(
                100.0 * np.exp((0.05 - 0.02) * 1.0 + 0.2 * x) - 95.0, 0.0
            )
            assert payoff(np.array([x])) == approx(expected)

    def test_best_of_single_asset_is_vanilla(self):
        model = BlackScholesMulti.create(1, [1.0], 100.0, 0.2, 0.05)
        best = build_payoff(model, BestOf(weights=np.array([1.0]), strike=90.0))
        call = build_payoff(model, VanillaCall(strike=90.0))
        x = np.linspace(-2, 2, 9).reshape(-1, 1)
        assert best(x) == approx(call(x))

    def test_exchange_basket_cancels_at_zero_noise(self):
        weights = np.array([0.1] * 5 + [-0.1] * 5)
        model = BlackScholesMulti.create(10, [1.0], 100.0, 0.2, 0.05, 0.2)
        payoff = build_payoff(model, Basket(weights=weights, strike=0.0))
        assert payoff(np.zeros(10)) == approx(0.0, abs=1e-10)

    def test_doubling_weights_doubles_zero_strike_basket(self):
        model = BlackScholesMulti.create(3, [1.0], 100.0, 0.2, 0.05, 0.1)
        w = np.array([0.2, 0.3, 0.5])
        single = build_payoff(model, Basket(weights=w, strike=0.0))
        double = build_payoff(model, Basket(weights=2 * w, strike=0.0))
        x = np.random.default_rng(3).standard_normal((20, 3))
        assert double(x) == approx(2.0 * single(x))

    def test_barrier_basket_requires_all_assets_alive(self):
        times = np.array([1.0])
        model = BlackScholesMulti.create(2, times, [50.0, 50.0], [0.2, 0.2], 0.05, 0.0)
        payoff = build_payoff(
            model,
            BarrierBasketCall(weights=np.array([0.5, 0.5]), strike=10.0, barriers=np.array([40.0, 40.0])),
        )
        # Second asset crashes through its barrier.
        x = np.array([0.5, -8.0])
        assert payoff(x) == 0.0

    def test_put_is_negative_weight_basket(self):
        model = BlackScholesMulti.create(1, [1.0], 100.0, 0.2, 0.05)
        put = build_payoff(model, VanillaPut(strike=95.0))
        flipped = build_payoff(model, Basket(weights=np.array([-1.0]), strike=-95.0))
        x = np.linspace(-3, 3, 13).reshape(-1, 1)
        assert put(x) == approx(flipped(x))


class TestMonotonicityAlongDrift:
    def test_barrier_call_nondecreasing_in_path_drift(self):
        times = 2.0 / 24.0 * np.arange(1, 25)
        model = BlackScholesMulti.create(1, times, 100.0, 0.2, 0.05)
        payoff = build_payoff(model, BarrierCall(strike=110.0, barrier=80.0))
        drift = path_drift_single(times)
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = rng.standard_normal(24)
            lo, hi = np.sort(rng.uniform(-2.0, 2.0, 2))
            below = payoff(x + drift.apply([lo]))
            above = payoff(x + drift.apply([hi]))
            assert above >= below - 1e-12


class TestValidation:
    def test_weight_count_mismatch(self):
        model = BlackScholesMulti.create(3, [1.0], 100.0, 0.2, 0.05, 0.1)
        with pytest.raises(IncompatibleClaim):
            build_payoff(model, Basket(weights=np.ones(2), strike=1.0))

    def test_digital_needs_single_asset(self):
        model = BlackScholesMulti.create(2, [1.0], 100.0, 0.2, 0.05, 0.1)
        with pytest.raises(IncompatibleClaim):
            build_payoff(model, Digital(level=100.0))

    def test_non_finite_input_rejected(self):
        model = BlackScholesMulti.create(1, [1.0], 100.0, 0.2, 0.05)
        payoff = build_payoff(model, VanillaCall(strike=100.0))
        with pytest.raises(NonFiniteInput):
            payoff(np.array([np.nan]))

    def test_dimension_mismatch_rejected(self):
        model = BlackScholesMulti.create(1, [1.0], 100.0, 0.2, 0.05)
        payoff = build_payoff(model, VanillaCall(strike=100.0))
        with pytest.raises(ValueError):
            payoff(np.zeros(2))

    def test_from_function_wrapper(self):
        payoff = Payoff.from_function(1, lambda x: np.exp(0.2 * x[..., 0]))
        assert payoff(np.array([1.0])) == approx(np.exp(0.2))
        assert payoff(np.zeros((4, 1))) == approx(np.ones(4))


class TestLocalVolSurfaces:
    def test_power_law_clamps(self):
        vol = PowerLawVol(sigma=0.2, gamma=0.5, ref_spot=100.0, floor=0.1, cap=0.4)
        s = np.array([1e-8, 100.0, 1e8])
        out = vol(0.0, s)
        assert out[0] == approx(0.4)  # tiny spot, gamma < 1 blows up, capped
        assert out[1] == approx(0.2)
        assert out[2] == approx(0.1)  # huge spot decays, floored

    def test_tabulated_from_csv(self, tmp_path):
        path = tmp_path / "vol.csv"
        rows = ["# t, s, sigma"]
        for t in (0.0, 1.0):
            for s in (50.0, 150.0):
                rows.append(f"{t},{s},{0.2 + 0.1 * t + 0.001 * (s - 50.0)}")
        path.write_text("\n".join(rows) + "\n")
        vol = TabulatedVol.from_csv(path)
        assert vol(0.0, np.array([50.0]))[0] == approx(0.2)
        assert vol(1.0, np.array([150.0]))[0] == approx(0.4)
        # Bilinear midpoint and edge clamping.
        assert vol(0.5, np.array([100.0]))[0] == approx(0.3)
        assert vol(-1.0, np.array([0.0]))[0] == approx(0.2)

    def test_tabulated_requires_full_grid(self, tmp_path):
        path = tmp_path / "vol.csv"
        path.write_text("0,50,0.2\n0,150,0.2\n1,50,0.3\n")
        with pytest.raises(ValueError):
            TabulatedVol.from_csv(path)

    def test_localvol_paths_with_table(self, tmp_path):
        path = tmp_path / "vol.csv"
        path.write_text("0,50,0.2\n0,150,0.2\n2,50,0.2\n2,150,0.2\n")
        vol = TabulatedVol.from_csv(path)
        model_tab = LocalVol1D(spot=100.0, rate=0.05, maturity=1.0, n_steps=4, vol_fn=vol)
        model_const = LocalVol1D(spot=100.0, rate=0.05, maturity=1.0, n_steps=4, vol_fn=ConstantVol(0.2))
        x = np.random.default_rng(2).standard_normal((6, 4))
        assert asset_paths(model_tab, x) == approx(asset_paths(model_const, x))
