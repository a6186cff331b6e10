import math
import random
import time

import pytest
from hypothesis import given, strategies as st

from npupg.carbon import (J_PER_KWH, CarbonParams, cooling_cost, lifespan_sweep, operational_carbon)


def test_zero_energy_zero_carbon():
    assert operational_carbon(0, CarbonParams()) == 0


def test_thousand_kwh():
    assert operational_carbon(1000 * J_PER_KWH, CarbonParams()) == pytest.approx(62.4, rel=1e-12)


@given(st.floats(0, 1e15), st.floats(0.01, 10))
def test_linear_in_energy(e, k):
    cp = CarbonParams()
    assert operational_carbon(e * k, cp) == pytest.approx(k * operational_carbon(e, cp), rel=1e-12)
    assert operational_carbon(e / 2, cp) == pytest.approx(operational_carbon(e, cp) / 2, rel=1e-12)


def test_negative_energy_rejected():
    with pytest.raises(ValueError):
        operational_carbon(-1, CarbonParams())


@pytest.mark.parametrize("kw", [dict(carbon_intensity=0), dict(yearly_efficiency_ratio=0),
                                dict(yearly_efficiency_ratio=1.2), dict(horizon_years=0)])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        CarbonParams(**kw)


def test_no_embodied_always_upgrade():
    cp = CarbonParams(embodied_per_chip=0, yearly_efficiency_ratio=0.8, horizon_years=10)
    assert lifespan_sweep(cp, 1e12).optimal == 1


def test_flat_efficiency_never_upgrade():
    cp = CarbonParams(embodied_per_chip=100, yearly_efficiency_ratio=1.0, horizon_years=10)
    assert lifespan_sweep(cp, 1e12).optimal == 10


def test_csv_columns_and_single_optimum():
    cp = CarbonParams(embodied_per_chip=150, yearly_efficiency_ratio=0.8, horizon_years=12, chips=10)
    rep = lifespan_sweep(cp, 5e10, 0.2)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "lifespan,operational_kg,embodied_kg,total_kg,is_optimal"
    assert len(lines) == 13
    assert sum(int(ln.rsplit(",", 1)[1]) for ln in lines[1:]) == 1


def test_cooling_cost_per_watt():
    assert cooling_cost(100) == 700


# -- independent re-enumeration -------------------------------------------

def oracle(cp: CarbonParams, energy: float, saving: float):
    """Walk the horizon year by year, buying a new generation whenever the old one retires."""
    totals = {}
    for L in range(1, cp.horizon_years + 1):
        op = emb = 0.0
        bought = None
        for year in range(cp.horizon_years):
            if bought is None or year - bought >= L:
                bought = year
                emb += cp.embodied_per_chip * cp.chips
            kwh = energy * (1 - saving) * cp.yearly_efficiency_ratio ** bought / J_PER_KWH
            op += kwh * cp.carbon_intensity
        totals[L] = op + emb
    best = min(totals.values())
    return totals, max(L for L, v in totals.items() if v <= best * (1 + 1e-12))


def random_params(rng: random.Random):
    cp = CarbonParams(
        carbon_intensity=rng.uniform(0.01, 0.8),
        embodied_per_chip=rng.choice([0.0, rng.uniform(1, 5000)]),
        horizon_years=rng.randint(1, 15),
        yearly_efficiency_ratio=rng.choice([1.0, rng.uniform(0.3, 1.0)]),
        chips=rng.randint(1, 5000),
    )
    return cp, rng.uniform(1e9, 1e14), rng.choice([0.0, rng.uniform(0, 0.6)])


def test_argmin_matches_reenumeration():
    rng = random.Random(7)
    t0 = time.perf_counter()
    for _ in range(200):
        cp, e, s = random_params(rng)
        rep = lifespan_sweep(cp, e, s)
        totals, best = oracle(cp, e, s)
        for row in rep.rows:
            assert row.total_kg == pytest.approx(totals[row.lifespan], rel=1e-12)
        assert rep.optimal == best
        assert all(rep.rows[rep.optimal - 1].total_kg <= r.total_kg for r in rep.rows)
    assert time.perf_counter() - t0 < 10


def test_gating_never_shortens_lifespan():
    rng = random.Random(11)
    for _ in range(200):
        cp, e, _ = random_params(rng)
        base = lifespan_sweep(cp, e, 0.0).optimal
        for s in (0.05, 0.2, 0.5):
            assert lifespan_sweep(cp, e, s).optimal >= base


@given(emb=st.floats(0, 1e4), extra=st.floats(0, 1e4), ratio=st.floats(0.3, 1.0),
       horizon=st.integers(1, 15), energy=st.floats(1e9, 1e14))
def test_more_embodied_never_shortens_lifespan(emb, extra, ratio, horizon, energy):
    a = CarbonParams(embodied_per_chip=emb, yearly_efficiency_ratio=ratio, horizon_years=horizon)
    b = CarbonParams(embodied_per_chip=emb + extra, yearly_efficiency_ratio=ratio, horizon_years=horizon)
    assert lifespan_sweep(b, energy).optimal >= lifespan_sweep(a, energy).optimal


@given(emb=st.floats(1, 1e4), ratio=st.floats(0.3, 1.0), horizon=st.integers(1, 15),
       energy=st.floats(1e9, 1e14), scale=st.floats(1, 100))
def test_more_energy_never_lengthens_lifespan(emb, ratio, horizon, energy, scale):
    cp = CarbonParams(embodied_per_chip=emb, yearly_efficiency_ratio=ratio, horizon_years=horizon)
    assert lifespan_sweep(cp, energy * scale).optimal <= lifespan_sweep(cp, energy).optimal


def test_optimal_is_exhaustive_minimum():
    cp = CarbonParams(embodied_per_chip=150, yearly_efficiency_ratio=0.8, horizon_years=12, chips=4096)
    rep = lifespan_sweep(cp, 4096 * 3e9)
    assert rep.rows[rep.optimal - 1].total_kg == min(r.total_kg for r in rep.rows)
    assert not math.isnan(rep.rows[0].total_kg)
