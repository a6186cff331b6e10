import math

import pytest
from hypothesis import given, strategies as st

from npupg.chip import (DEFAULT_BET, DEFAULT_WAKEUP_DELAY, MB, PRESETS, ConfigError, PowerParams,
                        closure_energy, dump_chip_config, load_chip_config, parse_chip_config,
                        preset, preset_path, transition_energy)

# Published hardware tables, copied by hand.
TABLE3 = {
    "NPU-A": dict(mhz=700, width=128, sa=2, vu=4, sram=32, hbm=600, ici=62, links=4),
    "NPU-B": dict(mhz=940, width=128, sa=4, vu=4, sram=32, hbm=900, ici=70, links=4),
    "NPU-C": dict(mhz=1050, width=128, sa=8, vu=4, sram=128, hbm=1200, ici=50, links=6),
    "NPU-D": dict(mhz=1750, width=128, sa=8, vu=6, sram=128, hbm=2765, ici=100, links=6),
    "NPU-E": dict(mhz=2000, width=256, sa=8, vu=8, sram=256, hbm=7400, ici=150, links=6),
}
TABLE4_DELAY = dict(sa_pe=1, sa_full=10, vu=2, hbm=60, ici=60, sram_sleep=4, sram_off=10)
TABLE4_BET = dict(sa_pe=47, sa_full=469, vu=32, hbm=412, ici=459, sram_sleep=41, sram_off=82)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_match_hardware_table(name):
    chip, pp = preset(name)
    t = TABLE3[name]
    assert chip.frequency_hz == t["mhz"] * 1e6
    assert (chip.sa_width, chip.num_sa, chip.num_vu) == (t["width"], t["sa"], t["vu"])
    assert chip.sram_bytes == t["sram"] * MB
    assert chip.hbm_bandwidth == t["hbm"] * 1e9
    assert chip.ici_link_bandwidth == t["ici"] * 1e9 and chip.ici_links == t["links"]
    assert chip.vu_lanes * chip.vu_sublanes == 8 * 128
    assert pp.wakeup_delay == TABLE4_DELAY and pp.bet == TABLE4_BET


def test_default_tables_match_delay_bet_table():
    assert DEFAULT_WAKEUP_DELAY == TABLE4_DELAY
    assert DEFAULT_BET == TABLE4_BET


def test_load_npu_d_file():
    chip, pp, fleet = load_chip_config(preset_path("NPU-D"))
    assert chip.frequency_hz == 1750e6 and chip.num_sa == 8 and chip.sa_width == 128
    assert chip.sram_bytes == 128 * MB
    assert fleet.duty_cycle == 0.6 and fleet.pue == 1.1


def test_npu_e_preset():
    chip, _ = preset("NPU-E")
    assert chip.sa_width == 256 and chip.sram_bytes == 256 * MB
    assert chip.hbm_type == "HBM3e" and chip.hbm_bandwidth == 7400e9


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("NPU-Z")


def _config_text(**override) -> str:
    chip, pp = preset("NPU-D")
    text = dump_chip_config(chip, pp)
    for k, v in override.items():
        lines = [f"{k} = {v}" if ln.startswith(f"{k} =") else ln for ln in text.splitlines()]
        text = "\n".join(lines) + "\n"
    return text


def test_zero_segment_size_rejected():
    with pytest.raises(ConfigError):
        parse_chip_config(_config_text(sram_segment_bytes=0))


def test_missing_leakage_ratios_get_defaults():
    text = "\n".join(ln for ln in _config_text().splitlines() if not ln.startswith("leakage_"))
    _, pp, _ = parse_chip_config(text)
    assert (pp.leakage_logic_off, pp.leakage_sram_sleep, pp.leakage_sram_off) == (0.03, 0.25, 0.002)


def test_dump_parse_round_trip():
    chip, pp = preset("NPU-C")
    chip2, pp2, _ = parse_chip_config(dump_chip_config(chip, pp))
    assert chip2 == chip and pp2 == pp


def test_malformed_toml():
    with pytest.raises(ConfigError):
        parse_chip_config("[chip\nname=")


def test_leakage_ordering_enforced():
    with pytest.raises(ConfigError):
        PowerParams(leakage_sram_off=0.3, leakage_sram_sleep=0.25)


def test_vu_threshold_floor():
    pp = PowerParams()
    assert pp.threshold("vu") == 10  # 32 // 3, above the floor of 8
    assert pp.with_bet(vu=12).threshold("vu") == 8
    with pytest.raises(ConfigError):
        PowerParams(idle_threshold={"vu": 4})


def test_closure_energy_example():
    # 1 W, 3 % off leakage, BET 32 cycles at 1 GHz -> 32 x 0.97 nJ
    assert math.isclose(closure_energy(32, 1.0, 0.03, 1e9), 31.04e-9, rel_tol=1e-12)


def test_closure_energy_zero_when_gating_saves_nothing():
    assert closure_energy(32, 1.0, 1.0, 1e9) == 0.0


def test_vu_transition_energy_consistent_with_bet(npu_d):
    chip, pp = npu_d
    e = transition_energy(chip, pp, "vu")
    saved_per_cycle = pp.static_w["vu"] * (1 - pp.leakage_logic_off) / chip.frequency_hz
    assert math.isclose(e / saved_per_cycle, 32, rel_tol=1e-12)


def test_undefined_component_mode():
    chip, pp = preset("NPU-D")
    with pytest.raises(ConfigError):
        transition_energy(chip, pp, "vu_sleep")


@given(bet=st.integers(1, 10_000), idle=st.integers(0, 20_000), p=st.floats(1e-3, 1e3),
       r=st.floats(0, 0.9), f=st.floats(1e8, 5e9))
def test_gating_pays_off_exactly_beyond_bet(bet, idle, p, r, f):
    stay_on = idle * p / f
    gated = idle * p * r / f + closure_energy(bet, p, r, f)
    diff = stay_on - gated
    if idle == bet:
        assert math.isclose(diff, 0.0, abs_tol=1e-9 * stay_on)
    else:
        assert (diff > 0) == (idle > bet)


@given(k=st.sampled_from(sorted(TABLE4_BET)), scale=st.floats(0.5, 4))
def test_scale_delays_keeps_keys(k, scale):
    pp = PowerParams().scale_delays(scale)
    assert set(pp.bet) == set(TABLE4_BET)
    assert pp.bet[k] == int(round(TABLE4_BET[k] * scale))
