"""Chip configuration, power coefficients and power-gating constants.

Architecture presets live in ``presets/chips/*.toml``.  Keys carry their
units (``frequency_mhz``, ``hbm_bandwidth_gbps`` ...); SRAM sizes are binary
megabytes, bandwidths decimal gigabytes per second.  Static power for SAs and
VUs is given per unit, everything else per chip.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import tomli
import tomli_w

MB = 1 << 20
GB = 1 << 30

PRESETS = ("NPU-A", "NPU-B", "NPU-C", "NPU-D", "NPU-E")

# (component, mode) keys used for wake-up delays and break-even times
GATING_KEYS = ("sa_pe", "sa_full", "vu", "hbm", "ici", "sram_sleep", "sram_off")

DEFAULT_WAKEUP_DELAY = {
    "sa_pe": 1, "sa_full": 10, "vu": 2, "hbm": 60, "ici": 60,
    "sram_sleep": 4, "sram_off": 10,
}
DEFAULT_BET = {
    "sa_pe": 47, "sa_full": 469, "vu": 32, "hbm": 412, "ici": 459,
    "sram_sleep": 41, "sram_off": 82,
}
DEFAULT_STATIC_W = {
    "sa": 2.5, "vu": 1.0, "sram": 32.0, "hbm_ctrl": 20.0, "ici_ctrl": 12.0,
    "uncore": 65.0,
}
DEFAULT_DYNAMIC_PJ = {
    "sa_mac": 0.25, "vu_lane_op": 0.5, "sram_byte": 0.3, "hbm_byte": 20.0,
    "ici_byte": 15.0, "instr_issue": 50.0, "setpm_issue": 5.0,
}
STATIC_COMPONENTS = tuple(DEFAULT_STATIC_W)
ACTIVITIES = tuple(DEFAULT_DYNAMIC_PJ)

VU_MIN_THRESHOLD = 8


class ConfigError(ValueError):
    """Configuration failed to parse or violates an invariant."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class ChipConfig:
    name: str
    frequency_hz: float
    sa_width: int
    num_sa: int
    num_vu: int
    sram_bytes: int
    hbm_bandwidth: float  # bytes / second
    hbm_bytes: int
    ici_links: int
    ici_link_bandwidth: float  # bytes / second
    vu_lanes: int = 8
    vu_sublanes: int = 128
    sram_segment_bytes: int = 4096
    hbm_latency: int = 500  # cycles
    ici_latency: int = 1200  # cycles
    dma_queue_depth: int = 16
    technology: str = ""
    year: int | None = None
    hbm_type: str = ""

    def __post_init__(self):
        _require(_is_pow2(self.sa_width), f"{self.name}: sa_width must be a positive power of two")
        for f in ("frequency_hz", "num_sa", "num_vu", "sram_bytes", "sram_segment_bytes",
                  "hbm_bandwidth", "hbm_bytes", "hbm_latency", "ici_links",
                  "ici_link_bandwidth", "ici_latency", "dma_queue_depth",
                  "vu_lanes", "vu_sublanes"):
            _require(getattr(self, f) > 0, f"{self.name}: {f} must be strictly positive")
        _require(self.sram_bytes % self.sram_segment_bytes == 0,
                 f"{self.name}: sram_bytes must be divisible by sram_segment_bytes")
        _require(self.num_sa <= 8 and self.num_vu <= 8,
                 f"{self.name}: setpm fu_id bitmaps hold at most 8 units")

    @property
    def num_segments(self) -> int:
        return self.sram_bytes // self.sram_segment_bytes

    @property
    def vu_width(self) -> int:
        """Elements one VU processes per cycle."""
        return self.vu_lanes * self.vu_sublanes

    @property
    def hbm_bytes_per_cycle(self) -> float:
        return self.hbm_bandwidth / self.frequency_hz

    @property
    def peak_macs_per_cycle(self) -> int:
        return self.num_sa * self.sa_width ** 2


@dataclass(frozen=True)
class PowerParams:
    static_w: dict = field(default_factory=lambda: dict(DEFAULT_STATIC_W))
    dynamic_pj: dict = field(default_factory=lambda: dict(DEFAULT_DYNAMIC_PJ))
    leakage_logic_off: float = 0.03
    leakage_sram_sleep: float = 0.25
    leakage_sram_off: float = 0.002
    pe_weight_fraction: float = 0.15
    wakeup_delay: dict = field(default_factory=lambda: dict(DEFAULT_WAKEUP_DELAY))
    bet: dict = field(default_factory=lambda: dict(DEFAULT_BET))
    sram_sweep_period: int = 1365
    idle_threshold: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("leakage_logic_off", "leakage_sram_sleep", "leakage_sram_off",
                     "pe_weight_fraction"):
            v = getattr(self, name)
            _require(0.0 <= v <= 1.0, f"{name}={v} outside [0, 1]")
        _require(self.leakage_sram_off < self.leakage_sram_sleep < 1.0,
                 "leakage ratios must satisfy sram_off < sram_sleep < 1")
        _require(set(self.static_w) == set(STATIC_COMPONENTS),
                 f"static_w needs exactly {STATIC_COMPONENTS}")
        _require(set(self.dynamic_pj) == set(ACTIVITIES),
                 f"dynamic_pj needs exactly {ACTIVITIES}")
        _require(all(v >= 0 for v in self.static_w.values()), "static power must be >= 0")
        _require(all(v >= 0 for v in self.dynamic_pj.values()), "dynamic energy must be >= 0")
        for table in ("wakeup_delay", "bet"):
            t = getattr(self, table)
            _require(set(t) == set(GATING_KEYS), f"{table} needs exactly {GATING_KEYS}")
            _require(all(isinstance(v, int) and v >= 0 for v in t.values()),
                     f"{table} entries must be non-negative integers")
        _require(self.sram_sweep_period >= 1, "sram_sweep_period must be >= 1")
        _require(set(self.idle_threshold) <= {"sa_full", "vu", "hbm", "ici"},
                 "idle_threshold keys must be among sa_full, vu, hbm, ici")
        _require(all(v >= 1 for v in self.idle_threshold.values()), "idle thresholds must be >= 1")
        if "vu" in self.idle_threshold:
            _require(self.idle_threshold["vu"] >= VU_MIN_THRESHOLD,
                     f"VU idle threshold must be >= {VU_MIN_THRESHOLD}")

    def gated_ratio(self, key: str) -> float:
        if key == "sram_sleep":
            return self.leakage_sram_sleep
        if key == "sram_off":
            return self.leakage_sram_off
        if key == "sa_pe_won":
            return self.pe_weight_fraction
        return self.leakage_logic_off

    def threshold(self, key: str) -> int:
        """Idle-detection window: a third of the BET, at least 8 cycles for VUs."""
        if key in self.idle_threshold:
            return self.idle_threshold[key]
        t = max(1, self.bet[key] // 3)
        if key == "vu":
            t = max(VU_MIN_THRESHOLD, t)
        return t

    def with_overrides(self, **kw) -> "PowerParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return PowerParams(**d)

    def with_bet(self, **bets: int) -> "PowerParams":
        return self.with_overrides(bet={**self.bet, **bets})

    def scale_delays(self, factor: float) -> "PowerParams":
        """Multiply wake-up delays and BETs by ``factor`` (sensitivity sweeps)."""
        return self.with_overrides(
            wakeup_delay={k: int(round(v * factor)) for k, v in self.wakeup_delay.items()},
            bet={k: int(round(v * factor)) for k, v in self.bet.items()},
        )


@dataclass(frozen=True)
class FleetParams:
    duty_cycle: float = 0.60
    pue: float = 1.1

    def __post_init__(self):
        _require(0.0 < self.duty_cycle <= 1.0, "duty_cycle must be in (0, 1]")
        _require(self.pue >= 1.0, "pue must be >= 1")


def unit_static_power(chip: ChipConfig, pp: PowerParams, key: str) -> float:
    """ON static power of the unit a gating key applies to (one PE, one VU, one segment...)."""
    s = pp.static_w
    if key in ("sa_pe", "sa_pe_won"):
        return s["sa"] / chip.sa_width ** 2
    if key == "sa_full":
        return s["sa"]
    if key == "vu":
        return s["vu"]
    if key == "hbm":
        return s["hbm_ctrl"]
    if key == "ici":
        return s["ici_ctrl"]
    if key in ("sram_sleep", "sram_off"):
        return s["sram"] / chip.num_segments
    raise ConfigError(f"undefined component/mode pair {key!r}")


def closure_energy(bet_cycles: float, static_on_w: float, gated_ratio: float,
                   frequency_hz: float) -> float:
    """Round-trip transition energy that makes gating for ``bet_cycles`` energy neutral."""
    return bet_cycles * static_on_w * (1.0 - gated_ratio) / frequency_hz


def transition_energy(chip: ChipConfig, pp: PowerParams, key: str) -> float:
    """Joules charged per gate/wake round trip of one unit for gating key ``key``."""
    bet_key = "sa_pe" if key == "sa_pe_won" else key
    if bet_key not in pp.bet:
        raise ConfigError(f"undefined component/mode pair {key!r}")
    return closure_energy(pp.bet[bet_key], unit_static_power(chip, pp, key),
                          pp.gated_ratio(key), chip.frequency_hz)


# -- serialization ---------------------------------------------------------

def _chip_from_table(t: dict) -> ChipConfig:
    try:
        return ChipConfig(
            name=str(t["name"]),
            frequency_hz=float(t["frequency_mhz"]) * 1e6,
            sa_width=int(t["sa_width"]),
            num_sa=int(t["num_sa"]),
            num_vu=int(t["num_vu"]),
            vu_lanes=int(t.get("vu_lanes", 8)),
            vu_sublanes=int(t.get("vu_sublanes", 128)),
            sram_bytes=int(round(float(t["sram_mb"]) * MB)),
            sram_segment_bytes=int(t.get("sram_segment_bytes", 4096)),
            hbm_bandwidth=float(t["hbm_bandwidth_gbps"]) * 1e9,
            hbm_bytes=int(round(float(t["hbm_gb"]) * GB)),
            hbm_latency=int(t.get("hbm_latency_cycles", 500)),
            ici_links=int(t["ici_links"]),
            ici_link_bandwidth=float(t["ici_link_bandwidth_gbps"]) * 1e9,
            ici_latency=int(t.get("ici_latency_cycles", 1200)),
            dma_queue_depth=int(t.get("dma_queue_depth", 16)),
            technology=str(t.get("technology", "")),
            year=int(t["year"]) if "year" in t else None,
            hbm_type=str(t.get("hbm_type", "")),
        )
    except KeyError as e:
        raise ConfigError(f"chip table missing required key {e.args[0]!r}") from None


def _power_from_table(t: dict) -> PowerParams:
    leak = t.get("leakage", {})
    kw = dict(
        static_w={**DEFAULT_STATIC_W, **t.get("static_w", {})},
        dynamic_pj={**DEFAULT_DYNAMIC_PJ, **t.get("dynamic_pj", {})},
        leakage_logic_off=float(leak.get("logic_off", 0.03)),
        leakage_sram_sleep=float(leak.get("sram_sleep", 0.25)),
        leakage_sram_off=float(leak.get("sram_off", 0.002)),
        pe_weight_fraction=float(leak.get("pe_weight_register", 0.15)),
        wakeup_delay={**DEFAULT_WAKEUP_DELAY, **t.get("wakeup_delay_cycles", {})},
        bet={**DEFAULT_BET, **t.get("bet_cycles", {})},
        sram_sweep_period=int(t.get("sram_sweep_period_cycles", 1365)),
        idle_threshold=dict(t.get("idle_threshold_cycles", {})),
    )
    return PowerParams(**kw)


def parse_chip_config(text: str) -> tuple[ChipConfig, PowerParams, FleetParams]:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"malformed config: {e}") from None
    if "chip" not in doc:
        raise ConfigError("config has no [chip] table")
    chip = _chip_from_table(doc["chip"])
    power = _power_from_table(doc.get("power", {}))
    fl = doc.get("fleet", {})
    fleet = FleetParams(duty_cycle=float(fl.get("duty_cycle", 0.60)), pue=float(fl.get("pue", 1.1)))
    return chip, power, fleet


def load_chip_config(path) -> tuple[ChipConfig, PowerParams, FleetParams]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_chip_config(p.read_text())


def _num(x: float):
    return int(x) if float(x).is_integer() else x


def dump_chip_config(chip: ChipConfig, pp: PowerParams, fleet: FleetParams | None = None) -> str:
    c = {
        "name": chip.name,
        "technology": chip.technology,
        "frequency_mhz": _num(chip.frequency_hz / 1e6),
        "sa_width": chip.sa_width,
        "num_sa": chip.num_sa,
        "num_vu": chip.num_vu,
        "vu_lanes": chip.vu_lanes,
        "vu_sublanes": chip.vu_sublanes,
        "sram_mb": _num(chip.sram_bytes / MB),
        "sram_segment_bytes": chip.sram_segment_bytes,
        "hbm_type": chip.hbm_type,
        "hbm_bandwidth_gbps": _num(chip.hbm_bandwidth / 1e9),
        "hbm_gb": _num(chip.hbm_bytes / GB),
        "hbm_latency_cycles": chip.hbm_latency,
        "ici_links": chip.ici_links,
        "ici_link_bandwidth_gbps": _num(chip.ici_link_bandwidth / 1e9),
        "ici_latency_cycles": chip.ici_latency,
        "dma_queue_depth": chip.dma_queue_depth,
    }
    if chip.year is not None:
        c["year"] = chip.year
    power = {
        "sram_sweep_period_cycles": pp.sram_sweep_period,
        "static_w": dict(pp.static_w),
        "dynamic_pj": dict(pp.dynamic_pj),
        "leakage": {
            "logic_off": pp.leakage_logic_off,
            "sram_sleep": pp.leakage_sram_sleep,
            "sram_off": pp.leakage_sram_off,
            "pe_weight_register": pp.pe_weight_fraction,
        },
        "wakeup_delay_cycles": dict(pp.wakeup_delay),
        "bet_cycles": dict(pp.bet),
    }
    if pp.idle_threshold:
        power["idle_threshold_cycles"] = dict(pp.idle_threshold)
    doc = {"chip": c, "power": power}
    if fleet is not None:
        doc["fleet"] = asdict(fleet)
    return tomli_w.dumps(doc)


def preset_path(name: str):
    key = name.strip().upper()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("npupg") / "presets" / "chips" / f"{key.lower()}.toml"


def preset(name: str) -> tuple[ChipConfig, PowerParams]:
    chip, power, _ = parse_chip_config(preset_path(name).read_text())
    return chip, power


def resolve_chip(spec: str) -> tuple[ChipConfig, PowerParams, FleetParams]:
    """Accept a preset name (``npu-d``) or a path to a config file."""
    if spec.strip().upper() in PRESETS:
        return parse_chip_config(preset_path(spec).read_text())
    return load_chip_config(spec)


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def cycles(seconds: float, chip: ChipConfig) -> int:
    return int(math.ceil(seconds * chip.frequency_hz))
