"""Operational and embodied carbon, and the device-lifespan sweep."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

J_PER_KWH = 3.6e6
DEFAULT_INTENSITY = 0.0624  # kgCO2e per kWh


@dataclass(frozen=True)
class CarbonParams:
    carbon_intensity: float = DEFAULT_INTENSITY
    embodied_per_chip: float = 0.0
    horizon_years: int = 10
    yearly_efficiency_ratio: float = 1.0
    chips: int = 1

    def __post_init__(self):
        if not self.carbon_intensity > 0:
            raise ValueError("carbon_intensity must be > 0")
        if not 0 < self.yearly_efficiency_ratio <= 1:
            raise ValueError("yearly_efficiency_ratio must be in (0, 1]")
        if self.horizon_years < 1:
            raise ValueError("horizon_years must be >= 1")
        if self.embodied_per_chip < 0 or self.chips < 1:
            raise ValueError("embodied_per_chip must be >= 0 and chips >= 1")


@dataclass(frozen=True)
class LifespanRow:
    lifespan: int
    operational_kg: float
    embodied_kg: float

    @property
    def total_kg(self) -> float:
        return self.operational_kg + self.embodied_kg


@dataclass(frozen=True)
class CarbonReport:
    rows: tuple
    optimal: int
    saving_fraction: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lifespan", "operational_kg", "embodied_kg", "total_kg", "is_optimal"])
        for r in self.rows:
            w.writerow([r.lifespan, repr(r.operational_kg), repr(r.embodied_kg), repr(r.total_kg),
                        int(r.lifespan == self.optimal)])
        return buf.getvalue()


def operational_carbon(energy_joules_per_year: float, cp: CarbonParams) -> float:
    """kgCO2e per year for a fleet drawing ``energy_joules_per_year``."""
    if energy_joules_per_year < 0:
        raise ValueError("energy must be >= 0")
    return energy_joules_per_year / J_PER_KWH * cp.carbon_intensity


def lifespan_total(cp: CarbonParams, base_energy_per_year: float, saving: float, lifespan: int) -> LifespanRow:
    H, L = cp.horizon_years, lifespan
    e = base_energy_per_year * (1 - saving)
    # the generation in service in year t was bought in year L*floor(t/L)
    op = math.fsum(operational_carbon(e * cp.yearly_efficiency_ratio ** (L * (t // L)), cp) for t in range(H))
    emb = math.ceil(H / L) * cp.embodied_per_chip * cp.chips
    return LifespanRow(L, op, emb)


def lifespan_sweep(cp: CarbonParams, base_energy_per_year: float,
                   policy_saving_fraction: float = 0.0) -> CarbonReport:
    """Total carbon for every lifespan in 1..horizon; argmin ties go to the longer lifespan."""
    if base_energy_per_year < 0:
        raise ValueError("energy must be >= 0")
    if not 0 <= policy_saving_fraction < 1:
        raise ValueError("saving fraction must be in [0, 1)")
    rows = tuple(lifespan_total(cp, base_energy_per_year, policy_saving_fraction, L)
                 for L in range(1, cp.horizon_years + 1))
    best = min(r.total_kg for r in rows)
    optimal = max(r.lifespan for r in rows if r.total_kg <= best)
    return CarbonReport(rows, optimal, policy_saving_fraction)


def cooling_cost(avg_power_w: float, dollars_per_watt: float = 7.0) -> float:
    """Cooling capex for a chip drawing ``avg_power_w``."""
    return avg_power_w * dollars_per_watt
