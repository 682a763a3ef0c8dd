"""Radar, waveform, DDM and sequence-timing configuration.

All quantities are SI. The helpers here compute the range limits and the
single-sequence unambiguous velocity of a chirp-sequence FMCW radar, and
validate a configuration before it is handed to the simulator or the
estimators.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_HZ = 76.5e9


class ScenarioError(ValueError):
    """Raised when a scenario fails validation where a valid one is required."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"invalid scenario: {lines}")


@dataclass(frozen=True)
class WaveformConfig:
    bandwidth_hz: float
    carrier_hz: float
    sample_rate_hz: float
    fast_time_samples: int
    chirp_repetition_interval_s: float

    @property
    def acquisition_time_s(self) -> float:
        """Chirp acquisition interval ``T_c = N / f_s``."""
        return self.fast_time_samples / self.sample_rate_hz

    @property
    def chirp_slope_hz_per_s(self) -> float:
        return self.bandwidth_hz / self.acquisition_time_s

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class SequencePlan:
    num_sequences: int
    chirps_per_sequence: int
    sequence_offsets_s: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "sequence_offsets_s", tuple(float(t) for t in self.sequence_offsets_s))


@dataclass(frozen=True)
class DdmScheme:
    num_tx: int
    ddm_freqs_hz: tuple[float, ...]
    tx_positions_m: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "ddm_freqs_hz", tuple(float(f) for f in self.ddm_freqs_hz))
        object.__setattr__(self, "tx_positions_m", tuple(float(d) for d in self.tx_positions_m))

    @classmethod
    def uniform(cls, num_tx: int, chirp_repetition_interval_s: float,
                carrier_hz: float = DEFAULT_CARRIER_HZ) -> "DdmScheme":
        """Uniform DDM: ``f_k = k / (K T_ri)``, half-wavelength Tx spacing."""
        freqs = tuple(k / (num_tx * chirp_repetition_interval_s) for k in range(num_tx))
        half_lambda = SPEED_OF_LIGHT / carrier_hz / 2
        return cls(num_tx, freqs, tuple(k * half_lambda for k in range(num_tx)))

    def phase_steps(self, chirp_repetition_interval_s: float) -> np.ndarray:
        """Per-chirp DDM phase increments ``2 pi f_k T_ri`` (rad)."""
        return 2 * np.pi * np.asarray(self.ddm_freqs_hz) * chirp_repetition_interval_s


@dataclass(frozen=True)
class RadarScenario:
    waveform: WaveformConfig
    plan: SequencePlan
    ddm: DdmScheme
    num_rx: int = 1
    noise_variance: float = 0.0

    @property
    def offsets(self) -> np.ndarray:
        return np.asarray(self.plan.sequence_offsets_s)

    @property
    def t_ri(self) -> float:
        return self.waveform.chirp_repetition_interval_s

    def with_noise(self, noise_variance: float) -> "RadarScenario":
        return replace(self, noise_variance=float(noise_variance))

    def with_num_tx(self, num_tx: int) -> "RadarScenario":
        """Same timing with a uniform DDM scheme of ``num_tx`` transmitters."""
        ddm = DdmScheme.uniform(num_tx, self.t_ri, self.waveform.carrier_hz)
        return replace(self, ddm=ddm)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["plan"]["sequence_offsets_s"] = list(self.plan.sequence_offsets_s)
        out["ddm"]["ddm_freqs_hz"] = list(self.ddm.ddm_freqs_hz)
        out["ddm"]["tx_positions_m"] = list(self.ddm.tx_positions_m)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RadarScenario":
        w = WaveformConfig(**data["waveform"])
        p = data["plan"]
        offsets = p["sequence_offsets_s"]
        plan = SequencePlan(int(p.get("num_sequences", len(offsets))),
                            int(p["chirps_per_sequence"]), offsets)
        d = data.get("ddm", {"num_tx": 1})
        num_tx = int(d["num_tx"])
        if d.get("ddm_freqs_hz") is None:
            uni = DdmScheme.uniform(num_tx, w.chirp_repetition_interval_s, w.carrier_hz)
            freqs = uni.ddm_freqs_hz
            positions = d.get("tx_positions_m") or uni.tx_positions_m
        else:
            freqs = d["ddm_freqs_hz"]
            positions = d.get("tx_positions_m") or [0.0] * num_tx
        ddm = DdmScheme(num_tx, freqs, positions)
        return cls(w, plan, ddm, int(data.get("num_rx", 1)), float(data.get("noise_variance", 0.0)))


def load_scenario(path) -> RadarScenario:
    """Read a scenario from its JSON file (schema in the README)."""
    return RadarScenario.from_dict(json.loads(Path(path).read_text()))


def save_scenario(scenario: RadarScenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2))


def paper_scenario(noise_variance: float = 0.0, carrier_hz: float = DEFAULT_CARRIER_HZ) -> RadarScenario:
    """Two sequences of 256 chirps, four DDM transmitters, ``T_ri`` = 65.1 us, ``T_2`` = 34 us.

    Carrier, bandwidth, sample rate and fast-time length are not part of
    that configuration; the defaults give 1 m range bins and 128 m
    maximum range.
    """
    t_ri = 65.1e-6
    waveform = WaveformConfig(bandwidth_hz=150e6, carrier_hz=carrier_hz, sample_rate_hz=20e6,
                              fast_time_samples=256, chirp_repetition_interval_s=t_ri)
    plan = SequencePlan(2, 256, (0.0, 34e-6))
    return RadarScenario(waveform, plan, DdmScheme.uniform(4, t_ri, carrier_hz),
                         num_rx=4, noise_variance=noise_variance)


def range_limits(w: WaveformConfig) -> tuple[float, float]:
    """Range resolution and maximum range, ``(c/2B, c f_s T_c / 4B)``."""
    delta_r = SPEED_OF_LIGHT / (2 * w.bandwidth_hz)
    r_max = SPEED_OF_LIGHT * w.sample_rate_hz * w.acquisition_time_s / (4 * w.bandwidth_hz)
    return delta_r, r_max


def unambiguous_velocity(w: WaveformConfig, d: DdmScheme) -> float:
    """Largest absolute velocity a single sequence resolves, ``lambda / (4 K T_ri)``."""
    return w.wavelength_m / (4 * d.num_tx * w.chirp_repetition_interval_s)


def doppler_to_velocity(doppler_hz, w: WaveformConfig):
    return np.asarray(doppler_hz) * w.wavelength_m / 2


def velocity_to_doppler(velocity_mps, w: WaveformConfig):
    return 2 * np.asarray(velocity_mps) / w.wavelength_m


@dataclass(frozen=True)
class Diagnostic:
    field: str
    constraint: str
    observed: object
    severity: str = "error"

    def __str__(self):
        return f"[{self.severity}] {self.field}: {self.constraint} (observed {self.observed!r})"


def _wrap_2pi(x):
    return np.mod(x + np.pi, 2 * np.pi) - np.pi


def validate_scenario(s: RadarScenario, sweep_interval_mps: Optional[Sequence[float]] = None,
                      ambiguity_resolving: bool = False) -> list[Diagnostic]:
    """Check every configuration invariant.

    Returns one :class:`Diagnostic` per violated constraint; an empty list
    means the scenario is usable. Warnings (``severity == "warning"``) do
    not make a scenario invalid; they flag a requested velocity sweep that
    is wider than the extended unambiguous span.
    """
    out: list[Diagnostic] = []
    w, p, d = s.waveform, s.plan, s.ddm

    def err(fld, constraint, observed):
        out.append(Diagnostic(fld, constraint, observed))

    for name in ("bandwidth_hz", "carrier_hz", "sample_rate_hz"):
        val = getattr(w, name)
        if not (val > 0 and math.isfinite(val)):
            err(f"waveform.{name}", "> 0", val)
    if w.fast_time_samples < 2:
        err("waveform.fast_time_samples", ">= 2", w.fast_time_samples)
    if w.sample_rate_hz > 0 and w.chirp_repetition_interval_s < w.acquisition_time_s:
        err("waveform.chirp_repetition_interval_s", f">= T_c = {w.acquisition_time_s:g}",
            w.chirp_repetition_interval_s)

    offsets = p.sequence_offsets_s
    if p.num_sequences < 1:
        err("plan.num_sequences", ">= 1", p.num_sequences)
    if ambiguity_resolving and p.num_sequences < 2:
        err("plan.num_sequences", ">= 2 for ambiguity resolving", p.num_sequences)
    if p.chirps_per_sequence < 4:
        err("plan.chirps_per_sequence", ">= 4", p.chirps_per_sequence)
    if len(offsets) != p.num_sequences:
        err("plan.sequence_offsets_s", f"length == num_sequences ({p.num_sequences})", len(offsets))
    if offsets and offsets[0] != 0:
        err("plan.sequence_offsets_s", "first offset == 0", offsets[0])
    if any(t < 0 for t in offsets):
        err("plan.sequence_offsets_s", "all offsets >= 0", list(offsets))
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        err("plan.sequence_offsets_s", "strictly increasing", list(offsets))

    if d.num_tx < 1:
        err("ddm.num_tx", ">= 1", d.num_tx)
    if len(d.ddm_freqs_hz) != d.num_tx:
        err("ddm.ddm_freqs_hz", f"length == num_tx ({d.num_tx})", len(d.ddm_freqs_hz))
    if len(d.tx_positions_m) != d.num_tx:
        err("ddm.tx_positions_m", f"length == num_tx ({d.num_tx})", len(d.tx_positions_m))
    if d.ddm_freqs_hz and d.ddm_freqs_hz[0] != 0:
        err("ddm.ddm_freqs_hz", "reference transmitter frequency == 0", d.ddm_freqs_hz[0])
    if len(d.ddm_freqs_hz) > 1 and w.chirp_repetition_interval_s > 0:
        steps = d.phase_steps(w.chirp_repetition_interval_s)
        gaps = np.abs(_wrap_2pi(steps[:, None] - steps[None, :]))
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < 1e-9:
            err("ddm.ddm_freqs_hz", "DDM phase steps distinct modulo 2*pi", list(d.ddm_freqs_hz))

    if s.num_rx < 1:
        err("num_rx", ">= 1", s.num_rx)
    if not s.noise_variance >= 0:
        err("noise_variance", ">= 0", s.noise_variance)

    if sweep_interval_mps is not None and not out and p.num_sequences >= 2:
        from chirpjoint.jdear import ambiguity_span

        lo, hi = sweep_interval_mps
        span = ambiguity_span(s)
        if hi - lo > span:
            out.append(Diagnostic("sweep_interval_mps", f"width <= ambiguity span {span:.6g} m/s",
                                  (lo, hi), severity="warning"))
    return out


def require_valid(s: RadarScenario, **kwargs) -> None:
    errors = [d for d in validate_scenario(s, **kwargs) if d.severity == "error"]
    if errors:
        raise ScenarioError(errors)
