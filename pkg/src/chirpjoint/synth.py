"""Beat-signal synthesis, range compression and range-bin extraction."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.signal import windows

from chirpjoint.scenario import SPEED_OF_LIGHT, RadarScenario, require_valid, velocity_to_doppler

logger = logging.getLogger(__name__)

# complex samples; 2**27 is 2 GiB at complex128
DEFAULT_MAX_SAMPLES = 2 ** 27


class CapacityError(MemoryError):
    pass


@dataclass(frozen=True)
class Target:
    range_m: float
    velocity_mps: float
    dod_angle_rad: float = 0.0
    amplitude: complex = 1.0 + 0.0j

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError(f"range_m must be > 0, got {self.range_m}")
        if not abs(self.dod_angle_rad) < np.pi / 2:
            raise ValueError(f"|dod_angle_rad| must be < pi/2, got {self.dod_angle_rad}")
        if self.amplitude == 0:
            raise ValueError("amplitude must be non-zero")


@dataclass(frozen=True)
class TargetSet:
    targets: tuple[Target, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    def __add__(self, other: "TargetSet") -> "TargetSet":
        return TargetSet(self.targets + other.targets)

    def mode_collisions(self, scenario: RadarScenario, tol_rad: float = 1e-9) -> list[tuple]:
        """Pairs of (target, tx) modes whose slow-time phase steps coincide modulo 2 pi."""
        w = scenario.waveform
        steps = []
        for p, t in enumerate(self.targets):
            fd = velocity_to_doppler(t.velocity_mps, w)
            for k, fk in enumerate(scenario.ddm.ddm_freqs_hz):
                steps.append(((p, k), 2 * np.pi * (fd + fk) * w.chirp_repetition_interval_s))
        hits = []
        for i in range(len(steps)):
            for j in range(i + 1, len(steps)):
                diff = np.angle(np.exp(1j * (steps[i][1] - steps[j][1])))
                if abs(diff) < tol_rad:
                    hits.append((steps[i][0], steps[j][0]))
        return hits

    def to_list(self) -> list[dict]:
        return [{"range_m": t.range_m, "velocity_mps": t.velocity_mps, "dod_angle_rad": t.dod_angle_rad,
                 "amplitude": [complex(t.amplitude).real, complex(t.amplitude).imag]} for t in self.targets]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "TargetSet":
        out = []
        for it in items:
            amp = it.get("amplitude", 1.0)
            if isinstance(amp, (list, tuple)):
                amp = complex(amp[0], amp[1])
            out.append(Target(float(it["range_m"]), float(it["velocity_mps"]),
                              float(it.get("dod_angle_rad", 0.0)), complex(amp)))
        return cls(tuple(out))


@dataclass
class RawDataCube:
    """Complex beat samples indexed ``[sequence, chirp, fast-time sample]``."""

    samples: np.ndarray
    scenario: RadarScenario

    def __post_init__(self):
        p, w = self.scenario.plan, self.scenario.waveform
        expected = (p.num_sequences, p.chirps_per_sequence, w.fast_time_samples)
        if self.samples.shape != expected:
            raise ValueError(f"cube shape {self.samples.shape} does not match scenario {expected}")


@dataclass
class RangeBinSnapshot:
    """Slow-time vectors of one range bin, one row per chirp sequence."""

    bin_index: int
    vectors: np.ndarray
    scenario: RadarScenario

    def __post_init__(self):
        p = self.scenario.plan
        if self.vectors.shape != (p.num_sequences, p.chirps_per_sequence):
            raise ValueError(f"snapshot shape {self.vectors.shape} does not match "
                             f"({p.num_sequences}, {p.chirps_per_sequence})")

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.vectors) ** 2))


def window_coefficients(kind: str, length: int) -> np.ndarray:
    kind = kind.lower()
    if kind in ("rect", "rectangular", "boxcar", "none"):
        return np.ones(length)
    if kind in ("hann", "hanning"):
        return windows.hann(length, sym=False)
    raise ValueError(f"unknown window {kind!r}")


def beat_frequency(scenario: RadarScenario, range_m: float, velocity_mps: float) -> float:
    w = scenario.waveform
    return 2 * w.chirp_slope_hz_per_s * range_m / SPEED_OF_LIGHT + velocity_to_doppler(velocity_mps, w)


def range_on_bin(scenario: RadarScenario, bin_index: int, velocity_mps: float) -> float:
    """Range that puts a target of the given velocity exactly on a range-bin centre."""
    w = scenario.waveform
    f_bin = bin_index * w.sample_rate_hz / w.fast_time_samples
    return (f_bin - velocity_to_doppler(velocity_mps, w)) * SPEED_OF_LIGHT / (2 * w.chirp_slope_hz_per_s)


def noise_variance_for_snr(snr_db: float, scenario: RadarScenario, reference: str = "bin",
                           window: str = "hann", amplitude: float = 1.0) -> float:
    """Per-sample noise variance giving ``snr_db`` for one replica of amplitude ``amplitude``.

    ``reference="sample"`` fixes the SNR of a single fast-time sample;
    ``reference="bin"`` fixes it after windowing and range FFT, for a
    target centred on its bin.
    """
    snr = 10 ** (snr_db / 10)
    sigma2 = amplitude ** 2 / snr
    if reference == "sample":
        return sigma2
    if reference == "bin":
        return sigma2 * range_fft_gain(scenario, window)
    raise ValueError(f"unknown SNR reference {reference!r}")


def range_fft_gain(scenario: RadarScenario, window: str = "hann") -> float:
    """SNR gain of the windowed range FFT for an on-bin target (linear)."""
    win = window_coefficients(window, scenario.waveform.fast_time_samples)
    return float(np.sum(win) ** 2 / np.sum(win ** 2))


def _noise_block(seed: int, l: int, shape: tuple, sigma2: float) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(l,))))
    scale = np.sqrt(sigma2 / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def noiseless_cube(s: RadarScenario, t: TargetSet) -> np.ndarray:
    w, plan, ddm = s.waveform, s.plan, s.ddm
    L, M, N = plan.num_sequences, plan.chirps_per_sequence, w.fast_time_samples
    n = np.arange(N)
    m = np.arange(M)
    offsets = s.offsets
    f_ddm = np.asarray(ddm.ddm_freqs_hz)
    d_k = np.asarray(ddm.tx_positions_m)
    out = np.zeros((L, M, N), dtype=complex)
    for tgt in t:
        fd = float(velocity_to_doppler(tgt.velocity_mps, w))
        fast = np.exp(2j * np.pi * beat_frequency(s, tgt.range_m, tgt.velocity_mps) * n / w.sample_rate_hz)
        dod = 2 * np.pi * w.carrier_hz * d_k * np.sin(tgt.dod_angle_rad) / SPEED_OF_LIGHT
        # slow[l, m] = alpha * sum_k exp(j[2 pi (fd + f_k) m T_ri + 2 pi fd T_l + dod_k])
        phase = (2 * np.pi * (fd + f_ddm[:, None, None]) * m[None, None, :] * w.chirp_repetition_interval_s
                 + 2 * np.pi * fd * offsets[None, :, None] + dod[:, None, None])
        slow = tgt.amplitude * np.exp(1j * phase).sum(axis=0)
        out += slow[:, :, None] * fast[None, None, :]
    return out


def synthesize_cube(s: RadarScenario, t: TargetSet, seed: int,
                    max_samples: int = DEFAULT_MAX_SAMPLES) -> RawDataCube:
    """Noisy multi-sequence beat samples of ``t`` seen by ``s``.

    Noise is circular complex Gaussian with variance ``s.noise_variance``
    per sample, drawn from an independent counter-based stream per
    sequence so the cube is a pure function of ``seed``.
    """
    require_valid(s)
    if t.mode_collisions(s):
        warnings.warn("targets have coincident slow-time modes; the model is not identifiable",
                      stacklevel=2)
    L, M, N = s.plan.num_sequences, s.plan.chirps_per_sequence, s.waveform.fast_time_samples
    if L * M * N > max_samples:
        raise CapacityError(f"cube of {L}x{M}x{N} = {L * M * N} samples exceeds budget {max_samples}")
    samples = noiseless_cube(s, t)
    if s.noise_variance > 0:
        for l in range(L):
            samples[l] += _noise_block(seed, l, (M, N), s.noise_variance)
    return RawDataCube(samples, s)


def range_spectrum(c: RawDataCube, window: str = "hann") -> np.ndarray:
    """Windowed range FFT of every chirp, shape ``(L, M, N)``."""
    win = window_coefficients(window, c.samples.shape[-1])
    return np.fft.fft(c.samples * win, axis=-1)


def range_compress(c: RawDataCube, window: str = "hann",
                   bins: Optional[Sequence[int]] = None) -> list[RangeBinSnapshot]:
    spec = range_spectrum(c, window)
    if bins is None:
        bins = range(spec.shape[-1])
    return [RangeBinSnapshot(int(b), spec[:, :, b], c.scenario) for b in bins]


def select_detection_bin(bins: Sequence[RangeBinSnapshot]) -> RangeBinSnapshot:
    """Bin with the largest total power; ties go to the lower bin index."""
    if not bins:
        raise ValueError("no range bins to select from")
    return min(bins, key=lambda b: (-b.power, b.bin_index))
