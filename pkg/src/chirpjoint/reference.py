"""Per-sequence FFT Doppler estimation with integer unfolding (baseline method).

Each chirp sequence is processed on its own: windowed FFT over slow time,
peak picking and three-point quadratic interpolation. The sequence offset
then enters only through the phase difference of the peaks, and the
velocity ambiguity is resolved per replica by trying every integer
unfolding and keeping the one whose unfolded estimates agree best.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from chirpjoint.jdear import (
    PhaseStep, SolverSettings, TargetEstimate, VelocityReport, _match_replicas, combine_ddm,
    search_interval_hz,
)
from chirpjoint.scenario import RadarScenario, doppler_to_velocity
from chirpjoint.synth import window_coefficients

# Unpadded FFT: gives the grid-bias floor of this baseline (about 1e-2 km/h
# at the default geometry). Padding by 4 pushes the floor below 1e-3 km/h.
DEFAULT_PAD_FACTOR = 1
PEAK_FLOOR_DB = 25.0


class DetectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class FftDopplerEstimate:
    peak_bin: int
    interpolated_frequency_hz: float
    peak_phase_rad: float
    spectrum_length: int
    magnitude: float = 0.0


@dataclass(frozen=True)
class UnfoldCandidate:
    integers: tuple
    unfolded_frequencies_hz: tuple
    spread_hz: float
    ddm_index: int = 0


def _spectrum(s_l, fft_size, window):
    s_l = np.asarray(s_l)
    if fft_size < s_l.size:
        raise ValueError(f"fft_size {fft_size} is shorter than the vector ({s_l.size})")
    win = window_coefficients(window, s_l.size)
    return np.fft.fft(s_l * win, fft_size)


def _estimate_at(spec, k, t_ri):
    n = spec.size
    mag = np.abs(spec)
    a, b, c = mag[(k - 1) % n], mag[k], mag[(k + 1) % n]
    denom = a - 2 * b + c
    offset = 0.5 * (a - c) / denom if denom != 0 else 0.0
    cycles = (k + offset) / n
    cycles = (cycles + 0.5) % 1.0 - 0.5
    return FftDopplerEstimate(int(k), float(cycles / t_ri), float(np.angle(spec[k])), n, float(b))


def fft_doppler(s_l, chirp_repetition_interval_s: float, fft_size: Optional[int] = None,
                window: str = "hann") -> FftDopplerEstimate:
    """Strongest slow-time spectral peak with quadratic interpolation of its magnitude."""
    s_l = np.asarray(s_l)
    spec = _spectrum(s_l, fft_size or s_l.size, window)
    mag = np.abs(spec)
    if not np.any(mag > 0):
        raise DetectionError("all-zero input has no spectral peak")
    return _estimate_at(spec, int(np.argmax(mag)), chirp_repetition_interval_s)


def doppler_peaks(s_l, chirp_repetition_interval_s: float, count: int, fft_size: Optional[int] = None,
                  window: str = "hann", floor_db: float = PEAK_FLOOR_DB) -> list[FftDopplerEstimate]:
    """Up to ``count`` strongest local maxima within ``floor_db`` of the largest peak."""
    s_l = np.asarray(s_l)
    spec = _spectrum(s_l, fft_size or s_l.size, window)
    mag = np.abs(spec)
    if not np.any(mag > 0):
        raise DetectionError("all-zero input has no spectral peak")
    is_peak = (mag > np.roll(mag, 1)) & (mag >= np.roll(mag, -1))
    idx = np.flatnonzero(is_peak & (mag >= mag.max() * 10 ** (-floor_db / 20)))
    idx = idx[np.argsort(-mag[idx])][:count]
    return [_estimate_at(spec, int(k), chirp_repetition_interval_s) for k in idx]


def _phase_at_origin(est: FftDopplerEstimate, cycles: float, length: int) -> float:
    """Peak phase referred to the first chirp, removing the symmetric window's linear phase."""
    bin_cycles = est.peak_bin / est.spectrum_length
    lag = (cycles - bin_cycles + 0.5) % 1.0 - 0.5
    return est.peak_phase_rad - np.pi * lag * (length - 1)


def unfold_candidates(estimates: Sequence[FftDopplerEstimate], scenario: RadarScenario,
                      interval_hz: tuple, length: Optional[int] = None) -> list[UnfoldCandidate]:
    """All integer unfoldings of one replica's per-sequence estimates inside ``interval_hz``.

    The slow-time frequency is unfolded by whole DDM / ``1/T_ri`` periods
    (first integer); each later sequence's phase difference to the first
    is unfolded by whole turns (remaining integers, nearest to the
    candidate) into a second frequency estimate. ``spread_hz`` is the
    largest disagreement among the unfolded estimates.
    """
    t_ri = scenario.t_ri
    length = length or scenario.plan.chirps_per_sequence
    ddm = np.asarray(scenario.ddm.ddm_freqs_hz)
    lags = scenario.offsets - scenario.offsets[0]
    wrapped = np.array([e.interpolated_frequency_hz for e in estimates])
    f0 = wrapped[0] + np.mean(np.angle(np.exp(2j * np.pi * (wrapped - wrapped[0]) * t_ri))) / (2 * np.pi * t_ri)
    cycles = f0 * t_ri
    phases = np.array([_phase_at_origin(e, cycles, length) for e in estimates])
    dphi = phases[1:] - phases[0]

    lo, hi = interval_hz
    period = 1.0 / t_ri
    out = []
    for k in range(ddm.size):
        base = f0 - ddm[k]
        for q in range(int(np.ceil((lo - base) / period)), int(np.floor((hi - base) / period)) + 1):
            g = base + q * period
            r = np.round(g * lags[1:] - dphi / (2 * np.pi))
            inter = (dphi / (2 * np.pi) + r) / lags[1:]
            unfolded = np.concatenate([[g], inter])
            spread = float(np.max(unfolded) - np.min(unfolded))
            out.append(UnfoldCandidate((q,) + tuple(int(x) for x in r),
                                       tuple(float(x) for x in unfolded), spread, k))
    return out


def resolve_by_unfolding(estimates: Sequence[FftDopplerEstimate], scenario: RadarScenario,
                         interval_hz: Optional[tuple] = None, length: Optional[int] = None) -> float:
    """Unambiguous Doppler (Hz) of one replica: the minimum-spread unfolding."""
    if len(estimates) < 2:
        raise ValueError("unfolding needs estimates from at least two sequences")
    if interval_hz is None:
        interval_hz = search_interval_hz(scenario, SolverSettings())
    cands = unfold_candidates(estimates, scenario, interval_hz, length)
    if not cands:
        raise DetectionError("no unfolding candidate inside the search interval")
    best = min(cands, key=lambda c: c.spread_hz)
    return best.unfolded_frequencies_hz[0]


def reference_pipeline(snap, scenario: Optional[RadarScenario] = None, num_targets: int = 1,
                       settings: Optional[SolverSettings] = None, fft_size: Optional[int] = None,
                       window: str = "hann", allow_partial: bool = False) -> VelocityReport:
    """Baseline velocities for one range-bin snapshot, in the same report shape as J-DEAR.

    Finds ``num_targets * K_Tx`` replica peaks per sequence, associates
    peaks across sequences by nearest frequency, unfolds every replica on
    its own, then groups replicas into targets and combines them. With
    ``allow_partial`` a peak shortfall yields the targets that could be
    formed instead of a :class:`DetectionError`.
    """
    scenario = scenario or snap.scenario
    settings = settings or SolverSettings()
    t_ri = scenario.t_ri
    L, M = snap.vectors.shape
    K = scenario.ddm.num_tx
    fft_size = fft_size or DEFAULT_PAD_FACTOR * M
    want = num_targets * K
    interval = search_interval_hz(scenario, settings)

    per_seq = [doppler_peaks(v, t_ri, want, fft_size, window) for v in snap.vectors]
    n_found = min(len(p) for p in per_seq)
    usable = (n_found // K) * K
    if usable < want and not allow_partial:
        raise DetectionError(f"found {n_found} distinct peaks, need {want}")
    if usable == 0:
        return VelocityReport([], 0, method="reference", converged=False)

    first = per_seq[0][:usable]
    tracks = []
    for est in first:
        track = [est]
        for other in per_seq[1:]:
            d = np.abs(np.angle(np.exp(2j * np.pi * (np.array([o.interpolated_frequency_hz for o in other])
                                                      - est.interpolated_frequency_hz) * t_ri)))
            track.append(other[int(np.argmin(d))])
        tracks.append(track)

    if L >= 2:
        dopplers = np.array([resolve_by_unfolding(tr, scenario, interval, M) for tr in tracks])
    else:
        dopplers = np.array([tr[0].interpolated_frequency_hz for tr in tracks])

    wrapped = np.array([tr[0].interpolated_frequency_hz for tr in tracks])
    grouping = _match_replicas(wrapped, scenario.ddm.ddm_freqs_hz, 1.0 / t_ri)
    ddm = np.asarray(scenario.ddm.ddm_freqs_hz)
    targets = []
    for members in grouping.groups:
        steps = tuple(PhaseStep(float(2 * np.pi * (dopplers[j] + ddm[k]) * t_ri)) for k, j in enumerate(members))
        phasor, doppler = combine_ddm(steps, scenario, settings.rotation)
        targets.append(TargetEstimate(float(doppler_to_velocity(doppler, scenario.waveform)), doppler,
                                      steps, phasor, float("nan")))
    targets.sort(key=lambda t: t.doppler_hz)
    return VelocityReport(targets, usable, method="reference", ambiguous=L < 2)
