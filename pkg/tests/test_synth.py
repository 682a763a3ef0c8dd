import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chirpjoint.hankel import HankelParams
from chirpjoint.jdear import ManifoldModel, build_manifold
from chirpjoint.scenario import SPEED_OF_LIGHT, velocity_to_doppler
from chirpjoint.synth import (
    CapacityError, RawDataCube, RangeBinSnapshot, Target, TargetSet, noiseless_cube, noise_variance_for_snr,
    range_compress, range_fft_gain, range_on_bin, select_detection_bin, synthesize_cube,
)
from tests.conftest import on_bin_targets, small_scenario


def test_noise_only_cube_variance():
    sc = small_scenario(m=256, n=256).with_noise(1.0)
    c = synthesize_cube(sc, TargetSet(), seed=3)
    assert c.samples.size >= 1e5
    assert np.var(c.samples) == pytest.approx(1.0, rel=0.05)
    assert abs(np.mean(c.samples)) < 0.01


def test_zero_velocity_has_no_slow_time_dependence():
    sc = small_scenario()
    c = synthesize_cube(sc, TargetSet((Target(30.0, 0.0, 0.3, 1.5 - 0.5j),)), seed=0)
    assert np.max(np.abs(c.samples - c.samples[0, 0][None, None, :])) < 1e-12


@pytest.mark.parametrize("v", [0.7, -12.0, 41.0])
def test_chirp_to_chirp_phase_step(v):
    sc = small_scenario()
    c = synthesize_cube(sc, TargetSet((Target(30.0, v),)), seed=0)
    step = np.angle(c.samples[0, 1:, 5] * np.conj(c.samples[0, :-1, 5]))
    fd = 2 * v / (SPEED_OF_LIGHT / 76.5e9)
    expected = np.angle(np.exp(2j * np.pi * fd * sc.t_ri))
    assert np.max(np.abs(np.angle(np.exp(1j * (step - expected))))) < 1e-10


def test_sequence_offset_phase():
    sc = small_scenario()
    v = 25.0
    c = synthesize_cube(sc, TargetSet((Target(30.0, v),)), seed=0)
    rot = c.samples[1] * np.conj(c.samples[0])
    fd = velocity_to_doppler(v, sc.waveform)
    assert np.allclose(np.angle(rot * np.exp(-2j * np.pi * fd * 34e-6)), 0, atol=1e-9)


def test_determinism_and_seed_dependence():
    sc = small_scenario(num_tx=2).with_noise(0.3)
    t = on_bin_targets(sc, [10.0, -40.0])
    a = synthesize_cube(sc, t, 11).samples
    b = synthesize_cube(sc, t, 11).samples
    c = synthesize_cube(sc, t, 12).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_superposition_noiseless():
    sc = small_scenario(num_tx=4)
    t1 = TargetSet((Target(20.0, 3.0, 0.2, 1j),))
    t2 = TargetSet((Target(41.0, -9.0, -0.4, 0.5),))
    both = synthesize_cube(sc, t1 + t2, 0).samples
    assert np.allclose(both, synthesize_cube(sc, t1, 0).samples + synthesize_cube(sc, t2, 0).samples,
                       rtol=0, atol=1e-12)


def test_snr_calibration_per_sample():
    sc = small_scenario(m=128, n=256)
    snr_db = 7.0
    sigma2 = noise_variance_for_snr(snr_db, sc, reference="sample")
    noise = np.concatenate([synthesize_cube(sc.with_noise(sigma2), TargetSet(), seed=s).samples.ravel()
                            for s in range(16)])
    assert noise.size >= 1e6
    measured = 10 * np.log10(1.0 / np.mean(np.abs(noise) ** 2))
    assert abs(measured - snr_db) < 0.2


def test_bin_snr_reference_includes_fft_gain():
    sc = small_scenario(n=256)
    gain = range_fft_gain(sc, "hann")
    assert gain == pytest.approx(256 * 2 / 3, rel=1e-3)
    assert noise_variance_for_snr(3.0, sc, "bin") == pytest.approx(noise_variance_for_snr(3.0, sc, "sample") * gain)
    assert range_fft_gain(sc, "rect") == pytest.approx(256)


def test_capacity_error():
    sc = small_scenario()
    with pytest.raises(CapacityError):
        synthesize_cube(sc, TargetSet(), 0, max_samples=100)


def test_collision_warning():
    sc = small_scenario(num_tx=4)
    df = 1 / (4 * sc.t_ri)
    v1 = 2.0
    v2 = v1 + df * sc.waveform.wavelength_m / 2
    with pytest.warns(UserWarning, match="coincident"):
        synthesize_cube(sc, TargetSet((Target(20.0, v1), Target(20.0, v2))), 0)


@pytest.mark.parametrize("kwargs", [dict(range_m=0.0, velocity_mps=1.0), dict(range_m=1.0, velocity_mps=1.0,
                                    dod_angle_rad=np.pi / 2), dict(range_m=1.0, velocity_mps=1.0, amplitude=0)])
def test_target_invariants(kwargs):
    with pytest.raises(ValueError):
        Target(**kwargs)


def test_target_set_json_round_trip():
    t = TargetSet((Target(10.0, 3.0, 0.1, 1 - 2j), Target(20.0, -5.0)))
    assert TargetSet.from_list(t.to_list()) == t


def test_on_bin_rect_energy_in_one_bin():
    sc = small_scenario(n=64)
    t = TargetSet((Target(range_on_bin(sc, 17, 5.0), 5.0),))
    spec = np.fft.fft(synthesize_cube(sc, t, 0).samples, axis=-1)
    power = np.abs(spec[0, 0]) ** 2
    leak = np.delete(power, 17).max() / power[17]
    assert 10 * np.log10(leak + 1e-300) < -250


def test_peak_bin_for_range():
    sc = small_scenario(n=256)
    r = 47.3
    dr = SPEED_OF_LIGHT / (2 * sc.waveform.bandwidth_hz)
    snaps = range_compress(synthesize_cube(sc, TargetSet((Target(r, 20.0),)), 0))
    # dense DFT of the analytic beat tone gives the same nearest bin
    fb = 2 * sc.waveform.chirp_slope_hz_per_s * r / SPEED_OF_LIGHT
    assert select_detection_bin(snaps).bin_index == round(fb * 256 / sc.waveform.sample_rate_hz)
    assert select_detection_bin(snaps).bin_index == round(r / dr)


def test_paper_target_at_80m_selects_bin_80(paper):
    t = TargetSet((Target(80.0, 100 / 3.6),))
    assert select_detection_bin(range_compress(synthesize_cube(paper, t, 0))).bin_index == 80


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1))
def test_range_compress_linear(seed1, seed2):
    sc = small_scenario(m=8, n=16).with_noise(1.0)
    c1 = synthesize_cube(sc, TargetSet(), seed1)
    c2 = synthesize_cube(sc, TargetSet(), seed2)
    s12 = range_compress(RawDataCube(c1.samples + c2.samples, sc))
    s1, s2 = range_compress(c1), range_compress(c2)
    for a, b, c in zip(s12, s1, s2):
        assert np.allclose(a.vectors, b.vectors + c.vectors, rtol=0, atol=1e-12)


def test_select_detection_bin_ties_and_populated():
    sc = small_scenario(m=4, offsets=(0.0, 34e-6))
    z = np.zeros((2, 4), complex)
    one = z.copy()
    one[0, 0] = 1
    bins = [RangeBinSnapshot(i, z, sc) for i in range(5)] + [RangeBinSnapshot(5, one, sc)]
    assert select_detection_bin(bins).bin_index == 5
    assert select_detection_bin([RangeBinSnapshot(7, one, sc), RangeBinSnapshot(3, one, sc)]).bin_index == 3
    with pytest.raises(ValueError):
        select_detection_bin([])


@pytest.mark.property
@pytest.mark.parametrize("num_tx, L", [(1, 2), (4, 2), (2, 3)])
def test_snapshot_matches_manifold_model(num_tx, L):
    offsets = (0.0, 34e-6, 71e-6)[:L]
    sc = small_scenario(num_tx=num_tx, m=24, offsets=offsets)
    rng = np.random.default_rng(num_tx)
    speeds = [rng.uniform(-200, 200) / 3.6 for _ in range(2)]
    targets = TargetSet(tuple(Target(range_on_bin(sc, 20, v), v, rng.uniform(-1, 1),
                                     complex(rng.normal(), rng.normal())) for v in speeds))
    snap = range_compress(synthesize_cube(sc, targets, 0), "rect", bins=[20])[0]

    phases, labels, amps = [], [], []
    d_k = np.asarray(sc.ddm.tx_positions_m)
    for t in targets:
        fd = velocity_to_doppler(t.velocity_mps, sc.waveform)
        for k, fk in enumerate(sc.ddm.ddm_freqs_hz):
            phases.append(2 * np.pi * (fd + fk) * sc.t_ri)
            labels.append(k)
            gamma = np.exp(2j * np.pi * 76.5e9 * d_k[k] * np.sin(t.dod_angle_rad) / SPEED_OF_LIGHT)
            amps.append(t.amplitude * gamma * sc.waveform.fast_time_samples)
    model = ManifoldModel(np.array(phases), np.array(labels), sc, HankelParams(24, 0))
    A = build_manifold(model)
    assert np.allclose(A @ np.array(amps), snap.vectors.reshape(-1), rtol=0, atol=1e-9 * np.abs(amps).max())
