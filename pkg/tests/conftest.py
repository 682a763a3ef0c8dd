import numpy as np
import pytest

from chirpjoint.scenario import DdmScheme, RadarScenario, SequencePlan, WaveformConfig, paper_scenario
from chirpjoint.synth import Target, TargetSet, range_compress, range_on_bin, synthesize_cube

KMH = 3.6


@pytest.fixture
def paper():
    return paper_scenario()


def small_scenario(num_tx=1, m=32, offsets=(0.0, 34e-6), t_ri=65.1e-6, n=64):
    w = WaveformConfig(bandwidth_hz=150e6, carrier_hz=76.5e9, sample_rate_hz=20e6, fast_time_samples=n,
                       chirp_repetition_interval_s=t_ri)
    plan = SequencePlan(len(offsets), m, tuple(offsets))
    return RadarScenario(w, plan, DdmScheme.uniform(num_tx, t_ri, 76.5e9))


def on_bin_targets(sc, speeds_kmh, bin_index=20, rng=None, dod=0.0):
    rng = rng or np.random.default_rng(0)
    return TargetSet(tuple(Target(range_on_bin(sc, bin_index, v / KMH), v / KMH, dod,
                                  complex(np.exp(2j * np.pi * rng.random()))) for v in speeds_kmh))


def snapshot(sc, targets, seed=0, bin_index=20, window="hann"):
    cube = synthesize_cube(sc, targets, seed)
    return range_compress(cube, window, bins=[bin_index])[0]


ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
