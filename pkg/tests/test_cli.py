import csv
import io
import json

import pytest

from chirpjoint.cli import REPORT_COLUMNS, main
from chirpjoint.harness import CSV_COLUMNS, TRACK_COLUMNS, read_results
from chirpjoint.scenario import paper_scenario, save_scenario

KMH = 3.6


@pytest.fixture
def files(tmp_path):
    sc_path = tmp_path / "scenario.json"
    save_scenario(paper_scenario(), sc_path)
    targets = tmp_path / "targets.json"
    targets.write_text(json.dumps({"targets": [
        {"range_m": 80.0, "velocity_mps": 100.0 / KMH, "dod_angle_rad": 0.2, "amplitude": [1.0, 0.0]},
    ]}))
    return tmp_path, sc_path, targets


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_synth_svd_estimate_pipeline(files, capsys):
    tmp, sc_path, targets = files
    cube = tmp / "cube.bin"
    assert main(["synth", "--scenario", str(sc_path), "--targets", str(targets), "--snr-db", "30",
                 "--out", str(cube)]) == 0
    assert cube.stat().st_size > 0

    assert main(["svd", "--scenario", str(sc_path), "--cube", str(cube)]) == 0
    out, err = capsys.readouterr()
    rows = _csv(out)
    assert sum(int(r["in_signal_subspace"]) for r in rows) == 4
    assert "bin=80" in err

    report = tmp / "est.csv"
    assert main(["estimate", "--scenario", str(sc_path), "--cube", str(cube), "--out", str(report)]) == 0
    rows = _csv(report.read_text())
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert float(rows[0]["velocity_kmh"]) == pytest.approx(100.0, abs=0.01)

    assert main(["estimate", "--cube", str(cube), "--method", "reference"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert float(rows[0]["velocity_kmh"]) == pytest.approx(100.0, abs=0.1)


def test_estimate_fixed_bin(files, capsys):
    tmp, sc_path, targets = files
    cube = tmp / "cube.bin"
    main(["synth", "--targets", str(targets), "--out", str(cube)])
    assert main(["estimate", "--cube", str(cube), "--bin", "80", "--order", "4"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 1


def _bench_spec(path, thresholds):
    path.write_text(json.dumps({"snr_grid_db": [20.0], "trials_per_cell": 3, "seed": 1,
                                "thresholds": thresholds}))
    return path


def test_bench_accuracy_writes_csv_and_manifest(files):
    tmp, sc_path, _ = files
    spec = _bench_spec(tmp / "spec.json", [{"method": "jdear", "metric": "rmse_kmh", "max": 0.1}])
    out = tmp / "acc.csv"
    assert main(["bench", "accuracy", "--scenario", str(sc_path), "--spec", str(spec), "--out", str(out)]) == 0
    meta, rows = read_results(out)
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 2
    manifest = json.loads((tmp / "acc.csv.manifest.json").read_text())
    assert manifest["spec"]["seed"] == 1


def test_bench_exit_code_on_violation(files, capsys):
    tmp, sc_path, _ = files
    spec = _bench_spec(tmp / "spec.json", [{"method": "jdear", "metric": "rmse_kmh", "max": 1e-12}])
    assert main(["bench", "accuracy", "--spec", str(spec), "--out", str(tmp / "acc.csv")]) == 1
    assert "threshold violated" in capsys.readouterr().err


def test_bench_resolution(files):
    tmp, _, _ = files
    spec = tmp / "res.json"
    spec.write_text(json.dumps({"snr_grid_db": [20.0], "trials_per_cell": 2, "fixed_second_target_kmh": 4.0,
                                "separation_grid_kmh": [2.0]}))
    assert main(["bench", "resolution", "--spec", str(spec), "--out", str(tmp / "res.csv")]) == 0
    _, rows = read_results(tmp / "res.csv")
    assert {r["method"] for r in rows} == {"jdear", "reference"}


def test_bench_track(files):
    tmp, _, _ = files
    out = tmp / "track.csv"
    assert main(["bench", "track", "--out", str(out)]) == 0
    _, rows = read_results(out)
    assert tuple(rows[0]) == TRACK_COLUMNS
    assert len(rows) == 2 * 81


def test_missing_subcommand_exits():
    with pytest.raises(SystemExit):
        main([])
