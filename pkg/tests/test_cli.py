import pytest

from rangesim.cli import main


def test_run_writes_all_artifacts(tmp_path, capsys):
    out = tmp_path / "artifacts"
    assert main(["run", "fig10_countdown", "--out", str(out)]) == 0
    for name in ("events.csv", "results.csv", "locations.csv",
                 "summary.txt", "energy_10.csv", "energy_11.csv",
                 "energy_trace.png"):
        assert (out / name).exists(), name
    summary = (out / "summary.txt").read_text()
    assert "t=45.000" in summary
    assert "artifacts written" in capsys.readouterr().out


def test_run_renders_location_figure(tmp_path):
    out = tmp_path / "loc"
    assert main(["run", "localization_4anchor", "--out", str(out)]) == 0
    assert (out / "locations.png").exists()
    locations = (out / "locations.csv").read_text().splitlines()
    assert len(locations) == 3  # header + two targets


def test_malformed_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("horizon_s: 10\nbogus_key: 1\n"
                   "gateway: {address: 1, position: [0, 0, 1]}\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bogus_key" in capsys.readouterr().err


def test_missing_scenario_exits_2(capsys):
    assert main(["run", "no_such_scenario", "--out", "/tmp/x"]) == 2
    assert "no such file" in capsys.readouterr().err


def test_lifetime_report(capsys):
    assert main(["lifetime", "--tau", "600", "--capacity", "810"]) == 0
    text = capsys.readouterr().out
    assert "306428" in text
    assert "5.83 years" in text


def test_lifetime_flag_validation(capsys):
    assert main(["lifetime", "--tau", "0"]) == 2
    assert "--tau" in capsys.readouterr().err


def test_compare_report(capsys):
    assert main(["compare", "baseline_cad"]) == 0
    text = capsys.readouterr().out
    assert "47.7 days" in text
    assert "CAD-assisted ratio" in text


def test_compare_rejects_run_scenario(capsys):
    assert main(["compare", "fig10_countdown"]) == 2
    assert "baseline_comparison" in capsys.readouterr().err
