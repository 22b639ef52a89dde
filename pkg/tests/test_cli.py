import json

import pytest

from portsim import cli
from portsim.analysis import read_csv
from portsim.oracle import CyclicNetError
from portsim.scenario import shipped_path

from conftest import tandem

WEEK = "10080"


def _write(tmp_path, data, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture
def tandem_file(tmp_path):
    return _write(tmp_path, tandem(clandestine=0.2, tp=0.5).raw, "tandem.json")


class TestValidate:
    def test_ok(self, capsys):
        assert cli.main(["validate"]) == 0
        assert "ok" in capsys.readouterr().out

    def test_bad_probabilities(self, tmp_path, capsys):
        data = json.loads(shipped_path("calais-default").read_text())
        for e in data["edges"]:
            if e["from"] == 20:
                e["p"] = 0.5 if e["to"] == 21 else 0.6
        assert cli.main(["validate", "--scenario", _write(tmp_path, data)]) == 3
        assert "node 20" in capsys.readouterr().out

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate", "--scenario", str(tmp_path / "nope.json")]) == 2

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli.main(["validate", "--scenario", str(path)]) == 2

    def test_run_on_invalid_scenario(self, tmp_path):
        data = json.loads(shipped_path("calais-default").read_text())
        data["arrivals"]["soft_fraction"] = 3
        assert cli.main(["run", "--scenario", _write(tmp_path, data), "--out",
                         str(tmp_path / "r.csv")]) == 3


class TestSeed:
    def test_precedence(self, monkeypatch, calais):
        monkeypatch.setenv(cli.SEED_ENV, "11")
        assert cli.resolve_seed(5, calais) == 5
        assert cli.resolve_seed(None, calais) == 11
        monkeypatch.delenv(cli.SEED_ENV)
        assert cli.resolve_seed(None, calais.with_changes(seed=23)) == 23

    def test_default(self, monkeypatch):
        monkeypatch.delenv(cli.SEED_ENV, raising=False)
        sc = tandem()
        raw = dict(sc.raw, run={"horizon": 100.0})
        from portsim.scenario import scenario_from_dict

        assert cli.resolve_seed(None, scenario_from_dict(raw)) == 1

    def test_bad_env(self, monkeypatch, calais):
        monkeypatch.setenv(cli.SEED_ENV, "seven")
        with pytest.raises(cli.CliError):
            cli.resolve_seed(None, calais)


class TestRun:
    def test_rows_per_metric(self, tmp_path, capsys):
        out = tmp_path / "run.csv"
        assert cli.main(["run", "--seed", "7", "--reps", "20", "--horizon", "2880",
                         "--out", str(out)]) == 0
        runs, summary = read_csv(out)
        per_metric = {}
        for row in runs:
            per_metric[row["metric"]] = per_metric.get(row["metric"], 0) + 1
        assert set(per_metric.values()) == {20}
        assert (tmp_path / "run.png").stat().st_size > 0
        table = capsys.readouterr().out.splitlines()
        assert table[1].startswith("metric") and len(table) == 2 + len(summary)

    def test_single_rep_has_no_interval(self, tmp_path, capsys):
        out = tmp_path / "one.csv"
        assert cli.main(["run", "--reps", "1", "--horizon", "1440", "--out", str(out), "--no-plot"]) == 0
        _, summary = read_csv(out)
        assert all(row["ci95_half_width"] == "NA" for row in summary)
        assert not (tmp_path / "one.png").exists()

    def test_byte_identical(self, tmp_path):
        paths = [tmp_path / f"{i}.csv" for i in range(2)]
        for p in paths:
            cli.main(["run", "--seed", "3", "--reps", "3", "--horizon", WEEK, "--out", str(p), "--no-plot"])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_engines_write_same_csv(self, tmp_path, tandem_file):
        paths = [tmp_path / f"{e}.csv" for e in ("fast", "reference")]
        for p, e in zip(paths, ("fast", "reference")):
            cli.main(["run", "--scenario", tandem_file, "--reps", "2", "--out", str(p),
                      "--engine", e, "--no-plot"])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_berth_mode_flag(self, tmp_path, tandem_file):
        assert cli.main(["run", "--scenario", tandem_file, "--recheck", "--out",
                         str(tmp_path / "x.csv")]) == 2


class TestSweep:
    def test_grid(self):
        assert cli.sweep_grid(0.0, 1.0, 0.1) == [round(0.1 * i, 10) for i in range(11)]
        assert len(cli.sweep_grid(0.05, 0.95, 0.3)) == 4
        assert cli.sweep_grid(0.5, 0.5, 0.1) == [0.5]
        for bad in ((0.6, 0.5, 0.1), (0.0, 1.0, 0.0), (-0.1, 1.0, 0.1)):
            with pytest.raises(cli.CliError):
                cli.sweep_grid(*bad)

    def test_output(self, tmp_path, tandem_file):
        out = tmp_path / "sw"
        assert cli.main(["sweep", "--scenario", tandem_file, "--reps", "3", "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "p,mean,ci95,oracle_d"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 11
        assert rows[0][:2] == ["0", "0"] and rows[-1][:2] == ["1", "1"]
        assert float(rows[5][3]) == pytest.approx(0.75)
        assert len(list((out / "runs").glob("p=*.csv"))) == 11
        assert (out / "sweep.png").exists()

    def test_byte_identical(self, tmp_path, tandem_file):
        outs = [tmp_path / f"s{i}" for i in range(2)]
        for o in outs:
            cli.main(["sweep", "--scenario", tandem_file, "--reps", "2", "--p-step", "0.25",
                      "--out", str(o), "--no-plot"])
        assert (outs[0] / "sweep.csv").read_bytes() == (outs[1] / "sweep.csv").read_bytes()
        for f in (outs[0] / "runs").iterdir():
            assert f.read_bytes() == (outs[1] / "runs" / f.name).read_bytes()

    def test_fp_sweep_keeps_detection_column(self, tmp_path, tandem_file):
        out = tmp_path / "fp"
        cli.main(["sweep", "--scenario", tandem_file, "--reps", "2", "--p-step", "0.5",
                  "--sweep-fp", "--out", str(out), "--no-plot"])
        rows = (out / "sweep.csv").read_text().splitlines()[1:]
        assert {r.split(",")[3] for r in rows} == {"0.75"}


class TestOracle:
    def test_table(self, capsys):
        assert cli.main(["oracle"]) == 0
        out = capsys.readouterr().out
        assert "monotone non-decreasing: yes" in out and "discretely concave:      yes" in out
        assert len([line for line in out.splitlines() if line[:8].strip()[:1].isdigit()]) == 11

    def test_cycle_exit_code(self, monkeypatch):
        def boom(*a, **k):
            raise CyclicNetError("screening net has a cycle: 1 -> 2 -> 1")

        monkeypatch.setattr(cli, "concavity_check", boom)
        assert cli.main(["oracle"]) == 4


def test_warmup(tmp_path, capsys):
    out = tmp_path / "w.csv"
    assert cli.main(["warmup", "--reps", "3", "--horizon", str(30 * 1440), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "window,mean,smoothed" and len(lines) == 31
    assert (tmp_path / "w.png").exists()
    assert "MSER-5 truncation" in capsys.readouterr().out


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as err:
        cli.main(["sweep", "--p-step"])
    assert err.value.code == 2
