import csv
import json

import pytest

from sortgp.cli import FULL_PROFILE, main, parse_cli, UsageError
from sortgp.experiment import (
    CSV_COLUMNS,
    K_TABLE,
    ConstancyRow,
    ExperimentSpec,
    audit_csv,
    audit_rows,
    compute_k,
    format_row,
    job_seed,
    run_suite,
)

FAST = ["--population", "100", "--max-generations", "400", "--evolutions", "3"]


class TestComputeK:
    @pytest.mark.parametrize("G, D, K", [
        (1, 1.107e-3, 0.0333), (62.5, 4.4e-6, 0.1311), (100, 1e-4, 1.0),
    ])
    def test_examples(self, G, D, K):
        assert round(compute_k(G, D), 4) == K

    def test_rejects(self):
        with pytest.raises(ValueError):
            compute_k(1, 0)
        with pytest.raises(ValueError):
            compute_k(1, -1e-3)
        with pytest.raises(ValueError):
            compute_k(-1, 1e-3)

    def test_constancy_row(self):
        assert ConstancyRow(2, 100, 1e-4, "K1").K == 1.0


class TestFormatting:
    def test_row(self):
        row = format_row({"v": 2, "G1": 62.5, "G2": 3.0, "D1": 1.107e-3, "K1": 0.03331})
        assert row["G1"] == "62.5" and row["G2"] == "3"
        assert row["D1"] == "1.107e-03"
        assert row["K1"] == "0.03331"
        assert row["D2"] == "" and list(row) == list(CSV_COLUMNS)

    def test_job_seed_depends_on_inputs(self):
        assert job_seed(1, 2, "a") == job_seed(1, 2, "a")
        assert len({job_seed(1, 2, "a"), job_seed(1, 3, "a"), job_seed(2, 2, "a"),
                    job_seed(1, 2, "b")}) == 4


class TestParse:
    def test_full_example(self):
        spec = parse_cli("suite --vars 2..10 --metric f2 --protocol two-phase "
                         "--evolutions 100 --seed 42".split())
        assert spec.v_range == (2, 10) and spec.metric == "f2"
        assert spec.protocols == ("two-phase",)
        assert (spec.evolutions, spec.seed) == (100, 42)

    def test_defaults(self):
        spec = parse_cli(["suite"])
        assert spec.v_range == (2, 4) and spec.evolutions == 30
        assert spec.hits_for(2, "density-d1") == 100
        assert spec.hits_for(2, "density-d2") == 30
        assert spec.hits_for(3, "density-d2prime") == 30
        assert (spec.population, spec.tournament, spec.mutation_prob, spec.steady_gens) == \
            (1000, 7, 0.2, 10)

    def test_full_profile(self):
        spec = parse_cli(["suite", "--profile", "full"])
        assert spec.v_range == FULL_PROFILE["v_range"] and spec.evolutions == 100

    @pytest.mark.parametrize("argv, message", [
        ("run --metric f4", "unknown metric"),
        ("run --min-hits 0", "min-hits"),
        ("run --vars 3..2", "variable range"),
        ("run --protocol nope", "unknown protocol"),
        ("run --vars 2..3", "single --vars"),
        ("density --protocol two-phase", "density-"),
        ("run --bogus", "unrecognized"),
        ("suite --population 3", "tournament"),
    ])
    def test_errors(self, argv, message):
        with pytest.raises(UsageError, match=message):
            parse_cli(argv.split())

    def test_exit_codes(self, capsys, tmp_path):
        assert main(["run", "--metric", "f4"]) == 1
        assert "unknown metric" in capsys.readouterr().err
        bad = tmp_path / "bad.csv"
        bad.write_text("v,G1,D1,K1\n2,10,1e-4,5\n")
        assert main(["audit", str(bad)]) == 2
        good = tmp_path / "good.csv"
        good.write_text("v,G1,D1,K1\n2,100,1e-4,1.0\n")
        assert main(["audit", str(good)]) == 0

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ExperimentSpec(metric="f1")
        with pytest.raises(ValueError):
            ExperimentSpec(protocols=())


class TestAudit:
    def test_flags_bad_k(self):
        rows = [{"v": "4", "G2": "255", "D2": "3.3e-07", "K2": "1465"},
                {"v": "4", "G2": "255", "D2": "3.3e-07", "K2": "0.1465"}]
        problems = audit_rows(rows)
        assert len(problems) == 1 and "row 0" in problems[0]

    def test_k_without_inputs(self):
        assert audit_rows([{"K1": "0.1", "G1": "", "D1": ""}])


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSuite:
    def test_two_phase_structure(self, tmp_path):
        spec = parse_cli(["suite", "--vars", "2..3", "--protocol", "two-phase",
                          "--out", str(tmp_path)] + FAST)
        run_suite(spec)
        rows = read(tmp_path / "results.csv")
        assert [r["v"] for r in rows] == ["2", "3"]
        for r in rows:
            assert r["G1"] and r["G2"] and not r["D1"] and not r["K1"]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["spec"]["evolutions"] == 3
        assert len(manifest["jobs"]) == 2

    def test_density_and_k_rows(self, tmp_path):
        out = tmp_path / "o"
        code = main(["suite", "--vars", "2", "--protocol", "two-phase,density-d1", "--min-hits", "5",
                     "--out", str(out)] + FAST)
        assert code == 0
        rows = read(out / "results.csv")
        assert [r["protocol"] for r in rows] == ["two-phase", "density-d1", K_TABLE]
        k = rows[-1]
        assert float(k["K1"]) == pytest.approx(compute_k(float(k["G1"]), float(k["D1"])),
                                               rel=2e-3)
        assert audit_csv(out / "results.csv") == []

    def test_rerun_is_byte_identical_across_workers(self, tmp_path):
        base = ["suite", "--vars", "2..3", "--protocol", "two-phase,single-metric",
                "--seed", "5"] + FAST
        main(base + ["--out", str(tmp_path / "a")])
        main(base + ["--out", str(tmp_path / "b"), "--workers", "2"])
        a = (tmp_path / "a" / "results.csv").read_bytes()
        assert a == (tmp_path / "b" / "results.csv").read_bytes()

    def test_resume_skips_done(self, tmp_path):
        base = ["suite", "--protocol", "two-phase", "--out", str(tmp_path)] + FAST
        run_suite(parse_cli(base + ["--vars", "2"]))
        first = (tmp_path / "results.csv").read_text()
        rows = run_suite(parse_cli(base + ["--vars", "2..3", "--resume"]))
        assert [r["v"] for r in rows] == [3]
        assert (tmp_path / "results.csv").read_text().startswith(first)

    def test_failures_recorded_not_raised(self, tmp_path):
        spec = parse_cli(["suite", "--vars", "2", "--protocol", "density-d1",
                          "--max-samples", "1", "--batch-size", "1", "--min-hits", "50",
                          "--out", str(tmp_path)] + FAST)
        assert run_suite(spec) == []
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert "error" in manifest["jobs"][0]

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SORTGP_OUT", str(tmp_path / "env"))
        run_suite(parse_cli(["suite", "--vars", "2", "--protocol", "single-metric"] + FAST))
        assert (tmp_path / "env" / "results.csv").exists()

    def test_json_format(self, tmp_path):
        run_suite(parse_cli(["suite", "--vars", "2", "--protocol", "single-metric",
                             "--format", "json", "--out", str(tmp_path)] + FAST))
        rows = json.loads((tmp_path / "results.json").read_text())
        assert rows[0]["G2prime"] is not None


def test_run_and_evolve_commands(capsys):
    assert main(["run", "--seed", "1"] + FAST) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == ",".join(CSV_COLUMNS) and out[1].startswith("2,f2,two-phase,")
    assert main(["evolve", "--seed", "1", "--population", "100", "--max-generations", "400"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert json.loads(lines[0])["phase"] == "phase1"
    assert "result" in json.loads(lines[-1])


def test_density_command(capsys):
    assert main(["density", "--min-hits", "3", "--format", "json"] + FAST) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["estimate"]["hits"] >= 3
