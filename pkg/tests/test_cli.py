import csv
import io
import json
import math
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from coda_subspace.cli import validate_record
from coda_subspace.dataset import load_csv

from conftest import run_cli, write_fixture


def records(text):
    out = [json.loads(line) for line in text.splitlines()]
    for rec in out:
        validate_record(rec)
    return out


@pytest.fixture
def s3_csv(tmp_path):
    return write_fixture(tmp_path / "s3.csv", scenario="S3", seed=7)


# test

def test_s3_fixture_rejected_by_both(s3_csv):
    res = run_cli("test", s3_csv, "--k", 2, "--method", "both", "--seed", 7, "--json")
    assert res.code == 0
    recs = records(res.out)
    assert [r["method"] for r in recs] == ["schott", "bootstrap"]
    assert all(r["p_value"] <= 0.01 and r["reject"] for r in recs)
    assert recs[1]["n_boot"] == 1000 and recs[0]["df"] >= 1


def test_human_report(s3_csv):
    res = run_cli("test", s3_csv, "--k", 2, "--seed", 7, "--n-boot", 200)
    assert res.code == 0
    assert "D=8 Q=2 n_y=100 n_z=100" in res.out
    assert "k=2 schott" in res.out and "k=2 bootstrap" in res.out
    assert "warning: bootstrap p-value is 0 (p < 1/200)" in res.out


def test_json_is_deterministic(s3_csv):
    a = run_cli("test", s3_csv, "--k-range", "1..3", "--seed", 3, "--n-boot", 300, "--json")
    b = run_cli("test", s3_csv, "--k-range", "1..3", "--seed", 3, "--n-boot", 300, "--json")
    assert a.out == b.out


def test_range_matches_single_k(s3_csv):
    ranged = records(run_cli("test", s3_csv, "--k-range", "1..3", "--seed", 3, "--n-boot", 300, "--json").out)
    single = records(run_cli("test", s3_csv, "--k", 2, "--seed", 3, "--n-boot", 300, "--json").out)
    assert [r for r in ranged if r["k"] == 2] == single


def test_null_fixtures_bootstrap_band(tmp_path):
    # 200 datasets drawn under the null hypothesis, one bootstrap test each
    rejected = 0
    for seed in range(200):
        path = write_fixture(tmp_path / "s1.csv", scenario="S1", seed=1000 + seed)
        res = run_cli("test", path, "--k", 2, "--method", "bootstrap", "--seed", seed, "--json")
        assert res.code == 0
        rejected += json.loads(res.out)["reject"]
    assert 0.05 <= rejected / 200 <= 0.10


def test_k_range_continues_after_error(s3_csv):
    res = run_cli("test", s3_csv, "--k-range", "4..6", "--method", "schott", "--json")
    assert res.code == 1
    recs = records(res.out)
    assert [r["k"] for r in recs] == [4, 5, 6]
    assert recs[0]["error"] is None and recs[2]["error"] == "BadK"
    assert "BadK" in res.err


def test_missing_k_is_usage_error(s3_csv):
    res = run_cli("test", s3_csv)
    assert res.code == 2 and "usage:" in res.err


@pytest.mark.parametrize("argv", [
    ("--bogus",), ("--k", "0"), ("--k", "2", "--k-range", "1..2"), ("--k-range", "3..1"),
    ("--k", "2", "--level", "1.5"), ("--k", "2", "--method", "nope"), ("--k", "2", "--n-boo", "5"),
])
def test_bad_flags(s3_csv, argv):
    assert run_cli("test", s3_csv, *argv).code == 2


def test_input_errors_exit_1(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c,d\n1,1,0,0\n1,1,1,0\n1,1,1,1\n2,2,2,2\n")
    res = run_cli("test", bad, "--k", 1, "--seed", 1)
    assert res.code == 1 and "InconsistentZeroPattern" in res.err
    res = run_cli("test", tmp_path / "missing.csv", "--k", 1, "--seed", 1)
    assert res.code == 1 and "ParseError" in res.err


def isotropic_zero_block(tmp_path):
    path = tmp_path / "iso.csv"
    rows = ["a,b,c,d"]
    # the structural-zero block is isotropic in its two coordinates
    for v in ([2, 1, 1], [1, 2, 1], [1, 1, 2], [1, 0.5, 1], [0.5, 1, 1], [1, 1, 0.5]):
        rows.append(",".join(str(x) for x in v) + ",0")
    rng = np.random.default_rng(0)
    for row in rng.uniform(0.5, 2, size=(12, 4)):
        rows.append(",".join(repr(float(x)) for x in row))
    path.write_text("\n".join(rows) + "\n")
    return path


def test_degenerate_eigengap_exit_1(tmp_path):
    res = run_cli("test", isotropic_zero_block(tmp_path), "--k", 1, "--method", "schott")
    assert res.code == 1 and "DegenerateEigengap" in res.err


def test_schott_failure_keeps_bootstrap(tmp_path):
    res = run_cli("test", isotropic_zero_block(tmp_path), "--k", 1, "--seed", 3, "--json")
    schott, boot = records(res.out)
    assert res.code == 1 and "DegenerateEigengap" in res.err
    assert schott["error"] == "DegenerateEigengap" and schott["p_value"] is None
    assert boot["error"] is None and 0 <= boot["p_value"] <= 1
    alone = records(run_cli("test", isotropic_zero_block(tmp_path), "--k", 1, "--seed", 3,
                            "--method", "bootstrap", "--json").out)[0]
    assert alone["p_value"] == boot["p_value"]


def test_no_zeros_requires_flag(tmp_path):
    from conftest import simulated_dataset
    from coda_subspace.dataset import write_csv
    from coda_subspace.simulation import ScenarioSpec
    spec = ScenarioSpec(d=6, q=0, alpha=(5, 4, 1, 0.5, 0.2), beta=(5, 4, 1, 0.5, 0.2))
    path = tmp_path / "q0.csv"
    write_csv(simulated_dataset(spec=spec, n_y=30, n_z=30), path)
    res = run_cli("test", path, "--k", 2, "--method", "schott")
    assert res.code == 2 and "--allow-no-zeros" in res.err
    res = run_cli("test", path, "--k", 2, "--method", "schott", "--allow-no-zeros", "--json")
    assert res.code == 0 and records(res.out)[0]["q"] == 0


def test_zero_parts_flag(tmp_path):
    path = tmp_path / "z.csv"
    path.write_text("a,b,c,d\n" + "\n".join(
        ",".join(map(str, r)) for r in np.vstack([
            np.hstack([np.random.default_rng(1).uniform(1, 2, (8, 3)), np.zeros((8, 1))]),
            np.random.default_rng(2).uniform(1, 2, (8, 4))])) + "\n")
    assert run_cli("test", path, "--k", 1, "--method", "schott", "--zero-parts", "d").code == 0
    res = run_cli("test", path, "--k", 1, "--method", "schott", "--zero-parts", "c")
    assert res.code == 1 and "InconsistentZeroPattern" in res.err


def test_seed_environment(s3_csv):
    res = run_cli("test", s3_csv, "--k", 2, "--method", "bootstrap", env={"CODA_CI": "1"})
    assert res.code == 2 and "--seed" in res.err
    a = run_cli("test", s3_csv, "--k", 2, "--method", "bootstrap", "--json", env={"CODA_CI": "1", "CODA_SEED": "5"})
    b = run_cli("test", s3_csv, "--k", 2, "--method", "bootstrap", "--json", "--seed", 5)
    assert a.code == 0 and a.out == b.out
    # schott alone needs no seed even in CI mode
    assert run_cli("test", s3_csv, "--k", 2, "--method", "schott", env={"CODA_CI": "1"}).code == 0
    assert run_cli("test", s3_csv, "--k", 2, "--method", "bootstrap", env={"CODA_SEED": "x"}).code == 2


def test_out_file(s3_csv, tmp_path):
    out = tmp_path / "report.jsonl"
    res = run_cli("test", s3_csv, "--k", 1, "--method", "schott", "--json", "--out", out)
    assert res.code == 0 and res.out == ""
    records(out.read_text())


def test_schema_rejects_malformed_record(s3_csv):
    rec = records(run_cli("test", s3_csv, "--k", 1, "--method", "schott", "--json").out)[0]
    for broken in (dict(rec, p_value=1.5), dict(rec, extra=1), {k: v for k, v in rec.items() if k != "df"}):
        with pytest.raises(jsonschema.ValidationError):
            validate_record(broken)


# simulate

def test_simulate_student_needs_dof():
    res = run_cli("simulate", "--dist", "student", "--seed", 1)
    assert res.code == 2 and "--dof" in res.err
    assert run_cli("simulate", "--dist", "gaussian", "--dof", 4, "--seed", 1).code == 2


@pytest.mark.parametrize("argv", [
    ("--scenario", "s4"), ("--sizes", "100by100"), ("--sizes", "1x100"), ("--methods", "nope"),
    ("--n-sim", "0"), ("--k", "9"),
])
def test_simulate_bad_flags(argv):
    assert run_cli("simulate", "--seed", 1, "--n-sim", 2, *argv).code == 2


def test_simulate_deterministic_and_jobs_invariant():
    argv = ("simulate", "--scenario", "s2", "--sizes", "20x20,30x25", "--n-sim", 16, "--n-boot", 50,
            "--seed", 11)
    a, b = run_cli(*argv), run_cli(*argv)
    c = run_cli(*argv, "--jobs", 3)
    d = run_cli(*argv, env={"CODA_JOBS": "2"})
    assert a.code == 0 and a.out == b.out == c.out == d.out
    rows = list(csv.DictReader(io.StringIO("".join(l + "\n" for l in a.out.splitlines() if not l.startswith("#")))))
    assert len(rows) == 6 and {r["scenario"] for r in rows} == {"S2"}


def test_simulate_reduced_preset():
    res = run_cli("simulate", "--reduced", "--methods", "schott_theo", "--sizes", "20x20", "--seed", 2, "--json")
    rec = records(res.out)[0]
    assert rec["n_sim"] == 200
    assert "n_boot=200" in run_cli("simulate", "--reduced", "--methods", "schott_theo", "--sizes", "20x20",
                                   "--n-sim", 3, "--seed", 2).out
    res = run_cli("simulate", "--reduced", "--n-sim", 5, "--methods", "schott_theo", "--sizes", "20x20",
                  "--seed", 2, "--json")
    assert records(res.out)[0]["n_sim"] == 5


def test_simulate_out_file(tmp_path):
    out = tmp_path / "table.csv"
    res = run_cli("simulate", "--n-sim", 4, "--methods", "schott_est", "--sizes", "20x20", "--seed", 1,
                  "--dist", "student", "--dof", 5, "--out", out)
    assert res.code == 0
    lines = out.read_text().splitlines()
    assert lines[1].startswith("scenario,") and lines[2].startswith("S1,student,5,20,20,schott_est,")


# transform

def test_transform_uniform_rows(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("a,b,c\n1,1,0\n2,2,0\n1,1,1\n3,3,3\n")
    res = run_cli("transform", path)
    assert res.code == 0
    body = [r for r in csv.reader(l for l in res.out.splitlines() if not l.startswith("#"))]
    assert body[0] == ["block", "ilr1", "ilr2"]
    assert [r[0] for r in body[1:]] == ["Y", "Y", "Z", "Z"]
    for r in body[1:]:
        assert all(float(v) == 0.0 for v in r[1:] if v != "")
    assert body[1][2] == ""


def test_transform_hand_values(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("a,b,c\n0.8,0.2,0\n0.6,0.4,0\n0.2,0.3,0.5\n0.1,0.1,0.8\n")
    body = [r for r in csv.reader(l for l in run_cli("transform", path).out.splitlines() if not l.startswith("#"))]
    assert float(body[1][1]) == pytest.approx(0.980258, abs=1e-6)
    assert float(body[3][1]) == pytest.approx(math.sqrt(2 / 3) * math.log(0.2 / math.sqrt(0.15)), abs=1e-14)
    assert float(body[3][2]) == pytest.approx(math.sqrt(0.5) * math.log(0.3 / 0.5), abs=1e-14)


def test_transform_round_trip(tmp_path, s3_csv):
    coords = tmp_path / "coords.csv"
    back = tmp_path / "back.csv"
    assert run_cli("transform", s3_csv, "--out", coords).code == 0
    assert run_cli("transform", coords, "--inverse", "--out", back).code == 0
    a, b = load_csv(s3_csv), load_csv(back)
    assert a.part_names == b.part_names and a.q == b.q
    assert np.abs(a.y_rows - b.y_rows).max() <= 1e-9
    assert np.abs(a.z_rows - b.z_rows).max() <= 1e-9


def test_transform_errors(tmp_path):
    path = tmp_path / "neg.csv"
    path.write_text("a,b\n1,-1\n1,1\n")
    res = run_cli("transform", path)
    assert res.code == 1 and "NegativeEntry" in res.err
    plain = tmp_path / "plain.csv"
    plain.write_text("a,b\n1,1\n1,2\n")
    res = run_cli("transform", plain, "--inverse")
    assert res.code == 1 and "ParseError" in res.err


# cdf

def test_cdf_requires_s1():
    res = run_cli("cdf", "--scenario", "s2", "--seed", 1)
    assert res.code == 2


def test_cdf_single_simulation():
    res = run_cli("cdf", "--n-sim", 1, "--sizes", "30x30", "--seed", 3)
    assert res.code == 0
    emp = res.out.split("# fitted\n")[0].splitlines()
    assert emp[:2] == ["# empirical", "statistic,empirical_cdf"] and emp[2].endswith(",1.0")
    assert "ks_distance=" in res.err


def test_cdf_files_and_determinism(tmp_path):
    prefix = tmp_path / "fig"
    argv = ("cdf", "--n-sim", 60, "--sizes", "40x40", "--seed", 8, "--out", prefix)
    a = run_cli(*argv)
    emp = (tmp_path / "fig_empirical.csv").read_text()
    fit = (tmp_path / "fig_fitted.csv").read_text()
    b = run_cli(*argv[:-2], "--jobs", 2, "--out", tmp_path / "again")
    assert a.code == b.code == 0 and a.err == b.err
    assert emp == (tmp_path / "again_empirical.csv").read_text()
    assert fit == (tmp_path / "again_fitted.csv").read_text()
    cdf = [float(r["fitted_cdf"]) for r in csv.DictReader(io.StringIO(fit))]
    assert cdf[0] == 0.0 and all(x <= y for x, y in zip(cdf, cdf[1:])) and cdf[-1] > 0.99


def test_cdf_student_flag():
    res = run_cli("cdf", "--dist", "student", "--dof", 4, "--n-sim", 300, "--seed", 0)
    assert res.code == 0 and "empirical_upper_tail=right_of_fitted" in res.err


# process level

def test_module_entry_point_exit_codes(s3_csv):
    proc = subprocess.run([sys.executable, "-m", "coda_subspace"], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "coda_subspace", "test", str(s3_csv), "--k", "2",
                           "--method", "schott", "--json"], capture_output=True, text=True)
    assert proc.returncode == 0 and records(proc.stdout)[0]["k"] == 2
