import csv
import json

import numpy as np
import pytest

from funfuse.cli import main
from funfuse.design import assemble
from funfuse.errors import InvalidArgumentError
from funfuse.io import read_dataset, read_truth, write_dataset
from funfuse.simgen import ScenarioSpec, generate


def _simulate(tmp_path, *extra):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), *extra]) == 0
    return out


def test_simulate_sizes(tmp_path, capsys):
    _simulate(tmp_path, "--scenario", "s1", "--n", "40", "--seed", "1")
    assert "group sizes: 20,20" in capsys.readouterr().out
    _simulate(tmp_path, "--n", "200", "--structure", "unbalanced")
    assert "group sizes: 50,150" in capsys.readouterr().out
    _simulate(tmp_path, "--scenario", "ex2", "--n", "60", "--structure", "unbalanced")
    assert "group sizes: 12,18,30" in capsys.readouterr().out


def test_file_formats(tmp_path):
    out = _simulate(tmp_path, "--n", "8", "--seed", "2")
    raw = (out / "data.csv").read_bytes()
    assert raw.startswith(b"subject_id,t,value\n") and b"\r" not in raw
    assert (out / "responses.csv").read_text().splitlines()[0] == "subject_id,y"
    truth = read_truth(out / "truth.json")
    assert set(truth) == {"partition", "scenario", "coeffs"}
    assert len(truth["coeffs"]["s1"]) == 20


def test_round_trip_is_bit_exact(tmp_path):
    ds, _ = generate(ScenarioSpec("s1", "balanced", 10, seed=9))
    out = _simulate(tmp_path, "--n", "10", "--seed", "9")
    back = read_dataset(out / "data.csv", out / "responses.csv", coeffs=read_truth(out / "truth.json")["coeffs"])
    assert back.ids == ds.ids
    assert np.array_equal(back.y, ds.y)
    for a, b in zip(ds.samples, back.samples):
        assert np.array_equal(a.grid, b.grid) and np.array_equal(a.values, b.values)
    assert np.array_equal(assemble(back).rows, assemble(ds).rows)
    # without coefficients the 256-point grid path is used: interpolation error is O(h^2)
    grid_rows = assemble(read_dataset(out / "data.csv", out / "responses.csv")).rows
    np.testing.assert_allclose(grid_rows, assemble(ds).rows, atol=1e-3)


def test_missing_values(tmp_path):
    ds, _ = generate(ScenarioSpec("s2", "balanced", 4, seed=0))
    write_dataset(ds, tmp_path / "d.csv", tmp_path / "r.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    rows = [lines[0]]
    for k, line in enumerate(lines[1:]):
        sid, t, v = line.split(",")
        if sid == "s1" and k % 2 == 0:
            v = "NA"  # half of s1, kept
        if sid == "s2" and k % 4 != 0:
            v = ""  # three quarters of s2, dropped
        rows.append(",".join([sid, t, v]))
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    back = read_dataset(tmp_path / "d.csv", tmp_path / "r.csv")
    assert back.ids == ["s1", "s3", "s4"]
    assert np.all(np.isfinite(back.samples[0].values))


def test_bad_inputs(tmp_path):
    with pytest.raises(InvalidArgumentError):
        read_dataset(tmp_path / "none.csv", tmp_path / "none.csv")
    (tmp_path / "d.csv").write_text("subject_id,t\n")
    (tmp_path / "r.csv").write_text("subject_id,y\n")
    with pytest.raises(InvalidArgumentError):
        read_dataset(tmp_path / "d.csv", tmp_path / "r.csv")


def _fit(tmp_path, sim, name, *extra):
    out = tmp_path / name
    code = main(["fit", "--data", str(sim / "data.csv"), "--responses", str(sim / "responses.csv"),
                 "--truth", str(sim / "truth.json"), "--out", str(out), *extra])
    return code, out


def test_exit_codes(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "x.csv"), "--responses", str(tmp_path / "y.csv")]) == 2
    assert main(["simulate", "--n", "41", "--out", str(tmp_path / "z")]) == 2
    sim = _simulate(tmp_path, "--n", "6")
    code, _ = _fit(tmp_path, sim, "w", "--weights", "spherical", "--lambda2", "0.1")
    assert code == 2  # no locations


def test_fit_without_fusion(tmp_path):
    sim = _simulate(tmp_path, "--n", "12", "--seed", "3")
    code, out = _fit(tmp_path, sim, "f0", "--lambda1", "0.005", "--lambda2", "0")
    assert code == 0
    result = json.loads((out / "result.json").read_text())
    assert result["k_hat"] == 12
    assert set(result) == {"k_hat", "partition", "alpha", "lambda1", "lambda2", "iters", "converged", "bic"}
    curves = list(csv.reader(open(out / "curves.csv")))
    assert curves[0] == ["group", "t", "beta_hat"] and len(curves) == 1 + 12 * 201


def test_fit_is_byte_reproducible(tmp_path):
    sim = _simulate(tmp_path, "--scenario", "s2", "--n", "40", "--seed", "1")
    _, a = _fit(tmp_path, sim, "a")
    _, b = _fit(tmp_path, sim, "b")
    assert (a / "result.json").read_bytes() == (b / "result.json").read_bytes()
    result = json.loads((a / "result.json").read_text())
    assert result["k_hat"] == 2


def test_fit_with_spherical_weights(tmp_path):
    ds, _ = generate(ScenarioSpec("s2", "balanced", 10, seed=4))
    write_dataset(ds, tmp_path / "d.csv", tmp_path / "r.csv")
    rng = np.random.default_rng(0)
    locs = {s: rng.uniform([100, 20], [120, 40]) for s in ds.ids}
    lines = (tmp_path / "d.csv").read_text().splitlines()
    out = [lines[0] + ",lon,lat"]
    for line in lines[1:]:
        sid = line.split(",")[0]
        out.append(line + f",{float(locs[sid][0])!r},{float(locs[sid][1])!r}")
    (tmp_path / "d.csv").write_text("\n".join(out) + "\n")
    code = main(["fit", "--data", str(tmp_path / "d.csv"), "--responses", str(tmp_path / "r.csv"),
                 "--weights", "spherical", "--lambda2", "0.5", "--out", str(tmp_path / "o")])
    assert code == 0
    assert json.loads((tmp_path / "o" / "result.json").read_text())["k_hat"] >= 1


def test_evaluate_against_truth_and_self(tmp_path, capsys):
    sim = _simulate(tmp_path, "--scenario", "s2", "--n", "40", "--seed", "1")
    _, fit = _fit(tmp_path, sim, "f")
    capsys.readouterr()
    assert main(["evaluate", "--fit", str(fit / "result.json"), "--other", str(fit / "result.json")]) == 0
    same = json.loads(capsys.readouterr().out)
    assert same["ari"] == 1.0 and same["nmi"] == pytest.approx(1.0)
    assert main(["evaluate", "--fit", str(fit / "result.json"), "--truth", str(sim / "truth.json")]) == 0
    vs_truth = json.loads(capsys.readouterr().out)
    assert vs_truth["ari"] == 1.0 and vs_truth["coef_mse"] < 1.0


def test_evaluate_example_partitions(tmp_path, capsys):
    a = {"partition": [["a", "b"], ["c", "d", "e"]]}
    b = {"partition": [["a", "b", "c"], ["d", "e"]]}
    (tmp_path / "a.json").write_text(json.dumps(a))
    (tmp_path / "b.json").write_text(json.dumps(b))
    assert main(["evaluate", "--fit", str(tmp_path / "a.json"), "--other", str(tmp_path / "b.json")]) == 0
    assert json.loads(capsys.readouterr().out)["ari"] == pytest.approx(1 / 6, abs=1e-12)


def test_evaluate_split(tmp_path, capsys):
    sim = _simulate(tmp_path, "--scenario", "s2", "--n", "40", "--seed", "2")
    capsys.readouterr()
    code = main(["evaluate", "--data", str(sim / "data.csv"), "--responses", str(sim / "responses.csv"),
                 "--truth-coeffs", str(sim / "truth.json"), "--split", "0.9", "--seed", "5",
                 "--lambda2", "1.0"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_train"] == 36 and out["n_test"] == 4 and out["prediction_mse"] >= 0


def test_replicate_single(tmp_path):
    out = tmp_path / "rep"
    assert main(["replicate", "--scenario", "s2", "--n", "20", "--reps", "1",
                 "--methods", "proposed,oracle,resp,resi", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert [r["method"] for r in rows] == ["proposed", "oracle", "resp", "resi"]
    assert all(r["ari_sd"] == "" and r["reps"] == "1" for r in rows)
    assert rows[1]["ari_mean"] == ""
    hist = list(csv.reader(open(out / "khat_hist.csv")))
    assert hist[0] == ["k_hat", "count"] and sum(int(c) for _, c in hist[1:]) == 1


def test_replicate_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["replicate", "--scenario", "s2", "--n", "20", "--reps", "2", "--methods", "resp",
                     "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_plots_written(tmp_path):
    pytest.importorskip("matplotlib")
    sim = _simulate(tmp_path, "--scenario", "s2", "--n", "20", "--seed", "1")
    code, out = _fit(tmp_path, sim, "p", "--plot")
    assert code == 0
    for name in ("curves.png", "tuning.png"):
        assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
