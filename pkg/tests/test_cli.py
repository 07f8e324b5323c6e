import json
import subprocess
import sys

import numpy as np
import pytest

from grangerglm.cli import main
from grangerglm.model import BivariateSeries, preset, simulate


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(capsys, "simulate", "--preset", "poisson-gamma", "--n", 1000, "--seed", 5,
                   "--out", d)[0] == 0
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 5
    assert len(man["config_hash"]) == 64 and man["version"]
    # the manifest alone reproduces the output
    c = tmp_path / "c"
    assert run(capsys, "simulate", "--config", a / "manifest.json", "--out", c)[0] == 0
    assert (c / "series.csv").read_bytes() == (a / "series.csv").read_bytes()


def test_lr_test_null_json(tmp_path, capsys):
    spec, theta = preset("poisson-gamma-null")
    pvals = []
    for seed in range(5):
        data = simulate(spec, theta, 1000, rng=np.random.default_rng(seed))
        # y2 replaced by a shuffled independent copy: no causal link remains
        y2 = np.random.default_rng(100 + seed).permutation(data.y2)
        path = tmp_path / f"null{seed}.csv"
        BivariateSeries(data.y1, y2).to_csv(path)
        out_dir = tmp_path / f"o{seed}"
        code, out, _ = run(capsys, "lr-test", "--data", path, "--out", out_dir)
        assert code == 0
        rec = json.loads(out)
        assert rec["df"] == 3
        pvals.append(rec["p_value"])
    assert sum(p > 0.05 for p in pvals) >= 3
    saved = json.loads((out_dir / "lr_test.json").read_text())
    assert {"spec", "theta_hat", "loglik", "lr_stat", "df", "p_value", "warnings"} <= set(saved)


def test_lr_test_scalar_target(tmp_path, capsys):
    spec, theta = preset("geometric")
    path = tmp_path / "g.csv"
    simulate(spec, theta, 800, rng=np.random.default_rng(6)).to_csv(path)
    code, out, _ = run(capsys, "lr-test", "--preset", "geometric", "--target", "gamma_1",
                       "--data", path, "--out", tmp_path / "o")
    assert code == 0 and json.loads(out)["df"] == 1
    code, _, err = run(capsys, "lr-test", "--preset", "geometric", "--target", "gamma_4",
                       "--data", path, "--out", tmp_path / "o2")
    assert code == 1 and json.loads(err)["error"] == "KeyError"


def test_fit_bayes_iterations_validation(tmp_path, capsys):
    path = tmp_path / "d.csv"
    spec, theta = preset("poisson-gamma")
    simulate(spec, theta, 300, rng=np.random.default_rng(1)).to_csv(path)
    code, _, err = run(capsys, "fit-bayes", "--data", path, "--out", tmp_path / "o",
                       "--iterations", 100, "--burn-in", 100)
    assert code == 1
    rec = json.loads(err)
    assert rec["command"] == "fit-bayes" and "burn" in rec["message"]


def test_fit_mle_and_bayes_outputs(tmp_path, capsys):
    path = tmp_path / "d.csv"
    spec, theta = preset("poisson-gamma-bayes")
    simulate(spec, theta, 500, rng=np.random.default_rng(2)).to_csv(path)
    assert run(capsys, "fit-mle", "--data", path, "--out", tmp_path / "m")[0] == 0
    fit = json.loads((tmp_path / "m" / "fit.json").read_text())
    assert fit["converged"] and "std_errors" in fit
    code, _, _ = run(capsys, "fit-bayes", "--data", path, "--out", tmp_path / "b",
                     "--iterations", 1500, "--burn-in", 500, "--spike-slab", "--k-max", 3,
                     "--seed", 1, "--ct")
    assert code == 0
    for name in ("draws.csv", "chain.json", "summary.json", "manifest.json"):
        assert (tmp_path / "b" / name).exists()
    head = (tmp_path / "b" / "draws.csv").read_text().splitlines()[0].split(",")
    assert head[-4:] == ["delta_1", "delta_2", "delta_3", "omega"]


def test_preprocess(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n = 4000
    lines = ["sample,lfp,spike"] + [f"{i},{float(v)!r},{int(s)}" for i, (v, s) in
                                     enumerate(zip(rng.standard_normal(n), rng.random(n) < 0.05))]
    raw = tmp_path / "raw.csv"
    raw.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "preprocess", "--input", raw, "--sample-rate", 1000,
                       "--out", tmp_path / "p")
    assert code == 1 and json.loads(err)["error"] == "ResolutionError"
    side = tmp_path / "side.json"
    side.write_text(json.dumps({"sample_rate": 1000}))
    code, _, _ = run(capsys, "preprocess", "--input", raw, "--sidecar", side, "--out",
                     tmp_path / "p", "--analysis-len", 100)
    assert code == 0
    data = BivariateSeries.from_csv((tmp_path / "p" / "series.csv").read_text())
    assert data.n == 133


def test_missing_input_reports_path(tmp_path, capsys):
    code, _, err = run(capsys, "fit-mle", "--data", tmp_path / "absent.csv", "--out", tmp_path)
    assert code == 1
    assert "absent.csv" in json.loads(err)["message"]


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        main(["simulate", "--bogus"])


def test_study_needs_seed(tmp_path, capsys):
    code, _, err = run(capsys, "study-table2", "--out", tmp_path, "--replications", 2)
    assert code == 1 and "seed" in json.loads(err)["message"]


def test_study_rerun_from_manifest(tmp_path, capsys):
    a = tmp_path / "a"
    assert run(capsys, "study-table2", "--out", a, "--seed", 3, "--replications", 15,
               "--sample-sizes", 400)[0] == 0
    b = tmp_path / "b"
    assert run(capsys, "study-table2", "--config", a / "manifest.json", "--out", b)[0] == 0
    assert (a / "table2.csv").read_bytes() == (b / "table2.csv").read_bytes()


def test_pairwise_command(tmp_path, capsys):
    rng = np.random.default_rng(5)
    cols = [rng.geometric(0.5, 300) - 1 for _ in range(3)]
    path = tmp_path / "m.csv"
    path.write_text("t,e1,e2,e3\n" + "".join(f"{t + 1},{a},{b},{c}\n"
                                             for t, (a, b, c) in enumerate(zip(*cols))))
    assert run(capsys, "pairwise", "--data", path, "--out", tmp_path / "o")[0] == 0
    head = (tmp_path / "o" / "pvalues_rho.csv").read_text().splitlines()[0]
    assert head == "effect\\cause,e1,e2,e3"


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "grangerglm.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "study-table1" in proc.stdout
