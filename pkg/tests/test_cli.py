import csv
import json
import math

import pytest

from delayhedge.blackscholes import bs_price
from delayhedge.cli import main


def read_csv(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def small_config(tmp_path, **blocks):
    cfg = {"schema_version": 1, "seed": 7, "model": {"preset": "black_scholes"},
           "sim": {"dt": 1 / 64, "paths": 400}}
    cfg.update(blocks)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_price_writes_one_row(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["price", "--config", cfg, "--out-dir", str(tmp_path / "out")]) == 0
    out = tmp_path / "out" / "price.csv"
    assert str(out) in capsys.readouterr().out
    text = out.read_text()
    assert text.startswith("# delayhedge ")
    assert "# seed 7" in text
    rows = read_csv(out)
    assert len(rows) == 1
    row = rows[0]
    ref = float(bs_price(1.0, 1.0, 0.02, 0.2, 1.0))
    assert float(row["reference"]) == pytest.approx(ref)
    assert abs(float(row["estimate"]) - ref) < 4 * float(row["std_error"]) + 2e-3


def test_builtin_fixture_price(tmp_path):
    assert main(["price", "--out-dir", str(tmp_path), "--seed", "3"]) == 0
    assert len(read_csv(tmp_path / "price.csv")) == 1


def test_unknown_command_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 1, "sim": {"paths": -1}}))
    assert main(["price", "--config", str(path), "--out-dir", str(tmp_path)]) == 2
    assert "sim/paths" in capsys.readouterr().err


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = small_config(tmp_path)
    monkeypatch.setenv("DELAYHEDGE_SEED", "11")
    main(["price", "--config", cfg, "--out-dir", str(tmp_path / "env")])
    main(["price", "--config", cfg, "--out-dir", str(tmp_path / "flag"), "--seed", "12"])
    assert "# seed 11" in (tmp_path / "env" / "price.csv").read_text()
    assert "# seed 12" in (tmp_path / "flag" / "price.csv").read_text()
    monkeypatch.setenv("DELAYHEDGE_SEED", "abc")
    assert main(["price", "--config", cfg, "--out-dir", str(tmp_path)]) == 2


def test_diag_all_pass(tmp_path):
    cfg = small_config(tmp_path, diag={"n_list": [4, 16, 64], "mollifier_n": [2, 4, 8], "pairs": 100})
    assert main(["diag", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    for name, cols in [("diag_semigroup.csv", ["pass"]), ("diag_contraction.csv", ["pass"]),
                       ("diag_mollifier.csv", ["lipschitz_pass", "decreasing"])]:
        for row in read_csv(tmp_path / name):
            for c in cols:
                assert row[c] == "true", (name, row)


def test_hedge_and_delta_commands(tmp_path):
    cfg = small_config(tmp_path, hedge={"rebalances": 8, "paths": 100, "delta_source": "analytic",
                                        "rebalance_list": [4, 8]})
    assert main(["hedge", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "hedge_curve.csv")) == 2
    assert main(["delta", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "delta.csv")[0]
    assert math.isfinite(float(row["estimate"]))


def test_simulate_command(tmp_path):
    cfg = small_config(tmp_path, simulate={"paths_out": 3})
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "paths.csv").exists()
