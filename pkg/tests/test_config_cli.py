import json

import numpy as np
import pytest

import bubblelab as bl
from bubblelab.cli import main as cli_main
from bubblelab.closedform import bes3_call_closed
from bubblelab.config import parse_config
from bubblelab.errors import ConfigError

MINIMAL = """
[model]
preset = "inverse_bes3"
x0 = 1.0

[sim]
horizon = 1.0
dt = 0.002
n_paths = 20000
seed = 77

[run]
methods = ["direct_p", "survival_q", "decomposition_q", "closed_form"]

[outputs]
csv = "{csv}"
json = "{json}"

[[payoffs]]
kind = "call"
K = 1.0
T = 1.0
"""


def write_config(tmp_path, body, name="exp.toml"):
    path = tmp_path / name
    path.write_text(body)
    return path


class TestParse:
    def test_minimal(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, MINIMAL.format(csv="a.csv", json="a.json")))
        assert cfg.model.kind == "InverseBes3"
        assert cfg.sim.n_paths == 20000
        assert cfg.payoffs[0].kind == "call"
        assert len(cfg.config_hash) == 64

    def test_missing_seed_rejected(self, tmp_path):
        body = MINIMAL.format(csv="a.csv", json="a.json").replace("seed = 77", "")
        with pytest.raises(ConfigError, match="seed"):
            parse_config(write_config(tmp_path, body))

    def test_dt_must_divide_horizon(self, tmp_path):
        body = MINIMAL.format(csv="a.csv", json="a.json").replace("dt = 0.002", "dt = 0.0003")
        with pytest.raises(ConfigError, match="divide"):
            parse_config(write_config(tmp_path, body))

    def test_unknown_method_rejected(self, tmp_path):
        body = MINIMAL.format(csv="a.csv", json="a.json").replace("direct_p", "telepathy")
        with pytest.raises(ConfigError, match="telepathy"):
            parse_config(write_config(tmp_path, body))

    def test_syntax_error_carries_location(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(write_config(tmp_path, "[model\npreset='x'"))

    def test_barrier_variant_checked(self, tmp_path):
        body = MINIMAL.format(csv="a.csv", json="a.json") + '\n[[payoffs]]\nkind = "barrier"\nvariant = "XX"\nlevel = 2.0\n'
        with pytest.raises(ConfigError, match="variant"):
            parse_config(write_config(tmp_path, body))

    def test_maturity_beyond_horizon_rejected(self, tmp_path):
        body = MINIMAL.format(csv="a.csv", json="a.json").replace("T = 1.0", "T = 2.0")
        with pytest.raises(ConfigError, match="horizon"):
            parse_config(write_config(tmp_path, body))


class TestRun:
    def test_run_prices_against_closed_form(self, tmp_path):
        csv_path = tmp_path / "prices.csv"
        json_path = tmp_path / "manifest.json"
        cfg = write_config(tmp_path, MINIMAL.format(csv=csv_path, json=json_path))
        assert cli_main(["run", str(cfg)]) == 0

        import csv as csvmod
        with open(csv_path) as fh:
            reader = csvmod.reader(fh)
            header = next(reader)
            rows = [dict(zip(header, row)) for row in reader]
        assert header == ["pricer", "model", "K", "T", "style", "method",
                          "value", "std_err", "main_term", "default_term", "consistent"]
        assert len(rows) == 4
        closed = bes3_call_closed(1.0, 1.0, 1.0)
        by_method = {r["method"]: r for r in rows}
        sq = by_method["survival_q"]
        assert abs(float(sq["value"]) - closed) <= 3.0 * float(sq["std_err"])
        assert float(by_method["closed_form"]["value"]) == pytest.approx(closed, abs=1e-9)
        assert all(r["consistent"] == "true" for r in rows)

        manifest = json.loads(json_path.read_text())
        assert manifest["schema"] == "bubblelab.v1"
        assert manifest["seed"] == 77
        assert all(c["status"] == "ok" for c in manifest["cells"])

    def test_byte_identical_reruns(self, tmp_path):
        csv_path = tmp_path / "p.csv"
        json_path = tmp_path / "m.json"
        cfg = write_config(tmp_path, MINIMAL.format(csv=csv_path, json=json_path))
        cli_main(["run", str(cfg)])
        first_csv = csv_path.read_bytes()
        first_json = json.loads(json_path.read_text())
        cli_main(["run", str(cfg)])
        assert csv_path.read_bytes() == first_csv
        second_json = json.loads(json_path.read_text())
        for doc in (first_json, second_json):
            doc.pop("timings"), doc.pop("wall_time")
        assert first_json == second_json

    def test_empty_payoffs_header_only(self, tmp_path):
        body = MINIMAL.format(csv=tmp_path / "e.csv", json=tmp_path / "e.json")
        body = body[: body.index("[[payoffs]]")]
        cfg = write_config(tmp_path, body)
        assert cli_main(["run", str(cfg)]) == 0
        lines = (tmp_path / "e.csv").read_text().strip().splitlines()
        assert len(lines) == 1

    def test_unsupported_cell_is_error_row_and_run_continues(self, tmp_path):
        body = MINIMAL.format(csv=tmp_path / "u.csv", json=tmp_path / "u.json")
        body = body.replace('preset = "inverse_bes3"', 'preset = "cev"\nalpha = 1.5')
        cfg = write_config(tmp_path, body)
        assert cli_main(["run", str(cfg)]) == 0
        import csv as csvmod
        with open(tmp_path / "u.csv") as fh:
            rows = list(csvmod.reader(fh))[1:]
        # closed form has no definition for this model: error row, others fine
        assert any(r[6] == "error" for r in rows)
        assert sum(r[6] != "error" for r in rows) == 3

    def test_missing_config_returns_nonzero(self, capsys):
        assert cli_main(["run", "/nonexistent/x.toml"]) == 2
        assert "error" in capsys.readouterr().err

    def test_dump_paths(self, tmp_path):
        body = MINIMAL.format(csv=tmp_path / "d.csv", json=tmp_path / "d.json")
        body = body.replace("[outputs]", "[outputs]\ndump_paths = true").replace("n_paths = 20000", "n_paths = 500")
        cfg = write_config(tmp_path, body)
        assert cli_main(["run", str(cfg)]) == 0
        assert (tmp_path / "d.csv.paths.csv").exists()
        assert (tmp_path / "d.csv.paths.json").exists()


class TestVerify:
    def test_verify_passes_for_benchmark(self, tmp_path, capsys):
        body = MINIMAL.format(csv=tmp_path / "v.csv", json=tmp_path / "v.json")
        cfg = write_config(tmp_path, body)
        rc = cli_main(["verify", str(cfg)])
        out = capsys.readouterr().out
        assert "[PASS]" in out
        assert rc == 0, out


class TestTable:
    def test_table_prints_grid(self, capsys):
        assert cli_main(["table6", "--dt", "0.05", "--paths", "400", "--seed", "9"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1 + 12  # header + 3 strikes x 4 maturities
        assert out[0].split() == ["K", "T", "european", "american", "closed_call"]


class TestExchangeConfig:
    def test_two_asset_run(self, tmp_path):
        body = """
[model]
preset = "two_asset"
alpha_x = 2.0
alpha_y = 2.0
rho = 0.0

[sim]
horizon = 0.5
dt = 0.005
n_paths = 8000
seed = 3

[run]
methods = ["closed_form"]

[outputs]
csv = "%s"
json = "%s"

[[payoffs]]
kind = "exchange"
K = 1.0
T = 0.5
style = "European"
""" % (tmp_path / "x.csv", tmp_path / "x.json")
        cfg = write_config(tmp_path, body)
        assert cli_main(["run", str(cfg)]) == 0
        import csv as csvmod
        with open(tmp_path / "x.csv") as fh:
            rows = list(csvmod.reader(fh))
        assert len(rows) == 2
        val = float(rows[1][6])
        assert val == pytest.approx(bl.exchange_closed_bes3(1.0, 1.0, 0.5), abs=1e-8)
