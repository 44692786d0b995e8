import csv
import hashlib
import json
from pathlib import Path

import pytest

from randtrans import cli, pipelines
from randtrans.config import default_dict, load_config
from randtrans.errors import ConfigError

FIXTURES = Path(__file__).parent / "fixtures"

GOLDEN = {
    "correlations.csv": "4d0d02ba3831c869719cdf6a942f025d07f1129b0f27460f9cad582f4eff23d6",
    "contraction.csv": "eb59b17873c71860562a80b21c9a79245553284d815eb9379c27b24b7dd297b4",
    "lambdas.csv": "4d8c2b8f568292f43f96601c56427c5a507515e5fbd5137882c31175eff1e20b",
}


def write_config(tmp_path, **changes):
    raw = default_dict()
    for block, vals in changes.items():
        raw[block].update(vals)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def run(cfg, pipeline, out):
    return cli.main(["run", "--config", cfg, "--pipeline", pipeline, "--out", str(out)])


# -- configuration ---------------------------------------------------------------------

def test_validate_default(tmp_path):
    assert cli.main(["validate", "--config", write_config(tmp_path)]) == 0


def test_order_constraint_is_schema_error(tmp_path):
    cfg = write_config(tmp_path, potential={"t": 0.9})
    assert cli.main(["validate", "--config", cfg]) == 2
    assert run(cfg, "nevanlinna", tmp_path / "out") == 2
    assert not (tmp_path / "out").exists()


def test_unknown_pipeline_is_usage_error(tmp_path):
    assert run(write_config(tmp_path), "nosuch", tmp_path / "out") == 2


def test_schema_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, potential={"k_max": "many"}))
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, geometry={"h": -1.0}))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["validate", "--config", str(bad)]) == 2


def test_seed_override(tmp_path):
    cfg = load_config(write_config(tmp_path), {"seed": 17})
    assert cfg.seed == 17


# -- runs and manifests ------------------------------------------------------------------

def test_check_conditions_run(tmp_path):
    out = tmp_path / "cc"
    assert run(write_config(tmp_path), "check-conditions", out) == 0
    with open(out / "conditions.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["passed"] == "true" for r in rows)
    assert not (out / "failures.json").exists()


def test_manifest_covers_every_file(tmp_path):
    out = tmp_path / "nev"
    assert run(write_config(tmp_path), "nevanlinna", out) == 0
    manifest = json.loads((out / cli.MANIFEST).read_text())["files"]
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {cli.MANIFEST}
    assert set(manifest) == on_disk
    for name, digest in manifest.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        assert run(cfg, "nevanlinna", tmp_path / name) == 0
    assert (tmp_path / "a" / cli.MANIFEST).read_bytes() == (tmp_path / "b" / cli.MANIFEST).read_bytes()


def test_failed_check_writes_report(tmp_path, monkeypatch):
    def failing(ctx):
        res = pipelines.PipelineResult()
        res.tables["dummy.csv"] = (("a",), [(1,)])
        res.checks["dummy.ok"] = True
        res.checks["dummy.broken"] = False
        return res

    monkeypatch.setitem(pipelines.RUNNERS, "nevanlinna", failing)
    out = tmp_path / "fail"
    assert run(write_config(tmp_path), "nevanlinna", out) == 1
    assert json.loads((out / "failures.json").read_text()) == {"failed": ["dummy.broken"]}
    assert "failures.json" in json.loads((out / cli.MANIFEST).read_text())["files"]


def test_csv_cells():
    assert cli.format_cell(True) == "true"
    assert cli.format_cell(3) == "3"
    assert cli.format_cell(0.1) == "0.1"
    assert cli.format_cell(float("nan")) == "nan"
    assert cli.format_cell(float("-inf")) == "-inf"


def test_csv_quoting(tmp_path):
    path = tmp_path / "q.csv"
    cli.write_csv(path, ("name", "value"), [("a,b", 1.5), ('say "hi"', 2)])
    assert path.read_bytes() == b'name,value\r\n"a,b",1.5\r\n"say ""hi""",2\r\n'


# -- plot data ---------------------------------------------------------------------------------

def test_plot_data_golden(tmp_path):
    written = cli.emit_plot_data(FIXTURES, list(GOLDEN), out_dir=tmp_path)
    assert [p.name for p in written] == [f"plot_{n}" for n in GOLDEN]
    for name, digest in GOLDEN.items():
        assert cli.sha256_file(tmp_path / f"plot_{name}") == digest


def test_plot_data_long_format(tmp_path):
    cli.emit_plot_data(FIXTURES, ["contraction.csv"], out_dir=tmp_path)
    with open(tmp_path / "plot_contraction.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["series"] for r in rows} == {"D_n", "D_n_isometry"}
    assert len(rows) == 6


def test_plot_data_missing(tmp_path):
    with pytest.raises(cli.MissingArtifactError):
        cli.emit_plot_data(tmp_path, ["lambdas.csv"])
    with pytest.raises(cli.MissingArtifactError):
        cli.emit_plot_data(tmp_path)
    assert cli.emit_plot_data(tmp_path, strict=False) == []
    with pytest.raises(ValueError):
        cli.emit_plot_data(FIXTURES, ["fixtures.csv"])
