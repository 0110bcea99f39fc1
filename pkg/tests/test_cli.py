import dataclasses
import json
import subprocess
import sys

import pytest

from pavescan.cli import build_parser, run
from pavescan.pipeline import PipelineConfig
from pavescan.stitch import read_elevation


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def rut_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("rut") / "ds"
    assert run(["synth", "--out", str(d), "--preset", "rut"]) == 0
    return d


@pytest.fixture(scope="module")
def pipeline_out(rut_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "out"
    assert run(["pipeline", str(rut_dataset), "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_same_seed_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run(["synth", "--seed", "42", "--out", str(tmp_path / name)]) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_info_dataset(self, rut_dataset, capsys):
        assert run(["info", str(rut_dataset)]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["kind"] == "dataset" and info["frames"] == 8 and info["ground_truth"] == 1


class TestPipeline:
    def test_rut_depth(self, pipeline_out):
        rep = json.loads((pipeline_out / "report.json").read_text())
        assert 8.5 <= rep["rut_depth_mm"] <= 11.5
        assert rep["config"] == PipelineConfig().to_dict()
        assert {"defects", "mre", "r2", "slope", "intercept", "inputs"} <= set(rep)

    def test_outputs_present(self, pipeline_out):
        for name in ("mosaic.elev", "mosaic.ply", "mosaic_color.ppm", "report.json",
                     "figures/elevation.png", "figures/profiles.png"):
            assert (pipeline_out / name).is_file(), name
        assert len(list((pipeline_out / "profiles").glob("*.csv"))) == 5
        assert read_elevation(pipeline_out / "mosaic.elev").gsd > 0

    def test_deterministic(self, rut_dataset, pipeline_out, tmp_path):
        out = tmp_path / "again"
        assert run(["pipeline", str(rut_dataset), "--out", str(out)]) == 0
        assert tree_bytes(out) == tree_bytes(pipeline_out)

    def test_threads_do_not_change_mosaic(self, rut_dataset, pipeline_out, tmp_path):
        out = tmp_path / "t4"
        assert run(["stitch", str(rut_dataset), "--out", str(out), "--threads", "4", "--no-figures"]) == 0
        for name in ("mosaic.elev", "mosaic_color.ppm", "mosaic.ply"):
            assert (out / name).read_bytes() == (pipeline_out / name).read_bytes(), name

    def test_staged_commands_and_eval(self, rut_dataset, pipeline_out, tmp_path):
        mosaic = pipeline_out / "mosaic.elev"
        assert run(["profile", str(mosaic), "--out", str(tmp_path / "p"), "--at", "2.0", "--no-figures"]) == 0
        csvs = list((tmp_path / "p" / "profiles").glob("*.csv"))
        assert len(csvs) == 1 and csvs[0].read_text().startswith("offset_m,elevation_mm\n")
        rep = tmp_path / "m.json"
        assert run(["measure", str(mosaic), "--out", str(rep), "--no-figures"]) == 0
        ev = tmp_path / "e.json"
        assert run(["eval", "--report", str(rep), "--dataset", str(rut_dataset), "--out", str(ev)]) == 0
        assert json.loads(ev.read_text())["mre"] is None  # the rut preset has no pothole truth

    def test_eval_pairs(self, tmp_path):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("estimated,truth\n" + "".join(f"{v + 0.1},{v}\n" for v in (600, 700, 800, 900)))
        out = tmp_path / "fit.json"
        assert run(["eval", "--pairs", str(pairs), "--out", str(out)]) == 0
        d = json.loads(out.read_text())
        assert d["r2"] == pytest.approx(1.0) and d["slope"] == pytest.approx(1.0)
        assert out.with_suffix(".png").is_file()


class TestErrors:
    def test_unknown_flag_exits_2(self, capsys):
        assert run(["pipeline", "x", "--out", "y", "--no-such-flag"]) == 2

    def test_bad_choice_exits_2(self):
        assert run(["pipeline", "x", "--out", "y", "--composite", "max"]) == 2

    def test_processing_error_names_stage(self, pipeline_out, tmp_path, capsys):
        code = run(["profile", str(pipeline_out / "mosaic.elev"), "--out", str(tmp_path), "--at", "999"])
        assert code == 1
        assert capsys.readouterr().err.strip().startswith("profile:")

    def test_missing_dataset(self, tmp_path, capsys):
        assert run(["stitch", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 1
        assert "read:" in capsys.readouterr().err

    def test_module_entry_point(self):
        p = subprocess.run([sys.executable, "-m", "pavescan", "--bogus"], capture_output=True)
        assert p.returncode == 2


class TestHelp:
    def test_defaults_match_config(self):
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices["pipeline"]
        defaults = {a.dest: a.default for a in sub._actions}
        for f in dataclasses.fields(PipelineConfig):
            assert defaults[f.name] == getattr(PipelineConfig(), f.name), f.name

    def test_help_text_shows_defaults(self, capsys):
        assert run(["pipeline", "--help"]) == 0
        text = capsys.readouterr().out
        assert "(default: 0.7)" in text and "(default: 1.5)" in text
        assert text.count("(default: False)") == 1
