import json

import pytest
import torch
import yaml

from conftest import make_tiny_denoiser
from styledistill.cli import build_parser, main
from styledistill.config import ConfigError, load_config, validate
from styledistill.diffusion.train import save_denoiser
from styledistill.style import ReconstructionWarning


@pytest.fixture(scope="module")
def den_path(tmp_path_factory):
    return save_denoiser(make_tiny_denoiser(), tmp_path_factory.mktemp("den") / "tiny.pt")


def write_cfg(path, **kw):
    path.write_text(yaml.safe_dump(kw))
    return path


# ---------------------------------------------------------------- config
def test_validate_fills_defaults_and_rejects():
    cfg = validate({"prompt": "cube", "denoiser": "d.pt"})
    assert cfg["mode"] == "canvas2d" and cfg["schedule"] == {"kind": "sqrt", "lambda_max": 0.6}
    with pytest.raises(ConfigError) as err:
        validate({"prompt": "cube", "denoiser": "d.pt", "schedule": {"lambda_max": 1.5}})
    assert any("lambda_max" in e for e in err.value.errors)
    with pytest.raises(ConfigError):
        validate({"prompt": "cube", "denoiser": "d.pt", "colour": "red"})
    with pytest.raises(ConfigError):
        validate({"prompt": "cube", "denoiser": "d.pt", "t_range": [0.5, 0.1]})
    with pytest.raises(ConfigError):
        validate({"prompt": "cube", "denoiser": "d.pt", "baseline": "style-in-prompt"})


def test_schema_command(capsys, tmp_path):
    assert main(["schema", "--out", str(tmp_path)]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["properties"]["schedule"]["properties"]["lambda_max"]["maximum"] == 1
    assert (tmp_path / "experiment.schema.json").exists()


def test_parser_defaults_follow_reference_settings():
    p = build_parser()
    assert p.parse_args(["evaluate"]).pairs == 120
    a = p.parse_args(["distill", "--loss", "ssd", "--schedule", "sqrt", "--lambda-max", "0.6"])
    assert (a.loss, a.schedule, a.lambda_max) == ("ssd", "sqrt", 0.6)
    assert p.parse_args(["distill", "--loss", "snf-ssd", "--cfg-scale", "7.5"]).cfg_scale == 7.5


# ---------------------------------------------------------------- run
def test_run_rejects_bad_lambda(tmp_path, den_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", prompt="cube", denoiser=str(den_path),
                    schedule={"kind": "sqrt", "lambda_max": 1.5})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "lambda_max" in capsys.readouterr().err
    assert not (tmp_path / "o" / "metrics.json").exists()


def test_run_missing_assets_exit_2(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", prompt="cube", denoiser="nope.pt")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_run_canvas_is_reproducible(tmp_path, den_path):
    cfg = write_cfg(tmp_path / "c.yaml", prompt="red cube", denoiser=str(den_path), loss="sds",
                    beta=7.5, iterations=4, render_every=2)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    for name in ("config.yaml", "trajectory.jsonl", "scene.pt", "final/view_0.png", "renders/iter_00002.png"):
        assert (a / name).exists(), name
    assert len((a / "trajectory.jsonl").read_text().splitlines()) == 4
    # the snapshot replays to the same metrics
    snap = load_config(a / "config.yaml")
    assert snap["iterations"] == 4
    assert main(["run", "--config", str(a / "config.yaml"), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "metrics.json").read_bytes() == (a / "metrics.json").read_bytes()


def test_run_grid_with_style_and_baselines(tmp_path, den_path):
    base = dict(prompt="red cube", denoiser=str(den_path), mode="voxel3d", loss="ssd", beta=7.5,
                iterations=2, eval_views=2)
    cfg = write_cfg(tmp_path / "g.yaml", **base, style={"image": "builtin:fire", "caption": "fire"})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    m = json.loads((tmp_path / "g" / "metrics.json").read_text())
    assert {"style_alignment", "silhouette_consistency", "foreground_fraction"} <= set(m)
    assert (tmp_path / "g" / "final" / "normal_1.png").exists() and (tmp_path / "g" / "style.png").exists()
    for baseline, extra in (("style-in-prompt", {"description": "fire"}),
                            ("textual-inversion", {"ti_steps": 2})):
        cfg = write_cfg(tmp_path / f"{baseline}.yaml", **{**base, "mode": "canvas2d"}, baseline=baseline,
                        style={"image": "builtin:fire", "caption": "fire", **extra})
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / baseline)]) == 0
    m = json.loads((tmp_path / "style-in-prompt" / "metrics.json").read_text())
    assert m["prompt"] == "fire red cube"


def test_numerical_failure_exit_3(tmp_path):
    d = make_tiny_denoiser()
    with torch.no_grad():
        d.conv_out.bias.fill_(float("nan"))
    bad = save_denoiser(d, tmp_path / "bad.pt")
    assert main(["distill", "--denoiser", str(bad), "--prompt", "cube", "--loss", "sds",
                 "--iterations", "2", "--out", str(tmp_path / "o")]) == 3


def test_unknown_prompt_word_exit_2(tmp_path, den_path):
    assert main(["distill", "--denoiser", str(den_path), "--prompt", "purple dragon",
                 "--iterations", "1", "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------- other subcommands
def test_distill_flags_snapshot(tmp_path, den_path):
    out = tmp_path / "d"
    assert main(["distill", "--denoiser", str(den_path), "--prompt", "blue sphere", "--loss", "snf-ssd",
                 "--cfg-scale", "7.5", "--schedule", "sqrt", "--lambda-max", "0.6", "--iterations", "2",
                 "--style-image", "builtin:dots", "--caption", "dots", "--out", str(out)]) == 0
    snap = yaml.safe_load((out / "config.yaml").read_text())
    assert snap["beta"] == 7.5 and snap["schedule"] == {"kind": "sqrt", "lambda_max": 0.6}
    lams = [json.loads(s)["lambda"] for s in (out / "trajectory.jsonl").read_text().splitlines()]
    assert lams == [0.0, 0.6 * 0.5 ** 0.5]


def test_option_file_for_subcommands(tmp_path, den_path):
    opts = write_cfg(tmp_path / "o.yaml", prompt="green cone", iterations=1, loss="sds")
    out = tmp_path / "x"
    assert main(["distill", "--config", str(opts), "--denoiser", str(den_path), "--out", str(out)]) == 0
    assert yaml.safe_load((out / "config.yaml").read_text())["prompt"] == "green cone"
    bad = write_cfg(tmp_path / "bad.yaml", flavour="sweet")
    assert main(["distill", "--config", str(bad), "--out", str(out)]) == 2


def test_gen_dataset_invert_and_grid(tmp_path, den_path):
    assert main(["gen-dataset", "--n", "6", "--out", str(tmp_path / "ds")]) == 0
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert len(manifest["entries"] if isinstance(manifest, dict) else manifest) == 6
    with pytest.warns(ReconstructionWarning):  # the untrained model cannot reconstruct
        assert main(["invert-style", "--denoiser", str(den_path), "--image", "builtin:stripes",
                     "--steps", "5", "--out", str(tmp_path / "inv")]) == 0
    info = json.loads((tmp_path / "inv" / "style_reference.json").read_text())
    assert info["origin"] == "inverted" and (tmp_path / "inv" / "reconstruction.png").exists()
    for name in ("a", "b"):
        cfg = write_cfg(tmp_path / f"{name}.yaml", prompt="cube", denoiser=str(den_path), mode="voxel3d",
                        loss="sds", iterations=1, eval_views=1)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert main(["make-grid", "--scene-a", str(tmp_path / "a" / "scene.pt"), "--scene-b",
                 str(tmp_path / "b" / "scene.pt"), "--views", "2", "--out", str(tmp_path / "grid")]) == 0
    from styledistill.render.io import load_png

    assert load_png(tmp_path / "grid" / "grid.png").shape == (3, 96, 128)


def _method_runs(root, den_path, names=("plain", "styled")):
    for i, name in enumerate(names):
        for pid, prompt in (("p0", "red cube"), ("p1", "blue sphere")):
            cfg = write_cfg(root / f"{name}_{pid}.yaml", prompt=prompt, denoiser=str(den_path),
                            mode="voxel3d", loss="ssd", beta=7.5, iterations=2, eval_views=2,
                            schedule={"kind": "constant", "lambda_max": 0.5 * i},
                            style={"image": "builtin:fire", "caption": "fire"})
            assert main(["run", "--config", str(cfg), "--out", str(root / name / pid)]) == 0


def test_evaluate_mock_and_external_failure(tmp_path, den_path, capsys):
    _method_runs(tmp_path, den_path)
    args = ["evaluate", "--method", f"plain={tmp_path / 'plain'}", "--method",
            f"styled={tmp_path / 'styled'}", "--views", "2", "--pairs", "6"]
    assert main(args + ["--out", str(tmp_path / "ev")]) == 0
    out = capsys.readouterr().out
    assert "| Methods |" in out
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["pairs_completed"] == 6 and report["elo"]["ratings"]["plain"]["Overall"] == 1000.0
    assert (tmp_path / "ev" / "elo.png").exists() and "direct_metrics" in report
    assert main(args + ["--out", str(tmp_path / "ev2")]) == 0
    assert (tmp_path / "ev2" / "report.json").read_text() == (tmp_path / "ev" / "report.json").read_text()
    code = main(args + ["--judge", "external-llm", "--endpoint", "http://127.0.0.1:9/judge",
                        "--out", str(tmp_path / "ev3")])
    assert code == 4
    assert list((tmp_path / "ev3" / "transcripts").glob("*.json"))


def test_sweep_launches_runs(tmp_path, den_path):
    cfg = write_cfg(tmp_path / "s.yaml", prompt="cube", denoiser=str(den_path), loss="sds", iterations=1)
    assert main(["sweep", "--config", str(cfg), "--set", "seed=0,1", "--out", str(tmp_path / "sw")]) == 0
    a = json.loads((tmp_path / "sw" / "seed=0" / "metrics.json").read_text())
    b = json.loads((tmp_path / "sw" / "seed=1" / "metrics.json").read_text())
    assert a["iterations"] == b["iterations"] == 1
