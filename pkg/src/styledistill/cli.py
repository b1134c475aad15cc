"""Command line entry point: ``styledistill <subcommand> [--seed N] [--out DIR] [--config FILE]``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import subprocess
import sys
from pathlib import Path

import yaml

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_EXTERNAL = 0, 2, 3, 4

log = logging.getLogger("styledistill")


# ---------------------------------------------------------------- subcommands
def cmd_gen_dataset(a) -> int:
    from .diffusion.dataset import make_dataset, write_dataset

    ds = make_dataset(a.n, size=a.size, seed=a.seed)
    path = write_dataset(ds, a.out)
    print(f"wrote {len(ds)} images, manifest {path}")
    return EXIT_OK


def cmd_train_denoiser(a) -> int:
    from dataclasses import asdict

    from .diffusion.dataset import make_dataset, read_dataset
    from .diffusion.train import TrainConfig, save_denoiser, train_toy_denoiser

    ds = read_dataset(a.dataset) if a.dataset else make_dataset(a.n, seed=a.seed)
    cfg = TrainConfig(steps=a.steps, batch_size=a.batch_size, lr=a.lr, seed=a.seed)
    d = train_toy_denoiser(ds, cfg, progress=lambda s, l: print(f"step {s} loss {l:.4f}", flush=True))
    out = Path(a.out)
    save_denoiser(d, out / "denoiser.pt")
    rec = asdict(d.training_record)
    rec.pop("losses")
    (out / "train_record.json").write_text(json.dumps(rec, indent=2))
    print(json.dumps(rec))
    return EXIT_OK


def _distill_config(a) -> dict:
    cfg = {"prompt": a.prompt, "denoiser": a.denoiser, "mode": a.mode, "loss": a.loss,
           "baseline": a.baseline, "seed": a.seed,
           "schedule": {"kind": a.schedule, "lambda_max": a.lambda_max},
           "beta": a.cfg_scale, "iterations": a.iterations, "lr": a.lr,
           "render_every": a.render_every}
    if a.style_image:
        cfg["style"] = {"image": a.style_image, "caption": a.caption or "",
                        "origin": a.style_origin}
    return cfg


def cmd_distill(a) -> int:
    from .config import validate
    from .pipeline import run_experiment

    metrics = run_experiment(validate(_distill_config(a)), a.out, progress=_progress(a))
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_run(a) -> int:
    from .config import ConfigError, load_config
    from .pipeline import run_experiment

    if not a.config:
        raise ConfigError("run needs --config")
    cfg = load_config(a.config)
    if a.seed is not None:
        cfg["seed"] = a.seed
    metrics = run_experiment(cfg, a.out, base=Path(a.config).resolve().parent,
                             progress=_progress(a))
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_invert_style(a) -> int:
    from .diffusion.train import load_denoiser
    from .pipeline import load_style_image
    from .render.io import save_png
    from .style.inversion import invert_style_image, reconstruct, save_style_reference

    d = load_denoiser(a.denoiser)
    img = load_style_image(a.image, d.arch.image_size, a.seed)
    ref = invert_style_image(d, img, a.mode, caption=a.caption or "", steps=a.steps, seed=a.seed,
                             ti_steps=a.ti_steps)
    out = Path(a.out)
    save_style_reference(ref, out / "style_reference.pt")
    save_png(img, out / "style.png")
    if ref.trajectory:
        prompt = ref.style_prompt or d.empty_prompt()
        save_png(reconstruct(d, ref.trajectory, prompt, len(ref.trajectory) - 1)[0],
                 out / "reconstruction.png")
    info = {"key": ref.key, "origin": ref.origin, **{k: v for k, v in ref.info.items()
                                                      if isinstance(v, (int, float, str))}}
    (out / "style_reference.json").write_text(json.dumps(info, indent=2))
    print(json.dumps(info))
    return EXIT_OK


def _views(scene, n, size):
    from .pipeline import evaluation_views

    return [(rgb, normal) for rgb, normal, _ in evaluation_views(scene, n, size)]


def cmd_make_grid(a) -> int:
    from .evaluation.grid import build_comparison_grid
    from .pipeline import load_style_image
    from .render.io import load_scene, save_png

    sa, _ = load_scene(a.scene_a)
    sb, _ = load_scene(a.scene_b)
    style = load_style_image(a.style, a.size, a.seed)
    grid = build_comparison_grid(_views(sa, a.views, a.size), _views(sb, a.views, a.size), style)
    path = save_png(grid, Path(a.out) / "grid.png")
    print(path)
    return EXIT_OK


def _run_dirs(spec: str) -> tuple[str, dict]:
    name, _, path = spec.partition("=")
    if not path:
        name, path = Path(spec).name, spec
    root = Path(path)
    runs = {root.name: root} if (root / "scene.pt").exists() else \
        {p.name: p for p in sorted(root.iterdir()) if (p / "scene.pt").exists()}
    if not runs:
        from .config import ConfigError

        raise ConfigError("no run directories found", [str(root)])
    return name, runs


def cmd_evaluate(a) -> int:
    from .evaluation.judges import make_judge
    from .evaluation.report import write_report
    from .evaluation.tournament import run_tournament
    from .render.io import load_png, load_scene

    methods, prompts, styles, direct = {}, {}, {}, {}
    for spec in a.method:
        name, runs = _run_dirs(spec)
        methods[name], scores = {}, []
        for pid, run in runs.items():
            scene, _ = load_scene(run / "scene.pt")
            methods[name][pid] = _views(scene, a.views, a.size)
            cfg = yaml.safe_load((run / "config.yaml").read_text())
            prompts.setdefault(pid, cfg["prompt"])
            if (run / "style.png").exists():
                styles.setdefault(pid, load_png(run / "style.png", a.size))
            m = json.loads((run / "metrics.json").read_text())
            if "style_alignment" in m:
                scores.append(m["style_alignment"])
        direct[name] = {"mean_style_alignment": sum(scores) / len(scores) if scores else None}
    common = set.intersection(*(set(v) for v in methods.values()))
    if not common:
        from .config import ConfigError

        raise ConfigError("methods share no prompt ids")
    import torch

    prompts = {p: prompts[p] for p in sorted(common)}
    styles = {p: styles.get(p, torch.full((3, a.size, a.size), 0.5)) for p in prompts}
    methods = {n: {p: v[p] for p in prompts} for n, v in methods.items()}
    if a.judge == "mock-metric":
        judge = make_judge("mock-metric", cell=a.size)
    else:
        judge = make_judge("external-llm", endpoint=a.endpoint,
                           transcript_dir=str(Path(a.out) / "transcripts"))
    res = run_tournament(methods, prompts, styles, judge, a.pairs, seed=a.seed,
                         anchor=a.anchor, max_in_flight=a.max_in_flight, cell=a.size)
    res.report["direct_metrics"] = direct
    paths = write_report(res.report, res.table, a.out)
    print((Path(a.out) / "report.md").read_text())
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    if res.report["skipped"] and a.judge == "external-llm":
        return EXIT_EXTERNAL
    return EXIT_OK


def cmd_sweep(a) -> int:
    """Launch one ``run`` process per combination of ``--set key=v1,v2`` values."""
    from .config import ConfigError, load_config

    if not a.config:
        raise ConfigError("sweep needs --config")
    base = load_config(a.config)
    axes = []
    for item in a.set or []:
        key, _, values = item.partition("=")
        if not values:
            raise ConfigError("bad --set", [item])
        axes.append((key, [yaml.safe_load(v) for v in values.split(",")]))
    out = Path(a.out)
    procs, status = [], EXIT_OK
    combos = list(itertools.product(*[vals for _, vals in axes])) or [()]
    for combo in combos:
        cfg = json.loads(json.dumps(base))
        tag = []
        for (key, _), val in zip(axes, combo):
            node = cfg
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = val
            tag.append(f"{parts[-1]}={val}")
        run_dir = out / ("_".join(tag) or "base")
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg["denoiser"] = str((Path(a.config).resolve().parent / cfg["denoiser"]).resolve())
        cfg_path = run_dir / "sweep_config.yaml"
        cfg_path.write_text(yaml.safe_dump(cfg))
        cmd = [sys.executable, "-m", "styledistill.cli", "run", "--config", str(cfg_path),
               "--out", str(run_dir)]
        procs.append(subprocess.Popen(cmd))
        if len(procs) >= a.jobs:
            status = max(status, procs.pop(0).wait())
    for p in procs:
        status = max(status, p.wait())
    return status


def cmd_schema(a) -> int:
    from .config import EXPERIMENT_SCHEMA

    text = json.dumps(EXPERIMENT_SCHEMA, indent=2)
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        (Path(a.out) / "experiment.schema.json").write_text(text)
    print(text)
    return EXIT_OK


def _progress(a):
    every = getattr(a, "log_every", 0)
    if not every:
        return None

    def cb(k, rec):
        if (k + 1) % every == 0:
            print(f"iter {k + 1} lambda {rec['lambda']:.3f} t {rec['t']} "
                  f"|r| {rec['residual_norm']:.3f}", flush=True)
    return cb


# ---------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="styledistill", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None if name == "run" else 0)
        sp.add_argument("--out", default="out" if name != "schema" else None)
        sp.add_argument("--config", default=None,
                        help="YAML file (run/sweep: experiment config; others: option defaults)")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-dataset", cmd_gen_dataset, "write the procedural toy dataset")
    sp.add_argument("--n", type=int, default=4000)
    sp.add_argument("--size", type=int, default=32)

    sp = add("train-denoiser", cmd_train_denoiser, "train the toy conditional denoiser")
    sp.add_argument("--dataset", default=None, help="manifest.json from gen-dataset")
    sp.add_argument("--n", type=int, default=4000)
    sp.add_argument("--steps", type=int, default=1500)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--lr", type=float, default=2e-3)

    sp = add("distill", cmd_distill, "optimize one scene")
    sp.add_argument("--prompt", required=False, default="sphere")
    sp.add_argument("--denoiser", default="denoiser.pt")
    sp.add_argument("--mode", choices=["canvas2d", "voxel3d"], default="canvas2d")
    sp.add_argument("--loss", choices=["sds", "ssd", "snf-ssd", "vsd-ssd"], default="snf-ssd")
    sp.add_argument("--schedule", choices=["constant", "sqrt", "quad"], default="sqrt")
    sp.add_argument("--lambda-max", type=float, default=0.6)
    sp.add_argument("--cfg-scale", type=float, default=None)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--baseline", default="none",
                    choices=["none", "style-in-prompt", "neural-style-loss", "textual-inversion"])
    sp.add_argument("--style-image", default=None, help="PNG path or builtin:<style>")
    sp.add_argument("--caption", default=None)
    sp.add_argument("--style-origin", choices=["generated", "inverted"], default="generated")
    sp.add_argument("--render-every", type=int, default=0)
    sp.add_argument("--log-every", type=int, default=0)

    sp = add("run", cmd_run, "run an experiment from a config file")
    sp.add_argument("--log-every", type=int, default=0)

    sp = add("invert-style", cmd_invert_style, "turn a style image into a style reference")
    sp.add_argument("--denoiser", default="denoiser.pt")
    sp.add_argument("--image", required=False, default="builtin:fire")
    sp.add_argument("--caption", default=None)
    sp.add_argument("--mode", choices=["ddim-inversion", "textual-inversion"], default="ddim-inversion")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--ti-steps", type=int, default=200)

    sp = add("make-grid", cmd_make_grid, "compose a comparison grid for two scenes")
    sp.add_argument("--scene-a", required=False)
    sp.add_argument("--scene-b", required=False)
    sp.add_argument("--style", default="builtin:fire")
    sp.add_argument("--views", type=int, default=4)
    sp.add_argument("--size", type=int, default=32)

    sp = add("evaluate", cmd_evaluate, "pairwise tournament and Elo report over run directories")
    sp.add_argument("--method", action="append", default=[], help="NAME=DIR (repeatable)")
    sp.add_argument("--pairs", type=int, default=120)
    sp.add_argument("--judge", choices=["mock-metric", "external-llm"], default="mock-metric")
    sp.add_argument("--endpoint", default="")
    sp.add_argument("--anchor", default=None)
    sp.add_argument("--views", type=int, default=4)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--max-in-flight", type=int, default=4)

    sp = add("sweep", cmd_sweep, "run a parameter grid as separate processes")
    sp.add_argument("--set", action="append", help="dotted.key=v1,v2")
    sp.add_argument("--jobs", type=int, default=1)

    add("schema", cmd_schema, "print the experiment config JSON schema")
    return p


def _apply_option_file(parser, argv) -> argparse.Namespace:
    """For subcommands other than run/sweep, --config supplies option defaults."""
    a = parser.parse_args(argv)
    if a.config and a.command not in ("run", "sweep"):
        from .config import ConfigError

        try:
            opts = yaml.safe_load(Path(a.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {a.config}", [str(exc)]) from exc
        known = set(vars(a))
        unknown = [k for k in opts if k.replace("-", "_") not in known]
        if unknown:
            raise ConfigError("unknown options in config file", unknown)
        explicit = parser.parse_args(argv)
        for k, v in opts.items():
            k = k.replace("-", "_")
            # command-line flags win over the file
            if f"--{k.replace('_', '-')}" not in argv:
                setattr(explicit, k, v)
        a = explicit
    return a


def main(argv=None) -> int:
    from .baselines.captioning import CaptionError
    from .config import ConfigError
    from .diffusion.schedule import ContractError
    from .diffusion.unet import NumericalError
    from .diffusion.vocab import UnknownTokenError
    from .evaluation.judges import JudgeError

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        a = _apply_option_file(parser, argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return a.fn(a)
    except (ConfigError, ContractError, UnknownTokenError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaptionError, JudgeError) as exc:
        print(f"external service failure: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL


if __name__ == "__main__":
    sys.exit(main())
