"""Command-line entry point: ``texavatar <verb> ...``.

Every verb writes its resolved configuration next to its outputs. Failures
exit nonzero with a JSON object ``{"error": <category>, "message": ...}`` on
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, write_atlas
from .dataset import pose_from_record, load_dataset, read_rgb_png, write_dataset, write_rgb_png
from .init_transfer import transfer_generator
from .train import TrainConfig, evaluate, init_textures_stage, pretrain_stage, render, train

log = logging.getLogger("texavatar")

# TrainConfig fields exposed as flags, with argparse keyword arguments
_TRAIN_FLAG_TYPES = {
    "int": {"type": int},
    "float": {"type": float},
    "str": {"type": str},
    "int | None": {"type": int},
    "float | None": {"type": float},
    "tuple[float, float]": {"type": float, "nargs": 2},
    "list[int] | None": {"type": int, "nargs": "+"},
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TrainConfig JSON; explicit flags override it")
    for f in dataclasses.fields(TrainConfig):
        if f.name in ("dataset", "out_dir"):
            continue
        kw = dict(_TRAIN_FLAG_TYPES[f.type])
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=argparse.SUPPRESS, **kw)


def _train_config(args, out_dir: Path | None) -> TrainConfig:
    base = json.loads(args.config.read_text()) if getattr(args, "config", None) else {}
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    base.update({k: v for k, v in vars(args).items() if k in names})
    base["dataset"] = str(args.dataset)
    base["out_dir"] = str(out_dir) if out_dir else None
    return TrainConfig.from_dict(base)


def _write_config(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, default=str))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".config.json")


def _jsonable(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------- verbs


def cmd_synth(args) -> dict:
    from .synthetic import default_figure, generate_dataset

    fig = default_figure(texture_side=args.texture_side, seed=args.figure_seed)
    frames, split = generate_dataset(
        fig, args.cameras, args.poses, motion_seed=args.motion_seed, holdout_cameras=args.holdout_cameras,
        holdout_fraction=args.holdout_fraction, image_size=args.image_size, arc_degrees=args.arc_degrees,
    )
    out = Path(args.out)
    write_dataset(out, frames, fig.skeleton, split, fig.n_parts, fig.texture_side, args.depth_scale,
                  extra={"source": "synthetic", "figure_seed": args.figure_seed, "motion_seed": args.motion_seed})
    write_atlas(out / "gt_textures", fig.textures)
    _write_config(out / "config.json", {"command": "synth", **_jsonable(args)})
    return {"frames": len(frames), "split": split.to_dict(), "out": str(out)}


def cmd_pretrain(args) -> dict:
    out = Path(args.out)
    config = _train_config(args, out)
    ds = load_dataset(config.dataset)
    _write_config(out / "config.json", {"command": "pretrain", **config.to_dict()})
    with open(out / "metrics.jsonl", "w") as fh:
        ckpt = pretrain_stage(config, ds, on_record=lambda r: fh.write(json.dumps(r) + "\n"))
    save_checkpoint(ckpt, out / "checkpoint.tnav")
    return {"checkpoint": str(out / "checkpoint.tnav"), "pretrain_steps": config.pretrain_steps}


def cmd_init_textures(args) -> dict:
    out = Path(args.out)
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    _write_config(out / "config.json", {"command": "init-textures", **_jsonable(args)})
    ckpt = init_textures_stage(ckpt, ds)
    save_checkpoint(ckpt, out / "checkpoint.tnav")
    write_atlas(out / "textures", ckpt.textures)
    return {"checkpoint": str(out / "checkpoint.tnav"), "atlas": str(out / "textures")}


def cmd_train(args) -> dict:
    out = Path(args.out)
    config = _train_config(args, out)
    ds = load_dataset(config.dataset)
    start = load_checkpoint(args.init_checkpoint).generator if args.init_checkpoint else None
    result = train(config, ds, generator=start)
    write_atlas(out / "textures", result.checkpoint.textures)
    main = [r for r in result.metrics if r["phase"] == "main"]
    evals = [r for r in result.metrics if r["phase"] == "eval"]
    return {
        "checkpoint": str(out / "checkpoint.tnav"),
        "steps": config.steps,
        "final_loss": main[-1]["loss"] if main else None,
        "last_eval": evals[-1] if evals else None,
    }


def cmd_render(args) -> dict:
    ckpt = load_checkpoint(args.checkpoint)
    rec = json.loads(Path(args.pose).read_text())
    pose = pose_from_record(rec, ckpt.skeleton, source=str(args.pose))
    bg = read_rgb_png(args.background) if args.background else None
    if bg is not None and bg.shape[1:] != (ckpt.raster.height, ckpt.raster.width):
        raise ValueError(f"background {bg.shape[1:]} does not match render size "
                         f"{(ckpt.raster.height, ckpt.raster.width)}")
    img = render(ckpt, pose, bg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rgb_png(out, img)
    _write_config(_sidecar(out), {"command": "render", **_jsonable(args)})
    return {"out": str(out)}


def cmd_eval(args) -> dict:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    report = evaluate(ckpt, ds, args.split)
    if args.out:
        out = Path(args.out)
        _write_config(out, report)
        _write_config(_sidecar(out), {"command": "eval", **_jsonable(args)})
    return {k: report[k] for k in ("split", "n_frames", "mean_ssim")}


def cmd_gradcheck(args) -> dict:
    from .gradsuite import run_suite

    entries = run_suite(seed=args.seed)
    rows = []
    for e in entries:
        print(e.result.summary() + f" ({e.rejected} kinked candidates skipped)")
        rows.append({"name": e.result.name, "ok": e.ok, "max_rel_error": e.result.max_rel_error,
                     "probes": len(e.result.probes), "rejected": e.rejected})
    report = {"ok": all(e.ok for e in entries), "checks": rows}
    if args.out:
        _write_config(Path(args.out), report)
        _write_config(_sidecar(Path(args.out)), {"command": "gradcheck", **_jsonable(args)})
    if not report["ok"]:
        raise GradcheckFailed(", ".join(r["name"] for r in rows if not r["ok"]))
    return {"ok": True, "checks": len(rows)}


def cmd_transfer(args) -> dict:
    out = Path(args.out)
    src = load_checkpoint(args.source)
    ds = load_dataset(args.dataset)
    cfg = dataclasses.replace(src.generator.config, input_channels=ds.skeleton.channel_count,
                              n_parts=ds.n_parts, texture_side=ds.texture_side)
    gen = transfer_generator(src, cfg)
    ckpt = dataclasses.replace(
        src, generator=gen, skeleton=ds.skeleton, step=0, adam_t=0, adam_m={}, adam_v={},
        textures=np.zeros((cfg.n_parts, 3, cfg.texture_side, cfg.texture_side), np.float32),
        config={**src.config, "transferred_from": str(args.source), "dataset": str(args.dataset)},
    )
    ckpt = init_textures_stage(ckpt, ds)
    _write_config(out / "config.json", {"command": "transfer", **_jsonable(args)})
    save_checkpoint(ckpt, out / "checkpoint.tnav")
    write_atlas(out / "textures", ckpt.textures)
    return {"checkpoint": str(out / "checkpoint.tnav")}


class GradcheckFailed(RuntimeError):
    category = "gradcheck-failed"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texavatar", description="Textured neural avatars at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--cameras", type=int, default=5)
    s.add_argument("--poses", type=int, default=50)
    s.add_argument("--motion-seed", type=int, default=7)
    s.add_argument("--figure-seed", type=int, default=0)
    s.add_argument("--texture-side", type=int, default=32)
    s.add_argument("--image-size", type=int, default=64)
    s.add_argument("--holdout-cameras", type=int, default=1)
    s.add_argument("--holdout-fraction", type=float, default=0.2)
    s.add_argument("--arc-degrees", type=float, default=120.0)
    s.add_argument("--depth-scale", type=float, default=8.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", help="pretrain the generator on UV targets")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    _add_train_flags(s)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("init-textures", help="initialize textures from a pretrained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init_textures)

    s = sub.add_parser("train", help="pretrain, initialize textures, then train generator and textures")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--init-checkpoint", help="start from this checkpoint's generator")
    _add_train_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render a pose record to a PNG")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--background")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="mean SSIM over a dataset split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test", choices=("train", "test", "all"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("transfer", help="reuse another avatar's generator; textures start from scratch")
    s.add_argument("--source", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_transfer)
    return p


def _category(exc: BaseException) -> str:
    if hasattr(exc, "category"):
        return exc.category
    if isinstance(exc, FileNotFoundError):
        return "missing-file"
    if isinstance(exc, json.JSONDecodeError):
        return "parse"
    if isinstance(exc, (ValueError, TypeError, KeyError)):
        return "validation"
    return "internal"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = args.func(args)
    except Exception as exc:  # reported as a machine-readable category
        cat = _category(exc)
        if cat == "internal":
            log.exception("unexpected failure")
        print(json.dumps({"error": cat, "message": str(exc)}), file=sys.stderr)
        return 1 if cat == "gradcheck-failed" else 2
    print(json.dumps(summary, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
