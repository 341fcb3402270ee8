"""Command line entry point: ``python -m fairscope <command>``.

Exit codes: 0 success, 2 invalid configuration or input, 3 training
diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment as aug
from .data import (
    ConfigError,
    CorruptDatasetError,
    default_concept_bank,
    generate_dataset,
    load_split,
    write_concept_bank,
)
from .model import TrainingDivergedError, fake_probability, load_checkpoint, saliency_map
from .numerics import InvalidInputError, child_seed, make_rng
from .pipeline import EARLY_STOP_PATIENCE, PipelineConfig, PipelineConfigError, ablate, evaluate, run

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("fairscope")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, gen=replace(cfg.gen, seed=args.seed))
    if getattr(args, "data", None):
        cfg = replace(cfg, data_dir=args.data)
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.data_dir)
    generate_dataset(cfg.gen, out)
    specs = default_concept_bank(cfg.gen.groups)
    write_concept_bank(specs, out / "concepts", cfg.concept_images, cfg.gen, child_seed(cfg.gen.seed, 7))
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.early_stop:
        cfg = replace(cfg, train=replace(cfg.train, patience=EARLY_STOP_PATIENCE))
    result = run(cfg)
    print(json.dumps({k: result.report["video_metrics"][k] for k in ("auc", "f_eo", "f_fpr", "f_tpr", "f1")}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, header = load_checkpoint(args.checkpoint)
    data = args.data or header.get("data_dir")
    if not data:
        raise InvalidInputError("no --data given and the checkpoint does not name a dataset")
    _, video = evaluate(params, data, args.out, header.get("mode", "run"))
    print(json.dumps({"auc": video.auc, "f_eo": video.f_eo}))
    return EXIT_OK


def _find_video(data_dir: Path, video_id: str):
    for split in ("test", "val", "train"):
        if not (data_dir / split / "manifest.json").exists():
            continue
        for v in load_split(data_dir / split):
            if v.id == video_id:
                return v
    raise InvalidInputError(f"video {video_id!r} not found under {data_dir}")


def cmd_explain(args) -> int:
    ckpt = Path(args.checkpoint)
    params, header = load_checkpoint(ckpt)
    css_path = ckpt.parent / "css.json"
    if not css_path.exists():
        raise InvalidInputError(f"{css_path} missing; explain needs a run with the concept phase")
    data = Path(args.data or header.get("data_dir", ""))
    video = _find_video(data, args.video)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = np.linspace(0, video.n_frames - 1, min(args.frames, video.n_frames)).round().astype(int)
    maps = []
    for t in frames:
        path = aug.write_pgm(out / f"{video.id}_t{t:02d}_saliency.pgm", saliency_map(params, video.frames[t]))
        maps.append(str(path))
    ranking = json.loads(css_path.read_text(encoding="utf-8"))
    (out / "css.json").write_text(json.dumps(ranking, indent=1), encoding="utf-8")
    summary = {
        "video": video.id,
        "label": video.label,
        "score": float(np.mean(fake_probability(params, video.frames))),
        "frames": frames.tolist(),
        "saliency": maps,
        "top_concepts": ranking[:3],
    }
    (out / "explanation.json").write_text(json.dumps(summary, indent=1), encoding="utf-8")
    print(json.dumps(summary["top_concepts"]))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    workers = int(os.environ.get("FAIRSCOPE_THREADS", "1") or 1)
    tables = ("3", "4") if args.table == "all" else (args.table,)
    rows = ablate(cfg, args.out or cfg.out_dir, tables, workers=max(workers, 1))
    print((Path(args.out or cfg.out_dir) / "ablation.md").read_text(encoding="utf-8"))
    return EXIT_OK if all(r["error"] is None for r in rows) else EXIT_CONFIG


def cmd_preview(args) -> int:
    cfg = _config(args)
    videos = load_split(Path(cfg.data_dir) / "train")
    rng = make_rng(cfg.seed)
    if args.video_i:
        vi = next((v for v in videos if v.id == args.video_i), None)
        if vi is None:
            raise InvalidInputError(f"video {args.video_i!r} not in train split")
    else:
        vi = videos[rng.integers(len(videos))]
    peers = [v for v in videos if v.label == vi.label and v.id != vi.id]
    vj = next((v for v in peers if v.id == args.video_j), None) if args.video_j else peers[rng.integers(len(peers))]
    if vj is None:
        raise InvalidInputError(f"video {args.video_j!r} not in train split with the same label")
    mask = aug.FreqMaskConfig(args.alpha if args.alpha is not None else cfg.alpha, cfg.mask_layout)
    paths = aug.preview(vi.frames[0], vj.frames[0], args.out, mask, rng)
    print("\n".join(str(p) for p in paths))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairscope", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON pipeline config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required)
        return p

    p = common(sub.add_parser("generate", help="write the synthetic dataset and concept bank"))
    p.set_defaults(fn=cmd_generate)

    p = common(sub.add_parser("train", help="train, evaluate and write a run report"))
    p.add_argument("--mode", choices=("vanilla", "proposed", "variant"))
    p.add_argument("--data")
    p.add_argument("--early-stop", action="store_true", help="stop once validation loss stalls for 3 epochs")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score the test split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("explain", help="saliency maps and concept ranking for one video")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=5, choices=range(1, 6), metavar="1..5")
    p.set_defaults(fn=cmd_explain)

    p = common(sub.add_parser("ablate", help="run the ablation grid"))
    p.add_argument("--data")
    p.add_argument("--table", choices=("3", "4", "all"), default="all")
    p.set_defaults(fn=cmd_ablate)

    p = common(sub.add_parser("preview-augment", help="write images showing one augmentation"), out_required=True)
    p.add_argument("--data")
    p.add_argument("--video-i")
    p.add_argument("--video-j")
    p.add_argument("--alpha", type=float)
    p.set_defaults(fn=cmd_preview)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, CorruptDatasetError, InvalidInputError, PipelineConfigError, FileNotFoundError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
