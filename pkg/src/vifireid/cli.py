"""Command-line entry point: ``vifireid {gen,train,eval,retrieve,project,roc}``.

Exit codes: 0 on success, 2 for usage or input errors (bad flags, missing
or malformed files, unknown ids), 1 for anything else. ``VIFI_LOG`` sets
the log level (quiet, info or debug).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgio
from .csi_encoder import csi_tokens
from .dataset import GeneratorConfig, Manifest, generate_dataset, load_arrays
from .fusion import ModelConfig
from .retrieval import (DIRECTIONS, auc, format_report, load_embeddings, pair_scores, project_2d, ranked_scores,
                        roc_points, run_retrieval, save_embeddings)
from .trainer import TrainConfig, embed, load_checkpoint, modes_for, train

log = logging.getLogger("vifireid")

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    name = os.environ.get("VIFI_LOG", "quiet").lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"VIFI_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


# -- shared loading ---------------------------------------------------------------------
def _load_manifest(path) -> Manifest:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    return Manifest.load(p)


def _split_arrays(manifest: Manifest, split: str, model_cfg: ModelConfig):
    if split not in ("train", "test"):
        raise UsageError(f"unknown split {split!r}")
    data = load_arrays(manifest, split, lambda u: csi_tokens(u, model_cfg.wifi))
    want = (model_cfg.video.frames, model_cfg.video.patches, model_cfg.video.patch_dim)
    if len(data) and data.clips.shape[1:] != want:
        raise UsageError(f"clips of shape {data.clips.shape[1:]} do not match the model's {want}")
    return data


def _records(args, modes):
    """Embeddings from --embeddings, or computed from --checkpoint and --manifest."""
    if args.embeddings:
        path = Path(args.embeddings)
        if not path.is_file():
            raise UsageError(f"embedding store not found: {path}")
        return load_embeddings(path)
    if not (args.checkpoint and args.manifest):
        raise UsageError("give --embeddings, or both --checkpoint and --manifest")
    state, model_cfg, _ = load_checkpoint(args.checkpoint)
    data = _split_arrays(_load_manifest(args.manifest), args.split, model_cfg)
    return embed(state.model, data, modes)


# -- commands ---------------------------------------------------------------------------
def cmd_gen(args) -> None:
    if args.ids < 2:
        raise UsageError("--ids must be at least 2 (retrieval needs negatives)")
    if args.per_id < 2:
        raise UsageError("--per-id must be at least 2 so both splits see every identity")
    cfg = cfgio.load_config_file(args.config, gen=GeneratorConfig)["gen"] if args.config else GeneratorConfig()
    if args.occlusion is not None:
        cfg = replace(cfg, occlusion_rate=args.occlusion)
    out = Path(args.out)
    try:
        manifest = generate_dataset(out, seed=args.seed, n_ids=args.ids, seqs_per_id=args.per_id,
                                    noise_level=args.noise, cfg=cfg)
    except OSError as e:
        raise UsageError(f"cannot write dataset to {out}: {e}") from e
    path = out / "manifest.tsv"
    print(f"wrote {len(manifest)} samples, {len(manifest.identities())} identities")
    print(f"manifest {path} sha256={_file_hash(path)}")


def cmd_train(args) -> None:
    if args.config:
        cfgs = cfgio.load_config_file(args.config, model=ModelConfig, train=TrainConfig)
        model_cfg, train_cfg = cfgs["model"], cfgs["train"]
    else:
        model_cfg = ModelConfig.tiny() if args.preset == "tiny" else ModelConfig()
        train_cfg = TrainConfig()
    if args.seed is not None:
        model_cfg = replace(model_cfg, seed=args.seed)
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    manifest = _load_manifest(args.manifest)
    data = _split_arrays(manifest, "train", model_cfg)
    held_out = _split_arrays(manifest, "test", model_cfg)
    log_path = args.log or f"{args.out}.log"
    res = train(model_cfg, train_cfg, data, eval_data=held_out, out=args.out, log_path=log_path)
    final = res.losses[-1] if res.losses else float("nan")
    print(f"trained {train_cfg.epochs} epochs, final loss {final:.6f}")
    print(f"checkpoint {res.checkpoint} sha256={_file_hash(res.checkpoint.with_suffix('.bin'))}")
    print(f"log {log_path}")


def cmd_eval(args) -> None:
    records = _records(args, modes_for(args.direction))
    run = run_retrieval(records, args.direction)
    print(format_report(run))
    if args.save_embeddings:
        save_embeddings(args.save_embeddings, records)
        print(f"embeddings {args.save_embeddings}")


def cmd_retrieve(args) -> None:
    if args.topk < 1:
        raise UsageError("--topk must be positive")
    qmod, gmod = DIRECTIONS[args.direction]
    records = _records(args, modes_for(args.direction))
    queries = [r for r in records if r.modality == qmod and r.sample_id == args.query_id]
    if not queries:
        raise UsageError(f"query {args.query_id!r} not found among {qmod} embeddings")
    q = queries[0]
    gallery = [r for r in records if r.modality == gmod and not (qmod == gmod and r.sample_id == q.sample_id)]
    gallery.sort(key=lambda r: r.sample_id)
    if not gallery:
        raise UsageError("empty gallery")
    if args.topk > len(gallery):
        log.warning("--topk %d exceeds the gallery size %d", args.topk, len(gallery))
        print(f"warning: only {len(gallery)} gallery items", file=sys.stderr)
    order, scores = ranked_scores(q.vector, np.stack([g.vector for g in gallery]), [g.sample_id for g in gallery])
    print(f"query {q.sample_id} person {q.person_id} direction {args.direction}")
    for n, (i, s) in enumerate(zip(order[: args.topk], scores[: args.topk]), 1):
        g = gallery[i]
        mark = "match" if g.person_id == q.person_id else "miss"
        print(f"{n}\t{g.sample_id}\t{s:.6f}\t{mark}")


def cmd_project(args) -> None:
    records = [r for r in _records(args, (args.mode,)) if r.modality == args.mode]
    pids = {r.sample_id: r.person_id for r in records}
    rows = project_2d(records)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "person_id", "x", "y"])
        for sid, x, y in rows:
            w.writerow([sid, pids[sid], repr(x), repr(y)])
    print(f"wrote {len(rows)} points to {args.out}")


def cmd_roc(args) -> None:
    scores, labels = pair_scores(_records(args, modes_for(args.direction)), args.direction)
    pts = roc_points(scores, labels)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in pts:
            w.writerow([repr(f), repr(t), repr(th)])
    print(f"wrote {len(pts)} points to {args.out}")
    print(f"auc={auc(pts):.6f}")


# -- argument parsing -----------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _embedding_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", help="checkpoint prefix (or .idx/.bin path)")
    p.add_argument("--manifest", help="manifest.tsv of the dataset")
    p.add_argument("--split", default="test", help="split to embed (default: test)")
    p.add_argument("--embeddings", help="precomputed embedding store instead of checkpoint + manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vifireid", description="Vision + WiFi person re-identification pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    directions = sorted(DIRECTIONS)

    p = sub.add_parser("gen", help="generate a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--ids", type=int, default=20)
    p.add_argument("--per-id", type=int, default=69)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--occlusion", type=float, help="fraction of clips with a partial occluder")
    p.add_argument("--config", help="key = value file with gen.* generator keys")
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train and write a checkpoint plus metrics log")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint prefix")
    p.add_argument("--config", help="key = value config file with model.* and train.* keys")
    p.add_argument("--preset", choices=("tiny", "default"), default="tiny")
    p.add_argument("--epochs", type=int)
    p.add_argument("--log", help="metrics log path (default: <out>.log)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics for one direction")
    _embedding_source(p)
    p.add_argument("--direction", choices=directions, default="v2v")
    p.add_argument("--save-embeddings")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="top-k gallery matches for one query")
    _embedding_source(p)
    p.add_argument("--query-id", required=True)
    p.add_argument("--direction", choices=directions, default="v2v")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("project", help="2-D principal-component coordinates as CSV")
    _embedding_source(p)
    p.add_argument("--mode", choices=("vision", "wifi", "full"), default="full")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("roc", help="ROC curve of query-gallery scores as CSV")
    _embedding_source(p)
    p.add_argument("--direction", choices=directions, default="v2v")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_roc)
    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as e:
        # malformed or missing inputs surface as these from the library layers
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
