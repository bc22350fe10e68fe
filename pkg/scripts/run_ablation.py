"""Loss ablation on a synthetic occluded-vision world.

Trains baseline (LMCL + SoftTriple), +VWC (adds the cross-modal contrastive
term) and +VWC+VWD (adds the hard-negative distance term) for each seed and
prints test mAP for every retrieval direction.

    python3 scripts/run_ablation.py --out /tmp/ablation --seeds 0 1 2
"""

import argparse
import time
from dataclasses import replace

from vifireid import dataset as ds
from vifireid.csi_encoder import csi_tokens
from vifireid.fusion import ModelConfig
from vifireid.objectives import ContrastiveConfig, LossWeights, ObjectiveConfig
from vifireid.trainer import TrainConfig, evaluate, train



def variants(dis_weight):
    return {
        "baseline": LossWeights(1, 1, 0, 0),
        "+vwc": LossWeights(1, 1, 1, 0),
        "+vwc+vwd": LossWeights(1, 1, 1, dis_weight),
    }

DIRECTIONS = ("v2v", "w2w", "f2f", "w2v", "v2w")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, help="dataset directory")
    ap.add_argument("--ids", type=int, default=10)
    ap.add_argument("--per-id", type=int, default=20)
    ap.add_argument("--noise", type=float, default=2.0)
    ap.add_argument("--occlusion", type=float, default=0.4)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--fusion-dropout", type=float, default=0.0)
    ap.add_argument("--margin", type=float, default=1.4, help="hard-negative distance margin")
    ap.add_argument("--dis-weight", type=float, default=1.0)
    ap.add_argument("--variants", nargs="+", help="subset of baseline, +vwc, +vwc+vwd")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    gen = ds.GeneratorConfig(occlusion_rate=args.occlusion, occlusion_extent=0.5)
    manifest = ds.generate_dataset(args.out, seed=1, n_ids=args.ids, seqs_per_id=args.per_id,
                                   noise_level=args.noise, cfg=gen)
    base_model = ModelConfig.tiny()
    data = {s: ds.load_arrays(manifest, s, lambda u: csi_tokens(u, base_model.wifi)) for s in ("train", "test")}
    e = args.epochs
    print("seed\tvariant\t" + "\t".join(DIRECTIONS) + "\tseconds")
    for seed in args.seeds:
        model_cfg = ModelConfig.tiny(seed=seed)
        model_cfg = replace(model_cfg, fusion=replace(model_cfg.fusion, dropout=args.fusion_dropout))
        for name, weights in variants(args.dis_weight).items():
            if args.variants and name not in args.variants:
                continue
            cfg = TrainConfig(epochs=e, warmup_epochs=max(1, e // 12), lr_start=0.035 * args.lr, lr_peak=args.lr,
                              decay_epochs=(e // 3, 3 * e // 4), seed=seed, eval_every=e,
                              eval_direction="w2v", objective=ObjectiveConfig(weights=weights,
                                                        contrastive=ContrastiveConfig(margin=args.margin)))
            t = time.perf_counter()
            model = train(model_cfg, cfg, data["train"]).state.model
            maps = [evaluate(model, data["test"], d).metrics["mAP"] for d in DIRECTIONS]
            print(f"{seed}\t{name}\t" + "\t".join(f"{m:.4f}" for m in maps) + f"\t{time.perf_counter() - t:.0f}",
                  flush=True)


if __name__ == "__main__":
    main()
