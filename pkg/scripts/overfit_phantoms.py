"""Overfit a tiny generator on a handful of phantom pairs.

    python3 scripts/overfit_phantoms.py --pairs 4 --size 64 --epochs 100 --out runs/overfit
"""

import argparse
import time

import numpy as np
import torch

from fundus2ffa import data_pipeline as dp
from fundus2ffa.image_core import write_png
from fundus2ffa.losses import LossWeights
from fundus2ffa.metrics import psnr, ssim
from fundus2ffa.networks import DiscriminatorConfig, FeatureExtractorConfig, GeneratorConfig
from fundus2ffa.trainer import TrainConfig, Trainer, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--pairs", type=int, default=4)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--base-width", type=int, default=8)
    ap.add_argument("--blocks", type=int, default=3)
    ap.add_argument("--gamma", type=float, default=1.0, help="saliency weight (0 disables)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="run directory for logs, checkpoints and samples")
    args = ap.parse_args()

    torch.set_num_threads(1)
    pairs = dp.synth_phantom_pairs(args.pairs, args.size, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, decay_start_epoch=args.epochs // 2, seed=args.seed,
                      loss_weights=LossWeights(gamma=args.gamma))
    tr = Trainer(cfg, GeneratorConfig(base_width=args.base_width, n_residual_blocks=args.blocks),
                 DiscriminatorConfig(), FeatureExtractorConfig())
    t0 = time.perf_counter()
    log = fit(tr, pairs, out_dir=args.out)
    pix = [r.pixel for _, r in log.losses]
    print(f"{len(log.losses)} steps in {time.perf_counter() - t0:.1f}s")
    print(f"L_pixel first-10 mean {np.mean(pix[:10]):.4f}  last-10 mean {np.mean(pix[-10:]):.4f}")
    for p in pairs:
        pred = tr.translate(p.structure)
        print(f"{p.id}: PSNR {psnr(pred, p.angiography):.2f} dB  SSIM {ssim(pred, p.angiography):.4f}")
        if args.out:
            write_png(f"{args.out}/{p.id}_pred.png", pred)


if __name__ == "__main__":
    main()
