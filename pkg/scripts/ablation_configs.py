"""Write the full-model config and its two ablations, and show how they differ.

    python3 scripts/ablation_configs.py --out configs/
    fundus2ffa train --data data/ --config configs/without_saliency.json --out-dir runs/nosal
"""

import argparse
from pathlib import Path

from fundus2ffa.config import ablation_configs, config_diff, dump_config, load_config
from fundus2ffa.networks import receptive_field


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="configs")
    ap.add_argument("--base", default=None, help="JSON config to ablate (default: built-in defaults)")
    args = ap.parse_args()

    abl = ablation_configs(load_config(args.base)) if args.base else ablation_configs()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, cfg in abl.items():
        (out / f"{name}.json").write_text(dump_config(cfg))
        print(f"{name:18s} receptive field {receptive_field(cfg.discriminator):4d}  "
              f"gamma {cfg.train.loss_weights.gamma}")
    for name in ("without_saliency", "without_patchgan"):
        print(f"\nproposed -> {name}")
        for key, (a, b) in config_diff(abl["proposed"], abl[name]).items():
            print(f"  {key}: {a} -> {b}")


if __name__ == "__main__":
    main()
