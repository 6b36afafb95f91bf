"""Alpha sweep with a one-screen summary of the calibration trend.

    python scripts/alpha_sweep.py --config configs/acceptance.conf --out runs/sweep
"""

import argparse

import torch

from confalign import experiment as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/acceptance.conf")
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--grid", default="0,0.2,0.4,0.6,0.8,1.0")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    torch.set_num_threads(1)
    print(ex.BANNER)

    cfg = ex.load_config(args.config, args.overrides)
    rm, _ = ex.train_rm(cfg)
    print(f"reward model held-out accuracy {rm.heldout_accuracy:.3f}")
    records = ex.sweep_alpha(cfg, [float(a) for a in args.grid.split(",")], rm.model, args.out)
    alphas = list(records)
    eces = [records[a].aggregate["ece"]["mean"] for a in alphas]
    for a, rec in records.items():
        agg = rec.aggregate
        print(f"alpha={a:.1f}  ece={agg['ece']['mean']:.4f}±{agg['ece']['std']:.4f}"
              f"  accuracy={agg['accuracy']['mean']:.4f}±{agg['accuracy']['std']:.4f}")
    if 0.0 in records and 0.4 in records:
        print(f"relative ECE drop at 0.4: {ex.relative_drop(records[0.0].aggregate['ece']['mean'], records[0.4].aggregate['ece']['mean']):.3f}")
    print(f"Spearman(alpha, ECE) = {ex.spearman_trend(alphas, eces):.2f}")


if __name__ == "__main__":
    main()
