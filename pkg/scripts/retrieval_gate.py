"""Train one conqord policy and sweep the retrieval threshold on it.

    python scripts/retrieval_gate.py --config configs/acceptance.conf --seed 1
"""

import argparse

import torch

from confalign import experiment as ex
from confalign.retrieval import RetrievalOracle, best_row, sweep_thresholds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/acceptance.conf")
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    torch.set_num_threads(1)

    cfg = ex.load_config(args.config, args.overrides)
    env = ex.build_env(cfg)
    rm, _ = ex.train_rm(cfg, env)
    res = ex.run_seed(cfg, "conqord", rm.model, args.seed, env)
    rc = cfg.retrieval
    rows = sweep_thresholds(res.train.policy, env, RetrievalOracle(rc.help_prob_low, rc.noise_prob, rc.oracle_seed),
                            rc.grid, rc.n_episodes, seed=args.seed)
    print("threshold  retrieved  acc_self  acc_retrieved_before  acc_overall")
    for r in rows:
        print(f"{r.threshold:9.1f}  {r.n_retrieved:9d}  {r.acc_self_bucket:8.4f}  {r.acc_retrieved_before:20.4f}  {r.acc_overall:11.4f}")
    b = best_row(rows)
    print(f"best {b.threshold:.1f}: {b.acc_overall:.4f} vs always {b.acc_always_retrieve:.4f}, never {b.acc_never_retrieve:.4f}")


if __name__ == "__main__":
    main()
