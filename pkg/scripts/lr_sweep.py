"""Sweep the SGD learning rate of the PPO baseline on one environment family.

    python scripts/lr_sweep.py cartpole --lrs 0.1 0.3 1.0 3.0 --seeds 4
    python scripts/lr_sweep.py grid_id --lrs 0.3 1.0 3.0 --seeds 4 --config configs/grid_baseline.yaml
"""

import argparse

import numpy as np

from metarl.config import load_config
from metarl.envs import EnvDistribution, sample_env
from metarl.learnedalgos import DriftFunction, UpdateRule
from metarl.numcore import RngStream
from metarl.rltrain import PpoConfig, train_agent


def main():
    p = argparse.ArgumentParser()
    p.add_argument("env", choices=["cartpole", "grid_id", "grid_ood"])
    p.add_argument("--lrs", type=float, nargs="+", required=True)
    p.add_argument("--seeds", type=int, default=4)
    p.add_argument("--instances", type=int, default=4)
    p.add_argument("--config", help="take the PPO section from this run config")
    args = p.parse_args()
    ppo = load_config(args.config).ppo if args.config else PpoConfig()
    dist = EnvDistribution.from_dict({"kind": args.env})
    n_inst = 1 if args.env == "cartpole" else args.instances
    envs = [sample_env(dist, RngStream(1234).child("sweep", k).generator()) for k in range(n_inst)]
    for lr in args.lrs:
        rets = np.array([[train_agent(ppo, env, DriftFunction.ppo(ppo.clip_eps), UpdateRule.sgd(lr), s).final_return
                          for s in range(args.seeds)] for env in envs])
        print(f"lr {lr:g}: per-env mean {np.round(rets.mean(axis=1), 3).tolist()} overall {rets.mean():.3f}")


if __name__ == "__main__":
    main()
