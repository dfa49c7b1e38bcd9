"""Planted-expression recovery rate of symbolic distillation over several seeds.

    python scripts/symbolic_recovery.py "(1 - r) * A" --seeds 0 1 2 3 4
"""

import argparse

import numpy as np

from metarl.metadistill import SymDistillConfig, SyntheticInputSpec, distill_symbolic, expr_teacher
from metarl.metadistill import generate_synthetic_inputs
from metarl.symdsl import DRIFT_SIGNATURE, eval_expr, parse, print_expr


def main():
    p = argparse.ArgumentParser()
    p.add_argument("expr")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--rounds", type=int, default=40)
    p.add_argument("--migration-prob", type=float, default=SymDistillConfig.migration_prob)
    args = p.parse_args()
    teacher = expr_teacher(parse(args.expr, DRIFT_SIGNATURE))
    spec = SyntheticInputSpec("drift")
    fresh = generate_synthetic_inputs(spec, 20_000, 12345)
    target = teacher(fresh)
    cfg = SymDistillConfig(rounds=args.rounds, migration_prob=args.migration_prob)
    for seed in args.seeds:
        res = distill_symbolic(teacher, spec, cfg, DRIFT_SIGNATURE, seed)
        mse = float(np.mean((np.broadcast_to(eval_expr(res.best, fresh.bindings), target.shape) - target) ** 2))
        print(f"seed {seed}: {print_expr(res.best)}  test MSE {mse:.3g}")


if __name__ == "__main__":
    main()
