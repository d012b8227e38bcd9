#!/usr/bin/env python3
"""Finite-difference gradient check of the full training loss.

Builds a small two-stage hybrid network in float64 and compares every
parameter's backward gradient against central differences on a seeded
batch, at top-1 and top-2 routing. Mirrors acceptance gate 1.
"""

import argparse

from gazemoe.config import ModelConfig, TrainConfig
from gazemoe.train import run_gradcheck


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tol", type=float, default=1e-4)
    ap.add_argument("--coords", type=int, default=3,
                    help="coordinates probed per parameter")
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    ok = True
    for k in (1, 2):
        model = ModelConfig(
            stem_channels=4, stage_channels=(4, 8), blocks_per_stage=(1, 1),
            stage_strides=(1, 2), hybrid_positions=((1, 0),), num_experts=2,
            top_k=k, gaze_encoder_channels=(4, 8), gaze_feature_width=8,
            num_classes=3, seed=args.seed,
        )
        cfg = TrainConfig(model=model, lb_weight=0.01, seed=args.seed)
        report = run_gradcheck(cfg, max_coords_per_param=args.coords,
                               tol=args.tol)
        print(f"top-{k}: {report}")
        ok &= report.passed
    return 0 if ok else 2


if __name__ == "__main__":
    raise SystemExit(main())
