"""Negative/positive reconstruction-error ratio with and without the BCE head.

Both variants share data, initial weights and seed; only phase 1 differs.

    python scripts/linsep_compare.py --seeds 0 1 2 3 4 5 6 7 8 9
"""

from __future__ import annotations

import argparse
import logging

from lisae.datasets import synth_two_gaussians
from lisae.neural import build_model
from lisae.training import TrainConfig, mean_recon, train_phase1, train_phase2


def ratio(seed: int, linsep: bool, args) -> float:
    pos, neg = synth_two_gaussians(args.n, seed=seed, separation=args.separation)
    cfg = TrainConfig(beta=args.beta, gamma=args.gamma, gamma_relative=True, learning_rate=args.lr,
                      epochs_phase1=args.epochs1, epochs_phase2=args.epochs2, batch_size=32, seed=seed,
                      linsep=linsep)
    model = build_model(pos.dim, 2, (12, 8), seed=seed)
    train_phase1(model, pos, neg if linsep else None, cfg)
    train_phase2(model, pos, neg, cfg)
    return mean_recon(model, neg.samples) / mean_recon(model, pos.samples)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--separation", type=float, default=0.3)
    ap.add_argument("--beta", type=float, default=5.0)
    ap.add_argument("--gamma", type=float, default=3.0, help="multiple of phase-1 negative error")
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--epochs1", type=int, default=60)
    ap.add_argument("--epochs2", type=int, default=60)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    wins = 0
    print(f"{'seed':>4} {'plain':>8} {'linsep':>8}")
    for seed in args.seeds:
        plain, lin = ratio(seed, False, args), ratio(seed, True, args)
        wins += lin >= plain
        print(f"{seed:>4} {plain:>8.3f} {lin:>8.3f}")
    print(f"linsep >= plain on {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
