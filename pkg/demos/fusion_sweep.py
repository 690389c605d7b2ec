"""How much does the auxiliary platform help as the two platforms decouple?

Sweeps the latent correlation rho and compares full vs no_fusion test MAE.
Slow-ish: two models per (rho, seed).

    python3 demos/fusion_sweep.py --rhos 0 0.5 0.9 --seeds 0 1 --epochs 100
"""
import argparse

import numpy as np

from flowfuse.models import ModelConfig
from flowfuse.synth import SynthConfig, simulate
from flowfuse.training import TrainConfig, fit_and_evaluate, prepare


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.0, 0.5, 0.9])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--epochs", type=int, default=100)
    args = ap.parse_args()

    print(f"{'rho':>5} {'full':>9} {'no_fusion':>10} {'gain':>7}")
    for rho in args.rhos:
        maes = {"full": [], "no_fusion": []}
        for seed in args.seeds:
            cfg = SynthConfig(rho=rho, seed=seed)
            taxi, aux = simulate(cfg).series()
            tc = TrainConfig(epochs=args.epochs, seed=seed)
            data = prepare(taxi, aux, 3, cfg.P, tc)
            for name in maes:
                _, _, rep = fit_and_evaluate(ModelConfig.for_model(name, M=cfg.M, P=cfg.P), tc, data)
                maes[name].append(rep.mae)
        f, n = np.mean(maes["full"]), np.mean(maes["no_fusion"])
        print(f"{rho:5.2f} {f:9.3f} {n:10.3f} {n - f:7.3f}", flush=True)


if __name__ == "__main__":
    main()
