"""Train one model on a synthetic city and print test metrics against the mean predictor.

    python3 demos/quick_forecast.py --model full --epochs 50
"""
import argparse

import numpy as np

from flowfuse.models import ModelConfig, stcgef_forward
from flowfuse.synth import SynthConfig, cross_platform_correlation, simulate
from flowfuse.training import TrainConfig, fit_and_evaluate, mean_predictor_baseline, prepare


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default="full")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--zones", type=int, default=20)
    args = ap.parse_args()

    cfg = SynthConfig(M=args.zones, seed=args.seed)
    trace = simulate(cfg)
    taxi, aux = trace.series()
    print(f"{cfg.M} zones, {cfg.D} days, {cfg.P} intervals/day, "
          f"taxi trips {trace.taxi.sum()}, aux trips {trace.aux.sum()}")
    print(f"deseasonalised cross-platform correlation {cross_platform_correlation(trace.taxi, trace.aux, cfg.P):.3f}")

    tc = TrainConfig(epochs=args.epochs, seed=args.seed)
    data = prepare(taxi, aux, 3, cfg.P, tc)
    model, res, rep = fit_and_evaluate(ModelConfig.for_model(args.model, M=cfg.M, P=cfg.P), tc, data)
    ref = mean_predictor_baseline(data.train, data.test, cfg.P)
    print(f"trained {len(res.loss_curve)} epochs, best at {res.best_epoch}")
    print(f"{rep.model:15s} MAE {rep.mae:8.3f}  MSE {rep.mse:9.3f}")
    print(f"{ref.model:15s} MAE {ref.mae:8.3f}  MSE {ref.mse:9.3f}")

    if args.model == "full":
        # one interval in raw counts, busiest zones first
        s = data.test[0]
        pred = stcgef_forward(model, s, data.transforms)
        truth = s.target.features
        top = np.argsort(-truth[0])[:5]
        print(f"\ninterval {s.target_index}, five busiest zones by inflow")
        for z in top:
            print(f"  zone {z:3d}  inflow {truth[0, z]:5.0f} pred {pred.inflow[z]:7.1f}"
                  f"   outflow {truth[1, z]:5.0f} pred {pred.outflow[z]:7.1f}")


if __name__ == "__main__":
    main()
