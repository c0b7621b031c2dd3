"""Searched vs sampled arrangements at equal evaluation budgets.

Trains the surrogate on the synthetic world once, then for each budget runs the
genetic search and random sampling on held-out 3x3 groups, reporting mean best
fitness, unique evaluations and wall time.

    python scripts/lcp_vs_brute.py --budgets 100 500 1500 --groups 30
"""

import argparse
import time

import numpy as np

from gridcollage.pipeline import ExperimentConfig, experiment_sim, label_world, make_world, to_dataset
from gridcollage.search import GaConfig, PredictorFitness, brute_force, lcp_optimize
from gridcollage.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budgets", type=int, nargs="+", default=[100, 500, 1500])
    ap.add_argument("--groups", type=int, default=30)
    ap.add_argument("--train-groups", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ExperimentConfig(train_groups=args.train_groups)
    world = make_world(cfg.world, cfg.train_groups, tag=0)
    _, records = label_world(world, experiment_sim(cfg.world.n, seed=cfg.world.seed), cfg.shuffles)
    params, _ = train(to_dataset(records, world.store), cfg.predictor, cfg.training)
    test = make_world(cfg.world, args.groups, tag=1)

    print(f"{'budget':>6}  {'method':<6}  {'fitness':>8}  {'evals':>6}  {'ms':>8}")
    for budget in args.budgets:
        stats = {"lcp": [], "brute": []}
        for g in range(args.groups):
            ids = [e[0] for e in test.group(g)]
            fit = PredictorFitness(params, ids, test.store)
            ga = GaConfig.for_grid(3, seed=args.seed * 1000 + g, saturation=None,
                               max_generations=10 ** 6, max_evaluations=budget)
            for name, run in (("lcp", lambda: lcp_optimize(ids, None, fit, ga)),
                              ("brute", lambda: brute_force(ids, None, fit, budget, rng=args.seed * 1000 + g))):
                t0 = time.perf_counter()
                _, trace = run()
                stats[name].append((trace.best_fitness[-1], trace.evaluations, 1000 * (time.perf_counter() - t0)))
        for name, rows in stats.items():
            f, e, ms = np.mean(rows, axis=0)
            print(f"{budget:>6}  {name:<6}  {f:8.4f}  {e:6.0f}  {ms:8.1f}")


if __name__ == "__main__":
    main()
