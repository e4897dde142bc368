"""Desk-scale training run on bi-objective Euclidean TSP with n=10 cities.

Trains one model per seed (20,000 leaf instances per epoch, batch 200, Adam
lr 1e-4 by default) and reports, after every epoch, on 20 held-out instances:

* mean greedy scalarized cost per weight vector of a 10-point sweep, as a
  gain over the mean of 1,000 random tours;
* HV(model front) / HV(exact front), both under their shared reference point;
* average number of points on the model fronts.

Results go to stdout and, with ``--out``, to a JSON file.

    python3 scripts/desk_experiment.py --seeds 0 1 2 --epochs 5
"""

import argparse
import json
import time

import numpy as np

from mopn.actor import ActorModel, greedy_tours
from mopn.instances import generate_random_rins, leaf_matrix, scalarized_cost, tour_objective
from mopn.pareto import brute_force_front, hv, random_tour_objectives, reference_point, solve_front
from mopn.trainer import TrainConfig, train
from mopn.weights import default_weight_set, simplex_lattice


def evaluate(actor, insts, truths, sweep, rand_cost):
    x = np.stack([leaf_matrix(r.kind, r.features, w) for r in insts for w in sweep])
    tours = greedy_tours(actor, x).reshape(len(insts), len(sweep), -1)
    cost = np.array([[scalarized_cost(tour_objective(r, tours[i, j]), w) for j, w in enumerate(sweep)]
                     for i, r in enumerate(insts)])
    gains = 1 - cost.mean(axis=0) / rand_cost.mean(axis=0)
    ratios, sizes = [], []
    for r, truth in zip(insts, truths):
        front = solve_front(actor, r, default_weight_set(2))
        ref = reference_point([front, truth])
        h_truth = hv(truth, ref)
        ratios.append(hv(front, ref) / h_truth if h_truth > 0 else 1.0)  # degenerate: one-point truth
        sizes.append(len(front))
    return {"gains": gains.tolist(), "hv_ratio": float(np.mean(ratios)), "front_size": float(np.mean(sizes))}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--dataset-size", type=int, default=20000)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--out")
    args = ap.parse_args()

    insts = [generate_random_rins("T1O2", args.n, [6, k]) for k in range(20)]
    truths = [brute_force_front(r) for r in insts]
    sweep = simplex_lattice(2, 9).vectors
    rng = np.random.default_rng(6)
    rand_cost = np.array([random_tour_objectives(r, 1000, rng).mean(axis=0) for r in insts]) @ sweep.T

    results = {}
    for seed in args.seeds:
        cfg = TrainConfig(kind="T1O2", n=args.n, epochs=args.epochs, dataset_size=args.dataset_size,
                          lr=args.lr, seed=seed)
        history = []
        holder = {}

        def on_epoch(rec, holder=holder, history=history):
            ev = evaluate(holder["actor"], insts, truths, sweep, rand_cost)
            history.append({**rec, **ev})
            g = np.array(ev["gains"])
            print(f"seed {seed} epoch {rec['epoch']}: train cost {rec['mean_cost']:.3f}, "
                  f"HV ratio {ev['hv_ratio']:.3f}, front size {ev['front_size']:.1f}, "
                  f"gain min {g.min():.3f} max {g.max():.3f}", flush=True)

        holder["actor"] = ActorModel.for_kind("T1O2", cfg.l, seed=np.random.default_rng([seed, 0xAC7]))
        t0 = time.perf_counter()
        train(cfg, actor=holder["actor"], on_epoch=on_epoch)
        results[seed] = {"history": history, "seconds": time.perf_counter() - t0}

    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
