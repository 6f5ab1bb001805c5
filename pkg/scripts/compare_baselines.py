"""DEER against the deep-ensemble and MC-dropout baselines on synthetic data.

    python scripts/compare_baselines.py --seeds 5 --n-items 1000 --epochs 30
"""

import argparse

import numpy as np

from deer.baselines import ENSEMBLE_SIZE, MCDP_PASSES
from deer.data import GeneratorConfig, generate, split, to_arrays
from deer.experiment import default_config, evaluate, train_model

KINDS = ("deer", "ensemble", "mcdp")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-items", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--members", type=int, default=ENSEMBLE_SIZE)
    p.add_argument("--passes", type=int, default=MCDP_PASSES)
    args = p.parse_args(argv)

    print("seed\tsystem\tccc\trmse\tnll_avg\tnll_all")
    wins = 0
    for seed in range(args.seeds):
        items, _ = generate(GeneratorConfig(n_items=args.n_items, seed=100 + seed))
        train, _, test = (to_arrays(part) for part in split(items, (0.8, 0.1, 0.1), seed=100 + seed))
        nll = {}
        for kind in KINDS:
            nets, _ = train_model(kind, train, default_config(kind, epochs=args.epochs, seed=seed), members=args.members)
            summary, _ = evaluate(kind, nets, test, passes=args.passes, seed=seed)
            m = {k: np.mean([getattr(s, k) for s in summary.scores.values()])
                 for k in ("ccc", "rmse", "nll_avg", "nll_all")}
            nll[kind] = m["nll_all"]
            print(f"{seed}\t{kind}\t" + "\t".join(f"{m[k]:.4f}" for k in m))
        wins += nll["deer"] <= min(nll["ensemble"], nll["mcdp"])
    print(f"# deer has the lowest NLL(all) in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
