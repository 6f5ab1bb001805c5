"""Loss-variant grid on synthetic data: full loss, averaged-label NLL and no
variance regulariser, over several seeds.

    python scripts/run_ablation.py --seeds 5 --n-items 2000 --epochs 40 --out ablation.tsv
"""

import argparse
import sys

import numpy as np

from deer.data import GeneratorConfig, generate, split, to_arrays
from deer.experiment import evaluate, train_model
from deer.net import TrainConfig

VARIANTS = {
    "full": {},
    "avg_nll": {"avg_nll": True},
    "no_reg_sigma": {"use_reg_sigma": False},
    "detach_phi": {"detach_phi": True},
}
KEYS = ("ccc", "rmse", "nll_avg", "nll_all", "aleatoric_gap")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-items", type=int, default=2000)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--out", help="per-run TSV (default stdout)")
    args = p.parse_args(argv)

    names = args.variants.split(",")
    rows = []
    for seed in range(args.seeds):
        items, _ = generate(GeneratorConfig(n_items=args.n_items, d=args.d, seed=seed))
        train, _, test = (to_arrays(part) for part in split(items, (0.8, 0.1, 0.1), seed=seed))
        for name in names:
            cfg = TrainConfig(epochs=args.epochs, seed=seed, **VARIANTS[name])
            nets, _ = train_model("deer", train, cfg)
            summary, _ = evaluate("deer", nets, test)
            for attr, s in summary.scores.items():
                vals = {"ccc": s.ccc, "rmse": s.rmse, "nll_avg": s.nll_avg, "nll_all": s.nll_all, **s.extra}
                rows.append((seed, name, attr, *(vals[k] for k in KEYS)))
            print(f"seed {seed} {name} done", file=sys.stderr)

    lines = ["\t".join(("seed", "variant", "attribute", *KEYS))]
    lines += ["\t".join(str(v) for v in r) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)

    print("\nmean over seeds and attributes", file=sys.stderr)
    print("variant\t" + "\t".join(KEYS), file=sys.stderr)
    for name in names:
        sel = np.array([r[3:] for r in rows if r[1] == name], dtype=float)
        print(name + "\t" + "\t".join(f"{m:.4f}" for m in sel.mean(axis=0)), file=sys.stderr)


if __name__ == "__main__":
    main()
