"""Train every method on the builtin KBs over several seeds and print mean
accuracy next to the rank verdict and the Bayes rate."""

import argparse
import json

import numpy as np

from abl_rank.diagnostics import recovery_experiment
from abl_rank.kb import builtin_kb
from abl_rank.learner import METHODS, TrainConfig

KBS = {
    "conj_eq": lambda: builtin_kb("conj_eq"),
    "conjunction": lambda: builtin_kb("conjunction"),
    "conj0": lambda: builtin_kb("conjunction").select(["conj0"]),
    "addition10": lambda: builtin_kb("addition", 10),
    "hed2": lambda: builtin_kb("hed", 2),
    "hed10": lambda: builtin_kb("hed", 10),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kbs", default=",".join(KBS))
    ap.add_argument("--methods", default=",".join(METHODS))
    ap.add_argument("--seeds", type=int, default=6)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--n-train", type=int, default=10000)
    ap.add_argument("--n-test", type=int, default=10000)
    ap.add_argument("--jsonl", help="also write every run report here")
    args = ap.parse_args()

    sink = open(args.jsonl, "w", encoding="utf-8") if args.jsonl else None
    for name in args.kbs.split(","):
        kb = KBS[name]()
        for method in args.methods.split(","):
            acc, perm, bayes = [], [], []
            for seed in range(args.seeds):
                cfg = TrainConfig(method=method, epochs=args.epochs)
                res = recovery_experiment(kb, None, cfg, args.n_train, args.n_test, seed)
                acc.append(res.train.final_accuracy)
                perm.append(res.train.perm_max_accuracy)
                bayes.append(res.bayes_accuracy)
                if sink:
                    sink.write(json.dumps({"kb": name, **res.to_json(timing=False)}) + "\n")
            print(
                f"{name:>12} {method:>5} rank {res.diagnosis.rank}/{res.diagnosis.classes}"
                f"  acc {np.mean(acc):.4f} +- {np.std(acc) / np.sqrt(len(acc)):.4f}"
                f"  perm-max {np.mean(perm):.4f}  bayes {np.mean(bayes):.4f}",
                flush=True,
            )
    if sink:
        sink.close()


if __name__ == "__main__":
    main()
