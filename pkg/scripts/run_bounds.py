"""Monte-Carlo check of the risk upper bound on every builtin KB and a batch
of random KBs; prints one summary line per KB."""

import argparse

from abl_rank.diagnostics import verify_bound
from abl_rank.kb import builtin_kb, random_kb


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--random-kbs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    kbs = [builtin_kb("conj_eq"), builtin_kb("conjunction"), builtin_kb("addition", 10), builtin_kb("hed", 2)]
    kbs += [random_kb("dnf" if i % 2 else "cnf", 3 + i % 3, args.seed + i) for i in range(args.random_kbs)]
    total = 0
    for kb in kbs:
        res = verify_bound(kb, None, args.n, args.trials, args.seed)
        slack = min(r["slack"] for r in res.records)
        total += res.violations
        print(f"{kb.name:>20} {res.bound:<15}  C={res.constant:.4f}  min slack={slack:+.4f}  violations={res.violations}")
    print(f"total violations: {total}")
    return 0 if total == 0 else 2


if __name__ == "__main__":
    raise SystemExit(main())
