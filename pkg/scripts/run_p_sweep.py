"""Iterations to threshold for the loss exponents p.

    python scripts/run_p_sweep.py --scale reduced --threads 4 --out results/p_sweep
"""
import argparse

from dipcert.harness import preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--experiment", default="p_sweep")
    ap.add_argument("--scale", choices=["reduced", "paper"], default="reduced")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/p_sweep")
    args = ap.parse_args()
    overrides = {"base_seed": args.seed}
    if args.trials:
        overrides["trials"] = args.trials
    cfg = preset(args.experiment, args.scale, **overrides)
    res = run_experiment(cfg, out=args.out, threads=args.threads)
    for key, path in sorted(res.files.items()):
        print(f"{key}: {path}")


if __name__ == "__main__":
    main()
