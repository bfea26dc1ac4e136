"""Final loss after a fixed budget against the width k for several noise levels.

    python scripts/run_noise_vs_k.py --scale reduced --threads 4 --out results/noise_vs_k
"""
import argparse

from dipcert.harness import preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--experiment", default="noise_vs_k")
    ap.add_argument("--scale", choices=["reduced", "paper"], default="reduced")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/noise_vs_k")
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
