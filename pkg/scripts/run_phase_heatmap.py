"""Convergence-frequency heatmap over (k, n); pass --experiment phase_km for (k, m).

    python scripts/run_phase_heatmap.py --scale reduced --threads 4 --out results/phase_heatmap
"""
import argparse

from dipcert.harness import preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--experiment", default="phase_kn")
    ap.add_argument("--scale", choices=["reduced", "paper"], default="reduced")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/phase_heatmap")
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
