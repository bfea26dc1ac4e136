"""Build a problem on which the initialization gate holds, print its
certificate, train it, and compare the loss with the certified curve."""
import argparse

import numpy as np

from dipcert.certificates import build_gate_instance, loss_rate_curve
from dipcert.linalg import make_rng
from dipcert.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=2000)
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--m", type=int, default=4)
    ap.add_argument("--d", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise-fraction", type=float, default=0.0)
    args = ap.parse_args()

    gi = build_gate_instance(args.k, args.n, args.m, args.d, make_rng(args.seed, 0),
                             noise_fraction=args.noise_fraction)
    print(gi.cert.report(), end="")
    tr = train(gi.net, gi.op, gi.y_obs, gi.loss, TrainConfig(trace_stride=10), y_clean=gi.y_clean)
    L = tr.loss_history
    bound = loss_rate_curve("discrete", gi.cert.desingularizer, gi.cert.sigma_F, gi.cert.sigma0,
                            L[0], np.arange(L.size), rate_base=gi.cert.rate_base)
    print(f"{'iter':>6} {'loss':>12} {'certified':>12}")
    for t in range(0, L.size, max(1, L.size // 10)):
        print(f"{t:6d} {L[t]:12.4e} {bound[t]:12.4e}")
    print(f"converged={tr.converged} after {tr.iterations} iterations")


if __name__ == "__main__":
    main()
