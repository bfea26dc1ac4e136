"""Command-line entry point.

    dipcert train --k 400 --n 10 --m 10 --out run/
    dipcert certify --network run/network_init.npz --operator run/operator.npz --target run/target.npy
    dipcert phase-heatmap --preset reduced --threads 4 --out results/phase
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .certificates import certify
from .errors import DivergenceError, InvalidInputError
from .harness import ExperimentConfig, preset, run_experiment
from .linalg import make_rng
from .losses import KLLoss
from .model import init_network, load_network, save_network
from .operators import (
    NoiseSpec,
    gaussian_operator,
    load_operator,
    make_noise,
    paper_spectrum,
    prescribed_spectrum_operator,
    save_operator,
)
from .trainer import AUTO_CERTIFIED, FIXED, TrainConfig, train


@dataclass
class ProblemConfig:
    """A single training problem: y = A x_true + eps, x_true ~ N(0, I)."""

    k: int = 200
    d: int = 20
    n: int = 10
    m: int = 10
    train_V: bool = False
    activation: str = "sigmoid"
    p: float = 0.0
    beta: float = 0.0
    operator: str = "gaussian"  # or "spectrum": singular values 1/(z^2 + 1)
    max_iters: int = 25000
    threshold: float = 1e-7
    step_mode: str = AUTO_CERTIFIED
    step_size: float | None = None
    safety: float = 0.9
    trace_stride: int = 100

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)


def build_problem(cfg: ProblemConfig, seed: int):
    rng = make_rng(seed, 0)
    if cfg.operator == "gaussian":
        op = gaussian_operator(cfg.m, cfg.n, rng)
    elif cfg.operator == "spectrum":
        if cfg.m != cfg.n:
            raise InvalidInputError("the spectrum operator is square: set m = n")
        op = prescribed_spectrum_operator(cfg.n, paper_spectrum(cfg.n), rng)
    else:
        raise InvalidInputError(f"unknown operator {cfg.operator!r}")
    x_true = rng.standard_normal(cfg.n)
    net = init_network(cfg.k, cfg.d, cfg.n, cfg.train_V, cfg.activation, make_rng(seed, 1))
    eps = make_noise(NoiseSpec(cfg.beta, cfg.m), make_rng(seed, 2))
    return net, op, x_true, eps


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc


def _problem_from_args(args):
    data = _load_json(args.config) if args.config else {}
    for f in fields(ProblemConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    return ProblemConfig.from_dict(data)


def _resolve_problem(args, cfg):
    net, op, x_true, eps = build_problem(cfg, args.seed)
    if args.network:
        net = load_network(args.network)
    if args.operator_file:
        op = load_operator(args.operator_file)
    if args.target:
        x_true = np.load(args.target, allow_pickle=False)
    if op.n != net.n or x_true.shape != (net.n,):
        raise InvalidInputError("network, operator and target dimensions disagree")
    if eps.shape != (op.m,):
        eps = make_noise(NoiseSpec(cfg.beta, op.m), make_rng(args.seed, 2))
    return net, op, x_true, eps


def cmd_train(args) -> int:
    cfg = _problem_from_args(args)
    net, op, x_true, eps = _resolve_problem(args, cfg)
    y_clean = op.apply(x_true)
    y_obs = y_clean + eps
    loss = KLLoss(cfg.p, y_obs)
    tcfg = TrainConfig(max_iters=cfg.max_iters, loss_threshold=cfg.threshold, step_mode=cfg.step_mode,
                       step_size=cfg.step_size, safety=cfg.safety, trace_stride=cfg.trace_stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(net, out / "network_init.npz")
    save_operator(op, out / "operator.npz")
    np.save(out / "target.npy", x_true)
    try:
        tr = train(net, op, y_obs, loss, tcfg, x_true=x_true, y_clean=y_clean)
    except DivergenceError as exc:
        tr = exc.trace
        print(f"diverged at iteration {tr.iterations}")
    tr.to_csv(out / "trace.csv")
    if tr.final_net is not None:
        save_network(tr.final_net, out / "network_final.npz")
    summary = {"converged": tr.converged, "iterations": tr.iterations, "final_loss": tr.final_loss,
               "step_size": tr.step_size, "L_hat": tr.L_hat}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_certify(args) -> int:
    cfg = _problem_from_args(args)
    net, op, x_true, eps = _resolve_problem(args, cfg)
    loss = KLLoss(cfg.p, op.apply(x_true) + eps)
    mu = None
    if op.m == op.n and op.rank == op.n:
        mu = op.sigma_min
    cert = certify(net, op, loss, args.variant, safety=cfg.safety, mu_F=mu)
    text = cert.report()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certificate.json").write_text(json.dumps(cert.as_dict(), indent=2, sort_keys=True) + "\n")
    return 0


_EXPERIMENT_OF = {
    "phase-heatmap": None,  # phase_kn unless the config says phase_km
    "noise-sweep": "noise_sweep",
    "noise-vs-k": "noise_vs_k",
    "p-sweep": "p_sweep",
}


def cmd_experiment(args) -> int:
    data = _load_json(args.config) if args.config else {}
    experiment = _EXPERIMENT_OF[args.command] or data.get("experiment", "phase_kn")
    if args.command == "phase-heatmap" and experiment not in ("phase_kn", "phase_km"):
        raise InvalidInputError("phase-heatmap runs phase_kn or phase_km")
    data["experiment"] = experiment
    overrides = {k: v for k, v in data.items() if k != "experiment"}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    if args.preset:
        cfg = preset(experiment, args.preset, **overrides)
    else:
        cfg = ExperimentConfig.from_dict({"experiment": experiment, **overrides})
    out = args.out or cfg.output_dir
    res = run_experiment(cfg, out=out, threads=args.threads)
    for name, path in sorted(res.files.items()):
        print(f"{name}: {path}")
    return 0


def _add_problem_flags(sp):
    sp.add_argument("--config", help="JSON file with problem fields")
    sp.add_argument("--seed", type=int, default=0)
    for name, typ in (("k", int), ("d", int), ("n", int), ("m", int), ("p", float), ("beta", float),
                      ("max_iters", int), ("threshold", float), ("step_size", float), ("safety", float),
                      ("trace_stride", int)):
        sp.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    sp.add_argument("--activation", choices=["sigmoid", "tanh", "softplus"])
    sp.add_argument("--operator", choices=["gaussian", "spectrum"])
    sp.add_argument("--step-mode", dest="step_mode", choices=[AUTO_CERTIFIED, FIXED])
    sp.add_argument("--train-V", dest="train_V", action="store_true", default=None)
    sp.add_argument("--network", help="initial network checkpoint (.npz)")
    sp.add_argument("--operator-file", help="operator checkpoint (.npz)")
    sp.add_argument("--target", help="ground-truth signal (.npy)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipcert", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train one network and write its trace")
    _add_problem_flags(sp)
    sp.add_argument("--out", default="run")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("certify", help="evaluate the certificate at initialization")
    _add_problem_flags(sp)
    sp.add_argument("--variant", choices=["discrete", "continuous"], default="discrete")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_certify)

    for name in _EXPERIMENT_OF:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="JSON file mirroring ExperimentConfig")
        sp.add_argument("--preset", choices=["paper", "reduced"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--max-iters", dest="max_iters", type=int)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out")
        sp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
