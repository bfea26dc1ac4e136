"""Experiment harness: phase-transition heatmaps, noise sweeps and the p sweep.

Every trial draws from its own Philox stream keyed by the experiment, its
grid coordinates and the trial index, so results do not depend on the order
or the process in which trials run. Records are sorted by grid coordinates
before anything is written.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .certificates import RecoveryBoundInputs, certify, recovery_bound
from .errors import BoundaryUndefinedError, DivergenceError, InvalidInputError
from .linalg import make_rng
from .losses import KLLoss
from .model import init_network
from .operators import (
    expected_noise_floor,
    gaussian_operator,
    make_noise,
    NoiseSpec,
    paper_spectrum,
    prescribed_spectrum_operator,
)
from .trainer import FIXED, TrainConfig, certified_step, local_step, train

EXPERIMENTS = ("phase_kn", "phase_km", "noise_sweep", "noise_vs_k", "p_sweep")
_STREAM_CODE = {name: i + 1 for i, name in enumerate(EXPERIMENTS)}


@dataclass
class ExperimentConfig:
    experiment: str
    k: list = field(default_factory=lambda: [100])
    n: list = field(default_factory=lambda: [10])
    m: list = field(default_factory=lambda: [10])
    d: list = field(default_factory=lambda: [100])
    p: list = field(default_factory=lambda: [0.0])
    beta: list = field(default_factory=lambda: [0.0])
    trials: int = 50
    max_iters: int = 25000
    threshold: float = 1e-7
    base_seed: int = 0
    output_dir: str = "results"
    activation: str = "sigmoid"
    step_rule: str = "local"
    safety: float = 0.9
    trace_stride: int = 100

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidInputError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("k", "n", "m", "d", "p", "beta"):
            vals = list(getattr(self, name))
            if not vals:
                raise InvalidInputError(f"range {name!r} is empty")
            setattr(self, name, vals)
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if self.max_iters < 0 or self.trace_stride < 1:
            raise InvalidInputError("max_iters must be >= 0 and trace_stride >= 1")
        if self.step_rule not in ("local", "certified"):
            raise InvalidInputError("step_rule must be 'local' or 'certified'")
        if self.experiment == "noise_sweep" and self.n != self.m:
            raise InvalidInputError("the noise sweep needs n = m (square operator)")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def _preset_table():
    return {
        ("phase_kn", "paper"): dict(k=[20, 50, 100, 200, 300, 400, 500, 600, 800, 1000],
                                    n=[10, 20, 40, 60, 80, 100, 150, 200], m=[10], d=[500],
                                    trials=50, max_iters=25000),
        ("phase_kn", "reduced"): dict(k=[20, 50, 100, 200, 400], n=[5, 10, 20, 40], m=[10], d=[100],
                                      trials=10, max_iters=25000),
        ("phase_km", "paper"): dict(k=[20, 50, 100, 200, 300, 400, 500, 600, 800, 1000], n=[60],
                                    m=[5, 10, 15, 20, 30, 40, 50], d=[500], trials=50, max_iters=25000),
        ("phase_km", "reduced"): dict(k=[20, 50, 100, 200, 400], n=[30], m=[5, 10, 20], d=[100],
                                      trials=10, max_iters=25000),
        ("noise_sweep", "paper"): dict(k=[1000], n=[10], m=[10], d=[10], p=[0.2],
                                       beta=[0.0, 0.05, 0.1, 0.2], trials=50, max_iters=200000,
                                       threshold=0.0),
        ("noise_sweep", "reduced"): dict(k=[1000], n=[10], m=[10], d=[10], p=[0.2],
                                         beta=[0.0, 0.05, 0.1], trials=10, max_iters=50000,
                                         threshold=0.0),
        ("noise_vs_k", "paper"): dict(k=[50, 100, 200, 400, 800, 1600], n=[1000], m=[10], d=[10],
                                      p=[0.1], beta=[0.0, 0.05, 0.1], trials=50, max_iters=25000,
                                      threshold=0.0),
        ("noise_vs_k", "reduced"): dict(k=[50, 100, 200, 400, 800], n=[100], m=[10], d=[10],
                                        p=[0.1], beta=[0.0, 0.05, 0.1], trials=10, max_iters=5000,
                                        threshold=0.0),
        ("p_sweep", "paper"): dict(k=[800], n=[1000], m=[10], d=[10], p=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                                   trials=50, max_iters=1000000, threshold=1e-14),
        ("p_sweep", "reduced"): dict(k=[800], n=[100], m=[10], d=[10], p=[0.0, 0.3, 0.6, 1.0],
                                     trials=10, max_iters=200000, threshold=1e-7),
    }


def preset(experiment: str, scale: str = "reduced", **overrides) -> ExperimentConfig:
    try:
        base = _preset_table()[(experiment, scale)]
    except KeyError:
        raise InvalidInputError(f"no preset {scale!r} for experiment {experiment!r}") from None
    return ExperimentConfig(experiment=experiment, **{**base, **overrides})


@dataclass
class RunRecord:
    experiment: str
    k: int
    n: int
    m: int
    d: int
    p: float
    beta: float
    trial: int
    seed: int
    converged: bool
    final_loss: float
    iterations: int
    final_signal_error: float
    step_size: float = math.nan
    eps_norm: float = math.nan
    recovery_bound: float = math.nan
    wall_time: float = math.nan

    @property
    def key(self):
        return (self.experiment, self.k, self.n, self.m, self.d, self.p, self.beta, self.trial)


# wall_time is measured but never written, so reruns are byte-identical
CSV_COLUMNS = tuple(f.name for f in fields(RunRecord) if f.name != "wall_time")
_INT_COLS = {"k", "n", "m", "d", "trial", "seed", "iterations"}
_FLOAT_COLS = {"p", "beta", "final_loss", "final_signal_error", "step_size", "eps_norm", "recovery_bound"}


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_csv(records, path) -> Path:
    """One row per run, columns ``CSV_COLUMNS``; floats are written with repr."""
    recs = sorted(records, key=lambda r: r.key)
    return write_rows(path, CSV_COLUMNS, ([getattr(r, c) for c in CSV_COLUMNS] for r in recs))


def load_csv(path) -> list:
    out = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with fh:
        for row in csv.DictReader(fh):
            kw = {}
            for c in CSV_COLUMNS:
                v = row[c]
                if c in _INT_COLS:
                    kw[c] = int(v)
                elif c in _FLOAT_COLS:
                    kw[c] = float(v)
                elif c == "converged":
                    kw[c] = v == "1"
                else:
                    kw[c] = v
            out.append(RunRecord(**kw))
    return out


# ---------------------------------------------------------------- trials


@dataclass(frozen=True)
class TrialTask:
    experiment: str
    k: int
    n: int
    m: int
    d: int
    p: float
    beta: float
    trial: int
    stream: tuple
    seed: int
    max_iters: int
    threshold: float
    activation: str
    step_rule: str
    safety: float
    trace_stride: int


def _noise_sweep_problem(seed, n):
    """Operator and ground truth shared by every run of a noise sweep."""
    rng = make_rng(seed, _STREAM_CODE["noise_sweep"], 0)
    op = prescribed_spectrum_operator(n, paper_spectrum(n), rng)
    x_true = rng.standard_normal(n)
    return op, x_true


def _run_trial(task: TrialTask):
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        if task.experiment == "noise_sweep":
            op, x_true = _noise_sweep_problem(task.seed, task.n)
            net = init_network(task.k, task.d, task.n, False, task.activation,
                               make_rng(task.seed, _STREAM_CODE["noise_sweep"], 1, task.trial))
            eps = make_noise(NoiseSpec(task.beta, task.m), make_rng(task.seed, *task.stream, 2))
        else:
            rng = make_rng(task.seed, *task.stream)
            op = gaussian_operator(task.m, task.n, rng)
            x_true = rng.standard_normal(task.n)
            net = init_network(task.k, task.d, task.n, False, task.activation, rng)
            eps = make_noise(NoiseSpec(task.beta, task.m), rng)
        y_clean = op.apply(x_true)
        y_obs = y_clean + eps
        loss = KLLoss(task.p, y_obs)
        if task.step_rule == "local":
            gamma = local_step(net, op, loss, task.safety)
        else:
            gamma, _ = certified_step(net, op, loss, task.safety)
        cfg = TrainConfig(
            max_iters=task.max_iters, loss_threshold=task.threshold, step_mode=FIXED,
            step_size=gamma, trace_stride=task.trace_stride, record_sigma_min=False,
            record_theta_drift=False, record_obs_error=False,
        )
        try:
            tr = train(net, op, y_obs, loss, cfg, x_true=x_true)
            final_loss, iters, converged = tr.final_loss, tr.iterations, tr.converged
            sig_err = float(np.linalg.norm(tr.final_x - x_true))
        except DivergenceError as exc:
            tr = exc.trace
            final_loss, iters, converged, sig_err = math.inf, tr.iterations, False, math.inf
        if converged and not final_loss <= task.threshold:
            raise RuntimeError("converged run ended above its threshold")
        eps_norm = float(np.linalg.norm(eps))
        bound = math.nan
        if task.experiment == "noise_sweep":
            mu = float(op.sigma_min)
            cert = certify(net, op, loss, "discrete", mu_F=mu, step_size=gamma)
            bound = recovery_bound("discrete", cert, RecoveryBoundInputs(0.0, eps_norm), iters)
    rec = RunRecord(
        experiment=task.experiment, k=task.k, n=task.n, m=task.m, d=task.d, p=task.p,
        beta=task.beta, trial=task.trial, seed=task.seed, converged=converged,
        final_loss=final_loss, iterations=iters, final_signal_error=sig_err,
        step_size=gamma, eps_norm=eps_norm, recovery_bound=bound,
        wall_time=time.perf_counter() - t0,
    )
    curves = {
        "iters": np.asarray(tr.iters, dtype=np.int64),
        "loss": np.asarray(tr.loss, dtype=float),
        "signal_err": tr.column("signal_err"),
    }
    return rec, curves


def _tasks(cfg: ExperimentConfig):
    code = _STREAM_CODE[cfg.experiment]
    out = []
    for ik, k in enumerate(cfg.k):
        for i_n, n in enumerate(cfg.n):
            for im, m in enumerate(cfg.m):
                for i_d, d in enumerate(cfg.d):
                    for ip, p in enumerate(cfg.p):
                        for ib, beta in enumerate(cfg.beta):
                            for t in range(cfg.trials):
                                if cfg.experiment == "noise_sweep":
                                    stream = (code, 2, ib, t)
                                else:
                                    stream = (code, ik, i_n, im, i_d, ip, ib, t)
                                out.append(TrialTask(
                                    cfg.experiment, int(k), int(n), int(m), int(d), float(p),
                                    float(beta), t, stream, cfg.base_seed, cfg.max_iters,
                                    cfg.threshold, cfg.activation, cfg.step_rule, cfg.safety,
                                    cfg.trace_stride,
                                ))
    return out


def run_trials(cfg: ExperimentConfig, threads: int = 1):
    """(records, curves) for every trial, sorted by grid coordinates."""
    tasks = _tasks(cfg)
    if threads <= 1:
        results = [_run_trial(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    results.sort(key=lambda rc: rc[0].key)
    return [r for r, _ in results], [c for _, c in results]


# ---------------------------------------------------------------- phase heatmap


@dataclass
class HeatmapGrid:
    row_name: str
    row_values: list
    col_name: str
    col_values: list
    frequency: np.ndarray  # len(row_values) x len(col_values)
    trials: np.ndarray

    def column(self, j) -> np.ndarray:
        return self.frequency[:, j]

    def rows(self):
        for i, rv in enumerate(self.row_values):
            for j, cv in enumerate(self.col_values):
                yield rv, cv, float(self.frequency[i, j]), int(self.trials[i, j])


def heatmap_from_records(records, row_name="k", col_name="n") -> HeatmapGrid:
    rows = sorted({getattr(r, row_name) for r in records})
    cols = sorted({getattr(r, col_name) for r in records})
    conv = np.zeros((len(rows), len(cols)))
    count = np.zeros((len(rows), len(cols)), dtype=int)
    for r in records:
        i, j = rows.index(getattr(r, row_name)), cols.index(getattr(r, col_name))
        count[i, j] += 1
        conv[i, j] += bool(r.converged)
    freq = np.divide(conv, count, out=np.zeros_like(conv), where=count > 0)
    return HeatmapGrid(row_name, rows, col_name, cols, freq, count)


@dataclass
class PhaseBoundaryFit:
    a: float
    b: float
    c: float
    points: list  # (column value, crossing)
    residuals: np.ndarray
    undefined_columns: list

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * x ** 2 + self.b * x + self.c


def level_crossing(rows, freq, level=0.5) -> float:
    """Interpolated first upward crossing of ``level`` along ``rows``."""
    rows = np.asarray(rows, dtype=float)
    freq = np.asarray(freq, dtype=float)
    if freq[0] >= level:
        raise BoundaryUndefinedError("column starts above the level")
    for i in range(1, len(rows)):
        if freq[i] >= level:
            f0, f1 = freq[i - 1], freq[i]
            return float(rows[i - 1] + (level - f0) / (f1 - f0) * (rows[i] - rows[i - 1]))
    raise BoundaryUndefinedError("column never reaches the level")


def fit_phase_boundary(grid: HeatmapGrid, level=0.5) -> PhaseBoundaryFit:
    """Least-squares quadratic row*(col) = a col^2 + b col + c through the per-column crossings."""
    pts, undefined = [], []
    for j, cv in enumerate(grid.col_values):
        try:
            pts.append((float(cv), level_crossing(grid.row_values, grid.column(j), level)))
        except BoundaryUndefinedError:
            undefined.append(cv)
    if len(pts) < 3:
        raise BoundaryUndefinedError(
            f"only {len(pts)} columns cross level {level}; a quadratic needs 3 (undefined: {undefined})"
        )
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    coef = np.polyfit(x, y, 2)
    res = y - np.polyval(coef, x)
    return PhaseBoundaryFit(float(coef[0]), float(coef[1]), float(coef[2]), pts, res, undefined)


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties; NaN if either side is constant."""
    from scipy.stats import spearmanr

    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return math.nan
    return float(spearmanr(x, y).statistic)


def monotone_column(values, freq, rho_min=0.9):
    """(passes, rho, non_decreasing) for one heatmap column.

    A column passes when its Spearman rho reaches ``rho_min`` or when it is
    exactly non-decreasing; ties in saturated columns pull rho below 1 even
    for a perfect staircase.
    """
    freq = np.asarray(freq, dtype=float)
    nondec = bool(np.all(np.diff(freq) >= 0))
    rho = spearman(values, freq)
    ok = nondec or (not math.isnan(rho) and rho >= rho_min)
    return ok, rho, nondec


def _svg_gray(freq):
    v = int(round(255 * (1.0 - min(max(freq, 0.0), 1.0))))
    return f"#{v:02x}{v:02x}{v:02x}"


def emit_svg_heatmap(grid: HeatmapGrid, path, fit: PhaseBoundaryFit | None = None, cell=40) -> Path:
    """Columns left to right, rows bottom to top; 0 is white and 1 is black."""
    nr, nc = len(grid.row_values), len(grid.col_values)
    left, top, bottom = 70, 20, 50
    width, height = left + nc * cell + 20, top + nr * cell + bottom
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff" class="bg"/>',
    ]
    for i, rv in enumerate(grid.row_values):
        y = top + (nr - 1 - i) * cell
        for j, cv in enumerate(grid.col_values):
            x = left + j * cell
            f = float(grid.frequency[i, j])
            out.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_svg_gray(f)}" data-freq="{f!r}"/>'
            )
        out.append(f'<text x="{left - 6}" y="{y + cell / 2 + 4}" font-size="11" text-anchor="end">{rv}</text>')
    for j, cv in enumerate(grid.col_values):
        out.append(
            f'<text x="{left + j * cell + cell / 2}" y="{top + nr * cell + 16}" font-size="11" '
            f'text-anchor="middle">{cv}</text>'
        )
    out.append(f'<text x="{left + nc * cell / 2}" y="{height - 10}" font-size="13" '
               f'text-anchor="middle">{grid.col_name}</text>')
    out.append(f'<text x="14" y="{top + nr * cell / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + nr * cell / 2})">{grid.row_name}</text>')
    if fit is not None:
        # piecewise-linear axes: map values through their cell index
        rows = np.asarray(grid.row_values, dtype=float)
        cols = np.asarray(grid.col_values, dtype=float)
        xs = np.linspace(cols[0], cols[-1], 50)
        pts = []
        for xv in xs:
            yv = float(fit(xv))
            if not (rows[0] <= yv <= rows[-1]):
                continue
            px = left + (np.interp(xv, cols, np.arange(nc)) + 0.5) * cell
            py = top + (nr - 1 - np.interp(yv, rows, np.arange(nr)) + 0.5) * cell
            pts.append(f"{px:.2f},{py:.2f}")
        if pts:
            out.append(f'<polyline fill="none" stroke="#1f5fbf" stroke-width="2" points="{" ".join(pts)}"/>')
    out.append("</svg>")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_svg_lines(series: dict, path, x_label="iteration", y_label="value", log_y=True,
                   dashed: dict | None = None) -> Path:
    """Minimal line plot: ``series`` maps a label to (x, y) arrays."""
    width, height, left, top, right, bottom = 520, 340, 70, 20, 120, 45
    pw, ph = width - left - right, height - top - bottom
    tf = (lambda v: np.log10(np.maximum(v, 1e-300))) if log_y else (lambda v: v)
    allx = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ally = np.concatenate([tf(np.asarray(y, dtype=float)) for _, y in series.values()])
    if dashed:
        ally = np.concatenate([ally, tf(np.asarray(list(dashed.values()), dtype=float))])
    ally = ally[np.isfinite(ally)]
    x0, x1 = float(np.min(allx)), float(np.max(allx)) or 1.0
    y0, y1 = (float(np.min(ally)), float(np.max(ally))) if ally.size else (0.0, 1.0)
    if y1 == y0:
        y1 = y0 + 1.0
    sx = lambda v: left + (v - x0) / ((x1 - x0) or 1.0) * pw
    sy = lambda v: top + (1.0 - (v - y0) / (y1 - y0)) * ph
    palette = ["#1f5fbf", "#bf3f1f", "#2f9f4f", "#8f4fbf", "#bf8f1f", "#3f3f3f"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>']
    for i, (label, (x, y)) in enumerate(series.items()):
        col = palette[i % len(palette)]
        ty = tf(np.asarray(y, dtype=float))
        pts = [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(np.asarray(x, dtype=float), ty) if np.isfinite(b)]
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{width - right + 8}" y="{top + 14 + 16 * i}" font-size="11" fill="{col}">{label}</text>')
        if dashed and label in dashed and np.isfinite(tf(np.float64(dashed[label]))):
            yy = sy(float(tf(np.float64(dashed[label]))))
            out.append(f'<line x1="{left}" x2="{left + pw}" y1="{yy:.2f}" y2="{yy:.2f}" stroke="{col}" '
                       f'stroke-dasharray="5,4"/>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 8}" font-size="12" text-anchor="middle">{x_label}</text>')
    ylab = f"log10 {y_label}" if log_y else y_label
    out.append(f'<text x="14" y="{top + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2})">{ylab}</text>')
    out.append(f'<text x="{left - 4}" y="{top + 10}" font-size="10" text-anchor="end">{y1:.3g}</text>')
    out.append(f'<text x="{left - 4}" y="{top + ph}" font-size="10" text-anchor="end">{y0:.3g}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def _outdir(cfg, out):
    d = Path(out if out is not None else cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _save_config(cfg, d):
    (d / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass
class PhaseResult:
    grid: HeatmapGrid
    records: list
    fit: PhaseBoundaryFit | None
    fit_error: str | None
    files: dict


def run_phase_heatmap(cfg: ExperimentConfig, out=None, threads=1, level=0.5) -> PhaseResult:
    """Convergence frequency over (k, n) or (k, m); fresh operator and signal per trial."""
    if cfg.experiment not in ("phase_kn", "phase_km"):
        raise InvalidInputError("run_phase_heatmap needs experiment phase_kn or phase_km")
    if any(b != 0 for b in cfg.beta):
        raise InvalidInputError("phase heatmaps are noise-free")
    col = "n" if cfg.experiment == "phase_kn" else "m"
    d = _outdir(cfg, out)
    _save_config(cfg, d)
    records, _ = run_trials(cfg, threads)
    grid = heatmap_from_records(records, "k", col)
    fit, fit_error = None, None
    try:
        fit = fit_phase_boundary(grid, level)
    except BoundaryUndefinedError as exc:
        fit_error = str(exc)
    files = {
        "runs": emit_csv(records, d / "runs.csv"),
        "grid": write_rows(d / "grid.csv", ("k", col, "frequency", "trials"), grid.rows()),
        "svg": emit_svg_heatmap(grid, d / "heatmap.svg", fit),
    }
    if fit is not None:
        rows = [(x, y, float(r)) for (x, y), r in zip(fit.points, fit.residuals)]
        files["boundary"] = write_rows(d / "boundary.csv", (col, "k_crossing", "residual"), rows)
        files["fit"] = write_rows(d / "boundary_fit.csv", ("a", "b", "c", "undefined_columns"),
                                  [(fit.a, fit.b, fit.c, " ".join(str(u) for u in fit.undefined_columns))])
    return PhaseResult(grid, records, fit, fit_error, files)


def _mean_curve(curves, key, length_iters):
    """Mean and std over runs of a strided curve; runs that stopped early hold their last value."""
    grid = length_iters
    stack = []
    for c in curves:
        it, val = c["iters"], c[key]
        idx = np.searchsorted(it, grid, side="right") - 1
        stack.append(val[np.clip(idx, 0, len(val) - 1)])
    arr = np.array(stack)
    return arr.mean(axis=0), arr.std(axis=0)


def _stride_grid(cfg):
    g = np.arange(0, cfg.max_iters + 1, cfg.trace_stride)
    if g[-1] != cfg.max_iters:
        g = np.append(g, cfg.max_iters)
    return g


@dataclass
class NoiseSweepResult:
    records: list
    summary: list  # (beta, mean, std, floor, gap)
    mu_F: float
    files: dict


def run_noise_sweep(cfg: ExperimentConfig, out=None, threads=1) -> NoiseSweepResult:
    """Signal error vs noise level with one operator and one signal shared by all runs."""
    if cfg.experiment != "noise_sweep":
        raise InvalidInputError("run_noise_sweep needs experiment noise_sweep")
    d = _outdir(cfg, out)
    _save_config(cfg, d)
    records, curves = run_trials(cfg, threads)
    op, _ = _noise_sweep_problem(cfg.base_seed, cfg.n[0])
    mu = float(op.sigma_min)
    its = _stride_grid(cfg)
    summary, trace_rows, series, dashed = [], [], {}, {}
    for beta in sorted(set(cfg.beta)):
        sel = [i for i, r in enumerate(records) if r.beta == beta]
        errs = np.array([records[i].final_signal_error for i in sel])
        floor = expected_noise_floor(cfg.m[0], beta, mu)
        mean = float(errs.mean())
        summary.append((beta, mean, float(errs.std()), floor, floor - mean))
        mc, sc = _mean_curve([curves[i] for i in sel], "signal_err", its)
        trace_rows.extend((beta, int(t), float(a), float(b)) for t, a, b in zip(its, mc, sc))
        series[f"beta={beta:g}"] = (its, mc)
        dashed[f"beta={beta:g}"] = floor
    files = {
        "runs": emit_csv(records, d / "runs.csv"),
        "summary": write_rows(d / "summary.csv",
                              ("beta", "mean_signal_err", "std_signal_err", "noise_floor", "gap"), summary),
        "trace": write_rows(d / "trace.csv", ("beta", "iter", "mean_signal_err", "std_signal_err"), trace_rows),
        "svg": emit_svg_lines(series, d / "signal_error.svg", y_label="|x - x_true|", dashed=dashed),
    }
    return NoiseSweepResult(records, summary, mu, files)


@dataclass
class NoiseVsKResult:
    records: list
    summary: list  # (k, beta, mean_final_loss, std_final_loss)
    files: dict


def run_noise_vs_k(cfg: ExperimentConfig, out=None, threads=1) -> NoiseVsKResult:
    """Final loss after ``max_iters`` iterations per (k, beta), averaged over trials."""
    if cfg.experiment != "noise_vs_k":
        raise InvalidInputError("run_noise_vs_k needs experiment noise_vs_k")
    d = _outdir(cfg, out)
    _save_config(cfg, d)
    records, _ = run_trials(cfg, threads)
    summary = []
    for k in sorted(set(cfg.k)):
        for beta in sorted(set(cfg.beta)):
            vals = np.array([r.final_loss for r in records if r.k == k and r.beta == beta])
            summary.append((k, beta, float(vals.mean()), float(vals.std())))
    series = {}
    for beta in sorted(set(cfg.beta)):
        rows = [s for s in summary if s[1] == beta]
        series[f"beta={beta:g}"] = (np.array([s[0] for s in rows]), np.array([s[2] for s in rows]))
    files = {
        "runs": emit_csv(records, d / "runs.csv"),
        "summary": write_rows(d / "summary.csv", ("k", "beta", "mean_final_loss", "std_final_loss"), summary),
        "svg": emit_svg_lines(series, d / "final_loss.svg", x_label="k", y_label="final loss"),
    }
    return NoiseVsKResult(records, summary, files)


@dataclass
class PSweepResult:
    records: list
    summary: list  # (p, median_iters, converged_fraction, mean_final_loss)
    files: dict

    def median_iterations(self) -> dict:
        return {s[0]: s[1] for s in self.summary}


def median_iterations_to_threshold(records) -> float:
    """Median of iterations-to-threshold, counting non-converged runs as infinite."""
    its = np.array([r.iterations if r.converged else math.inf for r in records], dtype=float)
    return float(np.median(its))


def run_p_sweep(cfg: ExperimentConfig, out=None, threads=1) -> PSweepResult:
    """Loss trajectories and iterations-to-threshold for each loss exponent p."""
    if cfg.experiment != "p_sweep":
        raise InvalidInputError("run_p_sweep needs experiment p_sweep")
    d = _outdir(cfg, out)
    _save_config(cfg, d)
    records, curves = run_trials(cfg, threads)
    its = _stride_grid(cfg)
    summary, traj, series = [], [], {}
    for p in sorted(set(cfg.p)):
        sel = [i for i, r in enumerate(records) if r.p == p]
        recs = [records[i] for i in sel]
        summary.append((p, median_iterations_to_threshold(recs),
                        float(np.mean([r.converged for r in recs])),
                        float(np.mean([r.final_loss for r in recs]))))
        mc, _ = _mean_curve([curves[i] for i in sel], "loss", its)
        traj.extend((p, int(t), float(v)) for t, v in zip(its, mc))
        series[f"p={p:g}"] = (its, mc)
    files = {
        "runs": emit_csv(records, d / "runs.csv"),
        "summary": write_rows(d / "summary.csv",
                              ("p", "median_iters", "converged_fraction", "mean_final_loss"), summary),
        "trajectory": write_rows(d / "trajectory.csv", ("p", "iter", "mean_loss"), traj),
        "svg": emit_svg_lines(series, d / "loss.svg", y_label="loss"),
    }
    return PSweepResult(records, summary, files)


def run_experiment(cfg: ExperimentConfig, out=None, threads=1):
    if cfg.experiment in ("phase_kn", "phase_km"):
        return run_phase_heatmap(cfg, out, threads)
    if cfg.experiment == "noise_sweep":
        return run_noise_sweep(cfg, out, threads)
    if cfg.experiment == "noise_vs_k":
        return run_noise_vs_k(cfg, out, threads)
    return run_p_sweep(cfg, out, threads)
