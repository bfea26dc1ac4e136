"""Closed-form convergence and recovery certificates for the two-layer generator.

Everything here is an evaluator of an explicit bound. The only boolean
certificate is the initialization gate (sigma0 > 0 and R' < R); quantities
involving the unnamed absolute constants C, C' are scaling estimates.

Two loss normalizations meet here. The loss family uses |r|^2/2 at p = 0
(psi(s) = sqrt(2 s), c = sqrt(2)); the plain squared error |r|^2 corresponds
to c = 1. Discrete-time constants carry c explicitly so both are covered.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    DomainError,
    GuaranteeUnavailable,
    InvalidInputError,
    RestrictedInjectivityUnavailable,
)
from .linalg import gram_sigma_max, gram_sigma_min
from .losses import Desingularizer, KLLoss
from .model import TwoLayerNet, forward, jacobian_gram

CONTINUOUS = "continuous"
DISCRETE = "discrete"
FIXED_V = "fixed_V"
BOTH = "both"


def _check_layers(layers):
    if layers not in (FIXED_V, BOTH):
        raise InvalidInputError(f"layers must be {FIXED_V!r} or {BOTH!r}")


def _check_variant(variant):
    if variant not in (CONTINUOUS, DISCRETE):
        raise InvalidInputError(f"variant must be {CONTINUOUS!r} or {DISCRETE!r}")


def sigma0(net: TwoLayerNet) -> float:
    """sigma_min(J(theta_0)) from the n x n Gram matrix."""
    return gram_sigma_min(jacobian_gram(net))


def jacobian_norm(net: TwoLayerNet) -> float:
    return gram_sigma_max(jacobian_gram(net))


def sigma0_theory_floor(layers, C_phi, C_phi_prime) -> float:
    """High-probability floor on sigma0 for wide networks."""
    _check_layers(layers)
    if layers == BOTH:
        return math.sqrt(C_phi ** 2 + C_phi_prime ** 2) / 2.0
    return C_phi_prime / 2.0


def lip_bound(layers, B, D, n, k, rho=0.0) -> float:
    """Lipschitz constant of the Jacobian; global for fixed V, on Ball(theta_0, rho) otherwise."""
    _check_layers(layers)
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    s = math.sqrt(n / k)
    if layers == FIXED_V:
        return B * D * s
    return B * (1.0 + 2.0 * (D + rho)) * s


def radius_R(layers, sigma0, B, D, n, k) -> float:
    """R = sigma0 / (2 Lip_{Ball(theta_0, R)}(J)), solved in closed form."""
    _check_layers(layers)
    if sigma0 <= 0:
        return 0.0
    if layers == FIXED_V:
        return sigma0 * math.sqrt(k) / (2.0 * B * D * math.sqrt(n))
    # positive root of 4 B s R^2 + 2 B (1 + 2D) s R - sigma0 = 0, s = sqrt(n/k)
    h = 0.5 + D
    return (math.sqrt(h * h + sigma0 * math.sqrt(k / n) / B) - h) / 2.0


def radius_R_both_proof_form(C_phi, C_phi_prime, B, D, n, k) -> float:
    """The radius lower bound as written in the both-layers overparametrization proof."""
    h = 0.5 + D
    return (math.sqrt(h * h + math.sqrt((C_phi ** 2 + C_phi_prime ** 2) * k / n) / (2 * B)) - h) / 2.0


def radius_R_prime(variant, sigma_F, sigma0, L0, psi=None) -> float:
    """Trajectory radius. ``psi`` is the desingularizing function; the discrete
    variant defaults to psi = sqrt (plain squared error)."""
    _check_variant(variant)
    if sigma_F <= 0 or sigma0 <= 0:
        raise InvalidInputError("sigma_F and sigma0 must be > 0")
    if L0 < 0:
        raise InvalidInputError("L0 must be >= 0")
    if variant == CONTINUOUS:
        if psi is None:
            raise InvalidInputError("the continuous radius needs psi")
        return 2.0 * float(psi(L0)) / (sigma_F * sigma0)
    val = math.sqrt(L0) if psi is None else float(psi(L0))
    return 4.0 * val / (sigma_F * sigma0)


def gate_holds(sigma0, R, R_prime) -> bool:
    return bool(sigma0 > 0 and R_prime < R)


def smoothness_estimate(net: TwoLayerNet, op, loss: KLLoss, radius: float, kind="certified", D=1.0) -> float:
    """Gradient-Lipschitz constant of theta -> L(A g(theta)) on Ball(theta_0, radius).

    ``kind="product"`` returns 2 LipJ Lipg |A|^2. That expression vanishes like
    sqrt(n/k) while the curvature J^T A^T A J does not, so it is not a valid
    step-size bound for wide networks; it is kept for comparison.

    ``kind="certified"`` bounds |grad f(a) - grad f(b)| directly:
    LipJ |A| rho^(2p+1) + (1 + 2p) rho^(2p) Lipg^2 |A|^2, where Lipg bounds
    |J| and rho = |r_0| + |A| Lipg radius bounds the residual on the ball.
    """
    if net.k < 1:
        raise InvalidInputError("degenerate network")
    if radius < 0:
        raise InvalidInputError("radius must be >= 0")
    lipJ = lip_bound(net.layers, net.activation.B, D, net.n, net.k, rho=radius)
    J0 = jacobian_norm(net)
    lipg = J0 + lipJ * radius
    A_norm = op.spectral_norm
    if kind == "product":
        return 2.0 * lipJ * lipg * A_norm ** 2
    if kind != "certified":
        raise InvalidInputError(f"unknown smoothness kind {kind!r}")
    r0 = float(np.linalg.norm(op.apply(forward(net)) - loss.y))
    rho = r0 + A_norm * lipg * radius
    p = loss.p
    return lipJ * A_norm * rho ** (2 * p + 1) + (1 + 2 * p) * rho ** (2 * p) * lipg ** 2 * A_norm ** 2


def step_efficiency(step_size, L_hat) -> float:
    """eta = gamma L - gamma^2 L^2 / 2."""
    g = step_size * L_hat
    return g - 0.5 * g * g


def discrete_rate_base(eta, sigma0, sigma_F, L_hat, c=1.0) -> float:
    """Per-iteration contraction 1 - eta sigma0^2 sigma_F^2 / (c^2 L)."""
    return 1.0 - eta * sigma0 ** 2 * sigma_F ** 2 / (c ** 2 * L_hat)


@dataclass
class Certificate:
    sigma0: float
    lipJ_bound: float
    R: float
    R_prime: float
    gate: bool
    sigma_F: float
    mu_F: float | None
    L_hat: float
    step_size: float
    eta: float
    rate_base: float
    variant: str
    layers: str
    L0: float
    c: float
    alpha: float
    B: float
    D: float
    J0_norm: float
    A_norm: float

    @property
    def desingularizer(self) -> Desingularizer:
        return Desingularizer(self.c, self.alpha)

    def as_dict(self) -> dict:
        return asdict(self)

    def report(self) -> str:
        """``key: value`` lines, one per field."""
        lines = []
        for key, val in self.as_dict().items():
            if isinstance(val, float):
                val = repr(val)
            lines.append(f"{key}: {val}")
        return "\n".join(lines) + "\n"


def initialization_gate(cert: Certificate) -> bool:
    return gate_holds(cert.sigma0, cert.R, cert.R_prime)


def certify(net: TwoLayerNet, op, loss: KLLoss, variant=DISCRETE, safety=0.9, D=1.0,
            mu_F=None, smoothness="certified", step_size=None) -> Certificate:
    """Evaluate every constant for (net at initialization, operator, loss)."""
    _check_variant(variant)
    if not (0 < safety <= 1):
        raise InvalidInputError("safety must lie in (0, 1]")
    layers = net.layers
    B = net.activation.B
    s0 = sigma0(net)
    sF = op.sigma_min_nonzero
    R = radius_R(layers, s0, B, D, net.n, net.k)
    lipJ = lip_bound(layers, B, D, net.n, net.k, rho=R)
    L0 = loss.value(op.apply(forward(net)))
    desing = loss.desingularizer
    if s0 > 0:
        Rp = radius_R_prime(variant, sF, s0, L0, psi=desing.psi)
    else:
        Rp = math.inf
    L_hat = smoothness_estimate(net, op, loss, R, kind=smoothness, D=D)
    gamma = safety / L_hat if step_size is None else step_size
    eta = step_efficiency(gamma, L_hat)
    rate = discrete_rate_base(eta, s0, sF, L_hat, c=desing.c)
    return Certificate(
        sigma0=s0, lipJ_bound=lipJ, R=R, R_prime=Rp, gate=gate_holds(s0, R, Rp),
        sigma_F=sF, mu_F=mu_F, L_hat=L_hat, step_size=gamma, eta=eta, rate_base=rate,
        variant=variant, layers=layers, L0=L0, c=desing.c, alpha=desing.alpha,
        B=B, D=D, J0_norm=jacobian_norm(net), A_norm=op.spectral_norm,
    )


def _gamma_t(desing: Desingularizer, sigma_F, sigma0, L0, t):
    return sigma_F ** 2 * sigma0 ** 2 * t / 4.0 + desing.Psi(L0)


def loss_rate_curve(variant, desing: Desingularizer, sigma_F, sigma0, L0, t, rate_base=None):
    """Loss upper bound at time t (continuous) or iteration t (discrete)."""
    _check_variant(variant)
    if variant == DISCRETE:
        if rate_base is None:
            raise InvalidInputError("the discrete curve needs rate_base")
        return rate_base ** np.asarray(t, dtype=float) * L0
    if L0 == 0:
        return np.zeros_like(np.asarray(t, dtype=float))
    return desing.Psi_inv(_gamma_t(desing, sigma_F, sigma0, L0, np.asarray(t, dtype=float)))


def theta_rate_bound(variant, desing: Desingularizer, sigma_F, sigma0, loss_at_t) -> float:
    """Distance of theta(t) to its limit, given the current loss value."""
    _check_variant(variant)
    factor = 2.0 if variant == CONTINUOUS else 4.0
    return factor * float(desing.psi(loss_at_t)) / (sigma0 * sigma_F)


def early_stop_time_continuous(desing: Desingularizer, sigma_F, sigma0, L0, eps_norm, form="stated") -> float:
    """Time after which |y(t) - y_clean| <= 2 |eps|.

    ``form="stated"``: 4 Psi(psi^-1(|eps|)) / (sigma_F^2 sigma0^2) - Psi(L0).
    ``form="derived"``: 4 (Psi(psi^-1(|eps|)) - Psi(L0)) / (sigma_F^2 sigma0^2),
    the time at which the loss curve reaches psi^-1(|eps|).
    """
    if eps_norm <= 0:
        raise InvalidInputError("eps_norm must be > 0")
    target = float(desing.Psi(desing.psi_inv(eps_norm)))
    scale = sigma_F ** 2 * sigma0 ** 2
    if form == "stated":
        return 4.0 * target / scale - float(desing.Psi(L0))
    if form == "derived":
        return 4.0 * (target - float(desing.Psi(L0))) / scale
    raise InvalidInputError(f"unknown form {form!r}")


def early_stop_iteration(rate_base, eps_norm, L0, c=1.0) -> int:
    """First iteration after which |y(tau) - y_clean| <= 2 |eps| is guaranteed.

    With c = 1 this is ceil((2 log|eps| - log L0) / log(rate_base)). For a
    loss with psi(s) = c sqrt(s) the residual is c sqrt(L), hence the c^2.
    """
    if not (0.0 < rate_base < 1.0):
        raise GuaranteeUnavailable(f"rate base {rate_base} is outside (0, 1)")
    if eps_norm <= 0:
        raise InvalidInputError("eps_norm must be > 0")
    if L0 <= 0:
        return 0
    tau = (2.0 * math.log(eps_norm) - math.log(c * c * L0)) / math.log(rate_base)
    return max(0, math.ceil(tau))


@dataclass
class RecoveryBoundInputs:
    dist_signal_manifold: float = 0.0
    eps_norm: float = 0.0
    L_F: float = 0.0
    L_JF: float = 0.0

    def __post_init__(self):
        if min(self.dist_signal_manifold, self.eps_norm, self.L_F, self.L_JF) < 0:
            raise InvalidInputError("recovery inputs must be >= 0")


def _mu(cert):
    if cert.mu_F is None or cert.mu_F <= 0:
        raise RestrictedInjectivityUnavailable("mu_F is not available for this certificate")
    return cert.mu_F


def optimization_error(variant, cert: Certificate, t) -> float:
    """Observation-space distance to the limit, |y(t) - y| <= this."""
    _check_variant(variant)
    desing = cert.desingularizer
    if variant == DISCRETE:
        return float(cert.rate_base ** (t / 2.0) * desing.psi(cert.L0))
    if cert.L0 == 0:
        return 0.0
    g = _gamma_t(desing, cert.sigma_F, cert.sigma0, cert.L0, t)
    return float(2.0 * desing.psi(desing.Psi_inv(g)) / (cert.sigma0 * cert.sigma_F))


def recovery_bound(variant, cert: Certificate, inputs: RecoveryBoundInputs, t) -> float:
    """Signal-space error bound: optimization + modeling + noise terms."""
    mu = _mu(cert)
    opt = optimization_error(variant, cert, t) / mu
    model = (1.0 + inputs.L_F / mu) * inputs.dist_signal_manifold
    return opt + model + inputs.eps_norm / mu


def alt_recovery_quadratic(cert: Certificate, inputs: RecoveryBoundInputs, t):
    """(a, Q) of the inequality -a X^2 + X - Q <= 0 behind the linearized bound."""
    mu = _mu(cert)
    delta = optimization_error(CONTINUOUS, cert, t)
    a = inputs.L_JF / mu
    dist = inputs.dist_signal_manifold
    Q = (delta + inputs.eps_norm) / mu + a * dist ** 2 + (1.0 + inputs.L_F / mu) * dist
    return a, Q


def alt_recovery_bound(cert: Certificate, inputs: RecoveryBoundInputs, t) -> float:
    """2 Q, valid only while the quadratic has real roots (1 - 4 a Q >= 0)."""
    a, Q = alt_recovery_quadratic(cert, inputs, t)
    if 1.0 - 4.0 * a * Q < 0:
        raise GuaranteeUnavailable("noise or modeling error too large for the linearized bound")
    return 2.0 * Q


def init_error_bound(C, L_F0, n, d, m, sup_Fx, sup_eps) -> float:
    """C L_F0 sqrt(n log d) + sqrt(m) (|F(x)|_inf + |eps|_inf)."""
    return C * L_F0 * math.sqrt(n * math.log(d)) + math.sqrt(m) * (sup_Fx + sup_eps)


def overparam_requirement(layers, desing: Desingularizer, sigma_F, n, m, d, L_F0, L_L0,
                          sup_Fx, sup_eps, C=1.0, C_prime=1.0) -> float:
    """Width threshold on k (a scaling estimate: C and C' are unknown)."""
    _check_layers(layers)
    e0 = init_error_bound(C, L_F0, n, d, m, sup_Fx, sup_eps)
    psi_val = float(desing.psi(L_L0 / 2.0 * e0 ** 2))
    if layers == BOTH:
        return C_prime * sigma_F ** -4 * n * psi_val ** 4
    return C_prime * sigma_F ** -2 * n * psi_val ** 2


def dist_to_generated_set(net: TwoLayerNet, x_true, radius, iters=2000, step=None) -> float:
    """Heuristic upper estimate of dist(x_true, Sigma'): projected gradient
    descent on |g(theta) - x_true|^2 / 2 kept inside Ball(theta_0, radius)."""
    from .model import hidden

    theta0 = net.params()
    theta = theta0.copy()
    x_true = np.asarray(x_true, dtype=float)
    if step is None:
        step = 1.0 / max(jacobian_norm(net) ** 2, 1e-12)
    best = np.linalg.norm(forward(net) - x_true)
    cur = net
    for _ in range(iters):
        z = hidden(cur)
        a = cur.activation.value(z)
        x = cur.V @ a / math.sqrt(cur.k)
        res = x - x_true
        best = min(best, float(np.linalg.norm(res)))
        gz = cur.activation.derivative(z) * (cur.V.T @ res) / math.sqrt(cur.k)
        grad = [np.outer(gz, cur.u).ravel()]
        if cur.train_V:
            grad.append(np.outer(res, a).ravel(order="F") / math.sqrt(cur.k))
        theta = theta - step * np.concatenate(grad)
        off = theta - theta0
        nrm = np.linalg.norm(off)
        if nrm > radius:
            theta = theta0 + off * (radius / nrm)
        cur = net.with_params(theta)
    return min(best, float(np.linalg.norm(forward(cur) - x_true)))


@dataclass
class GateInstance:
    net: TwoLayerNet
    op: object
    x_true: np.ndarray
    y_clean: np.ndarray
    y_obs: np.ndarray
    eps: np.ndarray
    beta: float
    loss: KLLoss
    cert: Certificate


def build_gate_instance(k, n, m, d, rng, activation="sigmoid", p=0.0, gate_ratio=0.5,
                        noise_fraction=0.0, spectrum=None, D=1.0, safety=0.9) -> GateInstance:
    """A problem on which the discrete initialization gate provably holds.

    The target is x_true = g(theta_0) + s xi for a random direction xi, with s
    chosen so that R' = gate_ratio R. With ``noise_fraction`` f > 0, the noise
    eps = beta U(-1, 1)^m is rescaled so that |eps| = f |r_0|. The operator
    has singular values ``spectrum`` (default: evenly spaced in [0.5, 1]).
    """
    from .model import init_network
    from .operators import prescribed_spectrum_operator

    if not (0.0 < gate_ratio < 1.0):
        raise InvalidInputError("gate_ratio must lie in (0, 1)")
    if not (0.0 <= noise_fraction < 1.0):
        raise InvalidInputError("noise_fraction must lie in [0, 1)")
    net = init_network(k, d, n, False, activation, rng)
    if spectrum is None:
        spectrum = np.linspace(1.0, 0.5, min(m, n))
    op = prescribed_spectrum_operator(n, spectrum, rng, m=m)
    xi = rng.standard_normal(n)
    raw = rng.uniform(-1.0, 1.0, size=m)

    s0 = sigma0(net)
    sF = op.sigma_min_nonzero
    R = radius_R(net.layers, s0, net.activation.B, D, n, k)
    # discrete radius is 4 |r_0| / (sigma_F sigma0) for every member of the loss family
    target = gate_ratio * R * sF * s0 / 4.0
    beta = 0.0
    eps = np.zeros(m)
    if noise_fraction > 0:
        beta = noise_fraction * target / np.linalg.norm(raw)
        eps = beta * raw
    a = op.apply(xi)
    # |s a + eps| = target, positive root
    qa, qb, qc = a @ a, 2.0 * (a @ eps), eps @ eps - target ** 2
    s = (-qb + math.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)
    x_true = forward(net) + s * xi
    y_clean = op.apply(x_true)
    y_obs = y_clean + eps
    loss = KLLoss(p, y_obs)
    cert = certify(net, op, loss, DISCRETE, safety=safety, D=D)
    return GateInstance(net, op, x_true, y_clean, y_obs, eps, float(beta), loss, cert)


__all__ = [
    "GateInstance", "build_gate_instance",
    "Certificate", "RecoveryBoundInputs", "alt_recovery_bound", "alt_recovery_quadratic",
    "certify", "discrete_rate_base", "dist_to_generated_set", "early_stop_iteration",
    "early_stop_time_continuous", "gate_holds", "init_error_bound", "initialization_gate",
    "jacobian_norm", "lip_bound", "loss_rate_curve", "optimization_error",
    "overparam_requirement", "radius_R", "radius_R_both_proof_form", "radius_R_prime",
    "recovery_bound", "sigma0", "sigma0_theory_floor", "smoothness_estimate",
    "step_efficiency", "theta_rate_bound", "DomainError",
]
