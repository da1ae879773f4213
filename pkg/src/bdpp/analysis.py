"""Numerical checks of the closed-form results and the search diagnostics:
theta ratios, the beta-norm Lipschitz measure, the convergence factor phi, the
flooding Taylor identity and alpha statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .regularizers import penalty_map
from .searchspace import EDGES, OPS, ArchParams, beta_of_alpha

THETA_VARIANTS = ("l2_adam_emulated", "weight_decay", "beta_decay")


@dataclass(frozen=True)
class ThetaReport:
    theta: np.ndarray
    variant: str
    lam_eta: float
    max_deviation: float

    def __post_init__(self):
        if not np.all(self.theta > 0):
            raise ValueError("theta must be positive")


@dataclass(frozen=True)
class ConvergenceDiagnostic:
    h: int
    beta_conv: dict
    beta_skip: dict
    phi: float


def _check_theta_args(alpha_row, variant, lam_eta, data_grad, eta):
    if variant not in THETA_VARIANTS:
        raise ValueError(f"theta variant must be one of {THETA_VARIANTS}, got {variant!r}")
    if lam_eta < 0:
        raise ValueError("lam_eta must be >= 0")
    a = np.asarray(alpha_row, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise ValueError("alpha_row must be a non-empty vector")
    g = np.zeros_like(a) if data_grad is None else np.asarray(data_grad, dtype=np.float64)
    if g.shape != a.shape:
        raise ValueError("data_grad must match alpha_row")
    return a, g, a - eta * g


def theta_closed_form(alpha_row, variant: str, lam_eta: float, data_grad=None, eta: float = 1.0) -> np.ndarray:
    """theta_k = sum_k' e^{a'_k'} / sum_k' [e^{F_k - F_k'}]^{lam*eta} e^{a'_k'}

    where a' is the unregularised step ``alpha - eta * data_grad`` and F the
    variant's penalty map evaluated at the current alpha.
    """
    a, _, a_next = _check_theta_args(alpha_row, variant, lam_eta, data_grad, eta)
    F = penalty_map(a, variant)
    m = a_next.max()
    w = np.exp(a_next - m)
    # exponent[k, k'] = lam_eta * (F_k - F_k')
    exponent = lam_eta * (F[:, None] - F[None, :])
    return w.sum() / (np.exp(exponent) * w[None, :]).sum(axis=1)


def theta_simulated(alpha_row, variant: str, lam_eta: float, data_grad=None, eta: float = 1.0) -> np.ndarray:
    """Run the plain and the regularised update, softmax both, divide."""
    a, g, a_next = _check_theta_args(alpha_row, variant, lam_eta, data_grad, eta)
    plain = beta_of_alpha(a_next)
    regular = beta_of_alpha(a - eta * g - lam_eta * penalty_map(a, variant))
    return regular / plain


def theta_report(alpha_row, variant: str, lam_eta: float, data_grad=None, eta: float = 1.0) -> ThetaReport:
    closed = theta_closed_form(alpha_row, variant, lam_eta, data_grad, eta)
    sim = theta_simulated(alpha_row, variant, lam_eta, data_grad, eta)
    dev = float(np.max(np.abs(closed - sim) / np.abs(sim)))
    return ThetaReport(closed, variant, float(lam_eta), dev)


# ---------------------------------------------------------------- beta norms


def lipschitz_measure(arch: ArchParams | np.ndarray) -> tuple[np.ndarray, float]:
    """Per-edge L2 norm of beta and their sum over edges."""
    per_edge = np.linalg.norm(beta_of_alpha(arch), axis=-1)
    return per_edge, float(per_edge.sum())


# ---------------------------------------------------------------- phi


def phi_convergence(beta_conv: dict, beta_skip: dict, h: int) -> float:
    """sum_{i=0}^{h-2} beta_conv[(i, h-1)]^2 * prod_{t<i} beta_skip[(t, i)]^2

    Both dicts are keyed by ``(source, target)`` node pairs.
    """
    if h < 2:
        raise ValueError(f"h must be >= 2, got {h}")
    need_conv = [(i, h - 1) for i in range(h - 1)]
    need_skip = [(t, i) for i in range(h - 1) for t in range(i)]
    missing = [k for k in need_conv if k not in beta_conv] + [k for k in need_skip if k not in beta_skip]
    if missing:
        raise KeyError(f"missing beta entries for edges {missing}")
    total = 0.0
    for i in range(h - 1):
        term = float(beta_conv[(i, h - 1)]) ** 2
        for t in range(i):
            term *= float(beta_skip[(t, i)]) ** 2
        total += term
    return total


def convergence_diagnostic(arch: ArchParams | np.ndarray, conv_op: str = "lin", skip_op: str = "skip",
                           ops: tuple[str, ...] = OPS) -> ConvergenceDiagnostic:
    """phi for the cell's output node, reading beta of ``conv_op`` and
    ``skip_op`` off every edge."""
    beta = beta_of_alpha(arch)
    ci, si = ops.index(conv_op), ops.index(skip_op)
    conv = {edge: float(beta[e, ci]) for e, edge in enumerate(EDGES)}
    skip = {edge: float(beta[e, si]) for e, edge in enumerate(EDGES)}
    h = max(t for _, t in EDGES) + 1
    return ConvergenceDiagnostic(h, conv, skip, phi_convergence(conv, skip, h))


# ---------------------------------------------------------------- flooding


def _grad(loss_fn, w: np.ndarray) -> tuple[float, np.ndarray]:
    g = dc.Graph()
    leaf = g.leaf(w, kind="w")
    loss = loss_fn(g, leaf)
    return loss.item(), dc.backward(g, loss)[leaf]


def _grad_norm_sq_half_grad(loss_fn, w: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """grad of ||g||^2 / 2, i.e. H g, by a central difference along g."""
    _, g = _grad(loss_fn, w)
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        return np.zeros_like(w)
    v = g / norm
    _, up = _grad(loss_fn, w + eps * v)
    _, dn = _grad(loss_fn, w - eps * v)
    return norm * (up - dn) / (2 * eps)


@dataclass(frozen=True)
class TaylorCheck:
    simulated: np.ndarray
    predicted: np.ndarray
    error: float
    phases: tuple[str, str]


def flooding_taylor_check(loss_fn, w0, eta: float, b: float) -> TaylorCheck:
    """Two flooded gradient steps from ``w0`` against w0 - (eta^2/2) grad ||g||^2.

    ``loss_fn(graph, w)`` builds a scalar loss from a weight leaf. The
    prediction only holds when the pair is one descent step followed by one
    ascent step; ``phases`` reports what actually happened.
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    w = np.asarray(w0, dtype=np.float64).copy()
    phases = []
    for _ in range(2):
        loss, g = _grad(loss_fn, w)
        sign = 1.0 if loss > b else -1.0
        phases.append("descent" if sign > 0 else "ascent")
        w = w - sign * eta * g
    predicted = np.asarray(w0, dtype=np.float64) - eta ** 2 * _grad_norm_sq_half_grad(loss_fn, np.asarray(w0, float))
    err = float(np.max(np.abs(w - predicted)))
    return TaylorCheck(w, predicted, err, tuple(phases))


# ---------------------------------------------------------------- alpha stats


def alpha_stats(trajectory) -> np.ndarray:
    """Per-epoch, per-edge (mean, median, population std) of alpha.

    ``trajectory`` is a sequence of alpha matrices (or ArchParams). Returns an
    array of shape (epochs, edges, 3).
    """
    mats = [np.asarray(a.alpha if isinstance(a, ArchParams) else a, dtype=np.float64) for a in trajectory]
    if not mats:
        raise ValueError("trajectory is empty")
    stack = np.stack([np.atleast_2d(m) for m in mats])
    return np.stack([stack.mean(axis=-1), np.median(stack, axis=-1), stack.std(axis=-1)], axis=-1)
