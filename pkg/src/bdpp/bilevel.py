"""Alternating first-order bi-level search with proxy knobs and alpha-std
early stopping."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .oracle import TabularBenchmark
from .regularizers import (
    LOSS_VARIANTS,
    STEP_VARIANTS,
    AlphaRegularizer,
    WeightRegularizer,
    alpha_loss,
    penalty_map,
    smoothing_perturbation,
    weight_regularized_loss,
)
from .searchspace import EDGES, OPS, ArchParams, Genotype, Supernet, discretize, genotype_to_string, supernet_forward

log = logging.getLogger(__name__)

CRITERIA = ("none", "c1", "c2", "c3")
SEED_ENV = "BDPP_SEED"


class EmptyPartitionError(ValueError):
    pass


@dataclass(frozen=True)
class ProxyConfig:
    data_fraction: float = 1.0
    channels: int = 8
    layers: int = 1
    epochs: int = 100

    def __post_init__(self):
        if not 0 < self.data_fraction <= 1:
            raise ValueError(f"data_fraction must be in (0, 1], got {self.data_fraction}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class SearchConfig:
    eta_alpha: float = 1.0
    eta_w: float = 0.1
    batch_size: int | None = None  # None: whole partition per forward chunk
    alpha_reg: AlphaRegularizer = AlphaRegularizer()
    weight_reg: WeightRegularizer = WeightRegularizer()
    proxy: ProxyConfig = ProxyConfig()
    split_fraction_w: float = 0.5
    early_stop: str = "none"
    plateau_window: int = 5
    plateau_tol: float = 1e-3
    init_scale: float = 1.0
    batch_norm: bool = False
    warmup_epochs: int = 0  # epochs that train w only
    seed: int = 0

    def __post_init__(self):
        if not self.eta_alpha > 0 or not self.eta_w > 0:
            raise ValueError("learning rates must be > 0")
        if not 0 < self.split_fraction_w < 1:
            raise ValueError(f"split_fraction_w must be in (0, 1), got {self.split_fraction_w}")
        if self.early_stop not in CRITERIA:
            raise ValueError(f"early_stop must be one of {CRITERIA}, got {self.early_stop!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.plateau_window < 1:
            raise ValueError("plateau_window must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def effective_seed(config: SearchConfig) -> int:
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw not in (None, "") else config.seed


# ---------------------------------------------------------------- data


def partition_data(n: int, data_fraction: float, split_fraction_w: float, seed: int):
    """Seeded subsample of ``data_fraction * n`` indices, split into disjoint
    (w_indices, alpha_indices)."""
    if not 0 < data_fraction <= 1 or not 0 < split_fraction_w < 1:
        raise ValueError("fractions out of range")
    rng = np.random.default_rng([seed, 11])
    keep = int(round(data_fraction * n))
    chosen = rng.permutation(n)[:keep]
    n_w = int(round(split_fraction_w * keep))
    w_idx, a_idx = np.sort(chosen[:n_w]), np.sort(chosen[n_w:])
    if len(w_idx) == 0 or len(a_idx) == 0:
        need = 2.0 / n
        raise EmptyPartitionError(
            f"data_fraction={data_fraction} leaves {keep} of {n} samples, giving an empty "
            f"{'w' if len(w_idx) == 0 else 'alpha'} partition; use data_fraction >= {need:.4g}"
        )
    return w_idx, a_idx


# ---------------------------------------------------------------- early stop


@dataclass
class EarlyStopState:
    num_edges: int
    window: int = 5
    tol: float = 1e-3
    history: list[list[float]] = field(default_factory=list)
    determined: list[bool] = field(default=None)
    fired: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.determined is None:
            self.determined = [False] * self.num_edges

    @property
    def m(self) -> int:
        return sum(self.determined)


def criteria_for(m: int, total: int) -> set[str]:
    out = set()
    if m >= 1:
        out.add("c1")
    if m >= total / 2:
        out.add("c2")
    if m == total:
        out.add("c3")
    return out


def update_early_stop(state: EarlyStopState, stds, epoch: int) -> tuple[EarlyStopState, set[str]]:
    """Record per-edge alpha stds; return the criteria that fire for the first time."""
    stds = [float(s) for s in stds]
    if len(stds) != state.num_edges or not all(np.isfinite(stds)):
        raise ValueError("need one finite std per edge")
    state.history.append(stds)
    if len(state.history) > state.window:
        past = state.history[-1 - state.window]
        for e in range(state.num_edges):
            if not state.determined[e] and stds[e] - past[e] < state.tol:
                state.determined[e] = True
    return state, _fire(state, epoch)


def _fire(state: EarlyStopState, epoch: int) -> set[str]:
    new = criteria_for(state.m, state.num_edges) - set(state.fired)
    for c in new:
        state.fired[c] = epoch
    return new


def criteria_epochs(counts, total: int, start_epoch: int = 0) -> dict[str, int]:
    """First epoch at which each criterion fires for a scripted sequence of
    determined-edge counts."""
    fired: dict[str, int] = {}
    prev = 0
    for i, m in enumerate(counts):
        if m < prev:
            raise ValueError("determined counts must be non-decreasing")
        prev = m
        for c in sorted(criteria_for(m, total)):
            fired.setdefault(c, start_epoch + i)
    return fired


# ---------------------------------------------------------------- trajectory


@dataclass
class TrajectoryRecord:
    epoch: int
    l_train: float
    l_val: float
    l_beta: float
    m: int
    genotype: str
    oracle_score: float | None
    alpha_mean: list[float]
    alpha_median: list[float]
    alpha_std: list[float]


@dataclass
class SearchResult:
    records: list[TrajectoryRecord]
    genotype: Genotype
    arch: ArchParams
    net: Supernet
    fired: dict[str, int]
    stopped_by: str | None
    # per epoch: "descent" or "ascent" of the raw training loss, measured
    # from the applied update
    w_directions: list[str]
    flood_level: float | None


def alpha_statistics(alpha: np.ndarray):
    a = np.asarray(alpha, dtype=np.float64)
    return a.mean(axis=-1), np.median(a, axis=-1), a.std(axis=-1)


# ---------------------------------------------------------------- search


def _chunks(idx: np.ndarray, size: int | None):
    if size is None or size >= len(idx):
        return [idx]
    return [idx[i:i + size] for i in range(0, len(idx), size)]


def _partition_loss(net, alpha, params, x, y, order, batch_size):
    """Mean cross-entropy over the partition, built chunk by chunk in ``order``."""
    n = len(order)
    loss = None
    for chunk in _chunks(order, batch_size):
        logits = supernet_forward(net, alpha, params, x[chunk])
        part = dc.cross_entropy(logits, y[chunk])
        if loss is None and len(chunk) == n:
            return part
        loss = dc.scale(len(chunk) / n, part) if loss is None else dc.scale_add(1.0, loss, len(chunk) / n, part)
    return loss


def search(config: SearchConfig, dataset, bench: TabularBenchmark | None = None,
           net: Supernet | None = None, arch: ArchParams | None = None) -> SearchResult:
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    seed = effective_seed(config)
    proxy = config.proxy
    w_idx, a_idx = partition_data(len(x), proxy.data_fraction, config.split_fraction_w, seed)
    if net is None:
        net = Supernet.init(proxy.channels, proxy.layers, x.shape[1], int(y.max()) + 1, seed=[seed, 3],
                            init_scale=config.init_scale, batch_norm=config.batch_norm)
    else:
        net = net.copy()
    arch = ArchParams.zeros(len(EDGES), len(net.ops)) if arch is None else arch.copy()
    shuffle_rng = np.random.default_rng([seed, 5])
    smooth_rng = np.random.default_rng([seed, 6])

    areg, wreg = config.alpha_reg, config.weight_reg
    flood = wreg.coefficient if wreg.variant == "flooding" else None
    stop = EarlyStopState(len(EDGES), config.plateau_window, config.plateau_tol)
    records: list[TrajectoryRecord] = []
    directions: list[str] = []
    stopped_by = None

    for epoch in range(1, proxy.epochs + 1):
        lam = areg.schedule(epoch)

        # alpha step on the alpha partition, weights frozen
        g = dc.Graph()
        alpha = g.leaf(arch.alpha, kind="alpha")
        order = a_idx[shuffle_rng.permutation(len(a_idx))]
        l_val = _partition_loss(net, alpha, net.params, x, y, order, config.batch_size)
        objective = l_val
        reg_term = alpha_loss(alpha, areg.variant) if areg.variant in LOSS_VARIANTS else None
        if reg_term is not None and lam > 0:
            objective = dc.scale_add(1.0, l_val, lam, reg_term)
        grad = dc.backward(g, objective)[alpha]
        step = config.eta_alpha * grad
        if areg.variant in STEP_VARIANTS:
            step = step + config.eta_alpha * lam * penalty_map(arch.alpha, areg.variant)
        if epoch > config.warmup_epochs:
            arch.alpha = arch.alpha - step

        # w step on the w partition, alpha frozen (perturbed for random smoothing)
        g = dc.Graph()
        params = {k: g.leaf(v, kind="w") for k, v in net.params.items()}
        a_used = smoothing_perturbation(arch.alpha, wreg, smooth_rng)
        order = w_idx[shuffle_rng.permutation(len(w_idx))]
        l_train = _partition_loss(net, a_used, params, x, y, order, config.batch_size)
        effective = weight_regularized_loss(l_train, wreg, params)
        grads = dc.backward(g, effective)
        raw = dc.backward(g, l_train) if flood is not None else grads
        along = 0.0
        for k, leaf in params.items():
            delta = -config.eta_w * grads[leaf]
            along += float(np.sum(delta * raw[leaf]))
            net.params[k] = net.params[k] + delta
        directions.append("ascent" if along > 0 else "descent")

        mean_, median_, std_ = alpha_statistics(arch.alpha)
        update_early_stop(stop, std_, epoch)
        geno = discretize(arch)
        gstr = genotype_to_string(geno, net.ops) if net.ops == OPS else ",".join(map(str, geno.ops))
        records.append(TrajectoryRecord(
            epoch=epoch,
            l_train=float(l_train.data),
            l_val=float(l_val.data),
            l_beta=_beta_value(arch.alpha),
            m=stop.m,
            genotype=gstr,
            oracle_score=bench.evaluate(gstr) if bench is not None else None,
            alpha_mean=mean_.tolist(),
            alpha_median=median_.tolist(),
            alpha_std=std_.tolist(),
        ))
        log.debug("epoch %d l_train=%.4f l_val=%.4f m=%d %s", epoch, l_train.data, l_val.data, stop.m, gstr)
        if config.early_stop != "none" and config.early_stop in stop.fired:
            stopped_by = config.early_stop
            break

    return SearchResult(records, discretize(arch), arch, net, dict(stop.fired), stopped_by, directions, flood)


def _beta_value(alpha: np.ndarray) -> float:
    m = np.max(alpha, axis=-1, keepdims=True)
    return float(np.mean(m[..., 0] + np.log(np.sum(np.exp(alpha - m), axis=-1))))
