"""Desk-scale ground truth: a synthetic task to search on and a complete
tabular benchmark to score what the search returns."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .searchspace import EDGES, NUM_NODES, Genotype, all_genotypes, genotype_to_string, string_to_genotype


class BenchmarkError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


# ---------------------------------------------------------------- synthetic task


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian classes spaced along one planted direction.

    The direction is orthogonal to the all-ones vector, so the channel mean of
    the raw input carries no class information: a network can only classify
    after a learned linear map has rotated the signal onto the mean.
    """

    seed: int = 0
    n: int = 600
    input_dim: int = 8
    num_classes: int = 3
    noise: float = 1.0
    separation: float = 4.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.input_dim < 2:
            raise ValueError("input_dim must be >= 2")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.noise <= 0:
            raise ValueError("noise must be > 0")

    def direction(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 1])
        u = rng.standard_normal(self.input_dim)
        u -= u.mean()
        return u / np.linalg.norm(u)

    def class_means(self) -> np.ndarray:
        offsets = (np.arange(self.num_classes) - (self.num_classes - 1) / 2.0) * self.separation * self.noise
        return offsets[:, None] * self.direction()[None, :]

    def generate(self) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, 2])
        y = rng.permutation(np.arange(self.n) % self.num_classes)
        x = self.class_means()[y] + self.noise * rng.standard_normal((self.n, self.input_dim))
        return x, y.astype(np.int64)


# ---------------------------------------------------------------- benchmark rule

# standalone value of an operation on an edge that carries information
OP_VALUE = {"none": 0.0, "skip": 0.4, "avg": 0.3, "lin_relu": 0.8, "lin": 1.0}
NOISE_AMPLITUDE = 0.01


def _reachability(names: tuple[str, ...]) -> tuple[list[bool], list[bool]]:
    live = [n != "none" for n in names]
    fwd = [True] + [False] * (NUM_NODES - 1)
    for e, (s, t) in enumerate(EDGES):  # EDGES is topologically ordered by target
        if live[e] and fwd[s]:
            fwd[t] = True
    bwd = [False] * (NUM_NODES - 1) + [True]
    for e, (s, t) in sorted(enumerate(EDGES), key=lambda it: -it[1][1]):
        if live[e] and bwd[t]:
            bwd[s] = True
    return fwd, bwd


def rule_quality(names: tuple[str, ...]) -> float:
    """Deterministic part of the benchmark score, in [0, 1]."""
    fwd, bwd = _reachability(names)
    if not fwd[NUM_NODES - 1]:
        return 0.0
    total = 0.0
    for e, (s, t) in enumerate(EDGES):
        if fwd[s] and bwd[t]:
            total += OP_VALUE[names[e]]
    q = total / len(EDGES)
    if all(n == "skip" for n in names):
        q *= 0.5
    if sum(n == "none" for n in names) > len(EDGES) // 2:
        q *= 0.5
    return q


@dataclass
class TabularBenchmark:
    scores: dict[str, float]
    provenance: str = "generated"

    def __len__(self):
        return len(self.scores)

    def evaluate(self, genotype: Genotype | str) -> float:
        key = genotype if isinstance(genotype, str) else genotype_to_string(genotype)
        try:
            return self.scores[key]
        except KeyError:
            raise BenchmarkError(f"genotype not in benchmark: {key}") from None

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.scores):
            h.update(f"{k},{self.scores[k]!r}\n".encode())
        return h.hexdigest()

    # csv ----------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("genotype,score\n")
        for k in sorted(self.scores):
            buf.write(f"{k},{self.scores[k]:.12f}\n")
        return buf.getvalue()

    def write_csv(self, path: str | Path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path) -> TabularBenchmark:
        text = Path(path).read_text()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["genotype", "score"]:
            raise ValueError(f"{path}: line 1: expected header 'genotype,score', got {header}")
        scores = {}
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 fields, got {len(rec)}")
            string_to_genotype(rec[0])
            try:
                scores[rec[0]] = float(rec[1])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad score {rec[1]!r}") from None
        return cls(scores, provenance=f"imported({path})")


def generate_benchmark(seed: int = 0) -> TabularBenchmark:
    """Score all 5^6 genotypes by :func:`rule_quality` plus seeded noise.

    The all-``none`` cell scores exactly 0. Everything else lands in
    [0.05, 0.96); noise is far smaller than the gap under the rule's best.
    """
    rng = np.random.default_rng([seed, 7])
    keys, scores = [], []
    for g in all_genotypes():
        names = g.names()
        keys.append(genotype_to_string(g))
        if all(n == "none" for n in names):
            scores.append(0.0)
            rng.random()
            continue
        scores.append(0.05 + 0.9 * rule_quality(names) + NOISE_AMPLITUDE * rng.random())
    s = np.round(np.array(scores), 12)
    top = np.flatnonzero(s == s.max())
    # tie perturbation: keep the first of equal maxima strictly on top
    for i in top[1:]:
        s[i] = np.round(s[i] - 1e-12, 12)
    return TabularBenchmark(dict(zip(keys, s.tolist())), provenance=f"generated({seed})")


def brute_force_best(bench: TabularBenchmark, require_complete: bool | None = None) -> tuple[Genotype, float]:
    """Exhaustive argmax; ties go to the lexicographically smallest string.

    Generated tables must cover every genotype. Imported tables define their
    own universe unless ``require_complete`` says otherwise.
    """
    if not bench.scores:
        raise BenchmarkError("benchmark is empty")
    if require_complete is None:
        require_complete = bench.provenance.startswith("generated")
    missing = []
    if require_complete:
        missing = [k for k in map(genotype_to_string, all_genotypes()) if k not in bench.scores]
    if missing:
        shown = ", ".join(missing[:5])
        more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise BenchmarkError(f"benchmark incomplete, missing {len(missing)} genotypes: {shown}{more}")
    best_key, best = None, -np.inf
    for k in sorted(bench.scores):
        v = bench.scores[k]
        if v > best:
            best_key, best = k, v
    return string_to_genotype(best_key), best


def regret(bench: TabularBenchmark, genotype: Genotype | str) -> float:
    return brute_force_best(bench)[1] - bench.evaluate(genotype)
