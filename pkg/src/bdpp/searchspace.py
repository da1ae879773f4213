"""Cell search space: operations, architecture parameters, supernet, genotypes.

The cell is the 4-node / 6-edge DAG of NAS-Bench-201 with vector-scale
stand-ins for its five operations. Architecture parameters are shared by all
stacked cells, one row per edge.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

OPS: tuple[str, ...] = ("none", "skip", "lin", "lin_relu", "avg")
PARAMETRIC = frozenset({"lin", "lin_relu"})

# (source, target) in the fixed serialisation order
EDGES: tuple[tuple[int, int], ...] = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
NUM_NODES = 4

# fixed seed for the frozen input projection used when width != input_dim
_STEM_SEED = 20220314


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


# ---------------------------------------------------------------- arch params


@dataclass
class ArchParams:
    alpha: np.ndarray

    @classmethod
    def zeros(cls, num_edges: int = len(EDGES), num_ops: int = len(OPS)) -> ArchParams:
        return cls(np.zeros((num_edges, num_ops)))

    def copy(self) -> ArchParams:
        return ArchParams(self.alpha.copy())

    @property
    def beta(self) -> np.ndarray:
        return beta_of_alpha(self)


def beta_of_alpha(arch: ArchParams | np.ndarray) -> np.ndarray:
    a = arch.alpha if isinstance(arch, ArchParams) else np.asarray(arch, dtype=np.float64)
    z = a - np.max(a, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


# ---------------------------------------------------------------- genotypes


@dataclass(frozen=True)
class Genotype:
    ops: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(int(i) for i in self.ops))

    def names(self, opset: tuple[str, ...] = OPS) -> tuple[str, ...]:
        return tuple(opset[i] for i in self.ops)


def discretize(arch: ArchParams | np.ndarray) -> Genotype:
    """Per-edge argmax; ``np.argmax`` returns the lowest index among ties."""
    a = arch.alpha if isinstance(arch, ArchParams) else np.asarray(arch)
    return Genotype(tuple(int(i) for i in np.argmax(a, axis=-1)))


def all_genotypes(num_ops: int = len(OPS), num_edges: int = len(EDGES)):
    for ops in itertools.product(range(num_ops), repeat=num_edges):
        yield Genotype(ops)


def genotype_to_string(g: Genotype, opset: tuple[str, ...] = OPS) -> str:
    if len(g.ops) != len(EDGES):
        raise ValueError(f"genotype needs {len(EDGES)} edges, got {len(g.ops)}")
    parts = []
    k = 0
    for target in range(1, NUM_NODES):
        cells = []
        for source in range(target):
            cells.append(f"{opset[g.ops[k]]}~{source}")
            k += 1
        parts.append("|" + "|".join(cells) + "|")
    return "+".join(parts)


def string_to_genotype(s: str, opset: tuple[str, ...] = OPS) -> Genotype:
    index = {name: i for i, name in enumerate(opset)}
    ops: list[int] = []
    pos = 0

    def expect(ch: str):
        nonlocal pos
        if pos >= len(s) or s[pos] != ch:
            found = repr(s[pos]) if pos < len(s) else "end of string"
            raise ParseError(f"expected {ch!r}, found {found}", pos)
        pos += 1

    for target in range(1, NUM_NODES):
        if target > 1:
            expect("+")
        expect("|")
        for source in range(target):
            start = pos
            while pos < len(s) and s[pos] not in "~|+":
                pos += 1
            name = s[start:pos]
            if name not in index:
                raise ParseError(f"unknown operation {name!r}", start)
            expect("~")
            start = pos
            while pos < len(s) and s[pos].isdigit():
                pos += 1
            if s[start:pos] != str(source):
                raise ParseError(f"expected input node {source}", start)
            expect("|")
            ops.append(index[name])
    if pos != len(s):
        raise ParseError("trailing characters", pos)
    return Genotype(tuple(ops))


# ---------------------------------------------------------------- supernet


def _stem_matrix(width: int, input_dim: int) -> np.ndarray:
    if width == input_dim:
        return np.eye(width)
    rng = np.random.default_rng(_STEM_SEED)
    return rng.standard_normal((width, input_dim)) / np.sqrt(input_dim)


@dataclass
class Supernet:
    """Stack of ``depth`` cells at ``width`` channels, then channel mean-pool
    and a linear classifier.

    Inputs of dimension ``input_dim`` enter through a frozen projection
    (identity when ``input_dim == width``), so the proxy width can change
    without touching the data.
    """

    width: int
    depth: int
    input_dim: int
    num_classes: int
    ops: tuple[str, ...] = OPS
    params: dict[str, np.ndarray] = field(default_factory=dict)
    stem: np.ndarray = field(default=None, repr=False)
    batch_norm: bool = False

    @classmethod
    def init(cls, width, depth, input_dim, num_classes, seed, ops=OPS, init_scale=1.0,
             batch_norm=False) -> Supernet:
        if not 1 <= depth:
            raise ValueError(f"depth must be >= 1, got {depth}")
        if not 1 <= width:
            raise ValueError(f"width must be >= 1, got {width}")
        if len(set(ops)) != len(ops) or not ops:
            raise ValueError("operation names must be unique and non-empty")
        rng = np.random.default_rng(seed)
        params = {}
        for layer in range(depth):
            for e in range(len(EDGES)):
                for op in ops:
                    if op in PARAMETRIC:
                        key = f"L{layer}.e{e}.{op}"
                        params[key + ".W"] = init_scale * rng.standard_normal((width, width)) / np.sqrt(width)
                        params[key + ".b"] = np.zeros(width)
        params["head.W"] = rng.standard_normal((num_classes, 1))
        params["head.b"] = np.zeros(num_classes)
        return cls(width, depth, input_dim, num_classes, tuple(ops), params, _stem_matrix(width, input_dim),
                   batch_norm)

    @property
    def num_edges(self) -> int:
        return len(EDGES)

    def num_weights(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> Supernet:
        return Supernet(
            self.width, self.depth, self.input_dim, self.num_classes, self.ops,
            {k: v.copy() for k, v in self.params.items()}, self.stem.copy(), self.batch_norm,
        )

    def fingerprint(self) -> str:
        """Hash of the structure (not the values) of the supernet."""
        desc = repr((self.width, self.depth, self.input_dim, self.num_classes, self.ops, self.batch_norm,
                     sorted((k, v.shape) for k, v in self.params.items())))
        return hashlib.sha256(desc.encode()).hexdigest()[:16]


def expected_num_weights(depth: int, width: int, num_ops_parametric: int, num_classes: int) -> int:
    return depth * len(EDGES) * num_ops_parametric * (width * width + width) + 2 * num_classes


def _apply_op(name: str, x: Tensor, p: dict[str, Tensor], key: str, width: int, bn: bool = False) -> Tensor | None:
    if name == "none":
        return None
    if name == "skip":
        return x
    if name in PARAMETRIC:
        z = dc.linear(x, p[key + ".W"], p[key + ".b"])
        if bn:
            z = dc.batch_norm(z)
        return z if name == "lin" else dc.relu(z)
    if name == "avg":
        return dc.linear(x, dc.constant(np.full((width, width), 1.0 / width)))
    raise ValueError(f"unknown operation {name!r}")


def mixed_edge_forward(net: Supernet, x: Tensor, edge: int, beta: Tensor, params: dict[str, Tensor],
                       layer: int = 0) -> Tensor:
    """Softmax-weighted sum of every candidate operation on one edge."""
    if x.shape[-1] != net.width:
        raise dc.ShapeError("mixed_edge_forward", x.shape, (net.width,))
    outs = []
    for name in net.ops:
        y = _apply_op(name, x, params, f"L{layer}.e{edge}.{name}", net.width, net.batch_norm)
        outs.append(dc.constant(np.zeros(x.shape)) if y is None else y)
    return dc.weighted_sum(dc.row(beta, edge), outs)


def supernet_forward(net: Supernet, alpha: Tensor | np.ndarray, params: dict[str, Tensor | np.ndarray],
                     x: np.ndarray) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise dc.ShapeError("supernet_forward", x.shape, (net.input_dim,))
    alpha = alpha if isinstance(alpha, Tensor) else dc.constant(alpha)
    if alpha.shape != (len(EDGES), len(net.ops)):
        raise dc.ShapeError("supernet_forward", alpha.shape, (len(EDGES), len(net.ops)))
    params = {k: (v if isinstance(v, Tensor) else dc.constant(v)) for k, v in params.items()}
    beta = dc.softmax(alpha)
    h = dc.constant(x @ net.stem.T)
    for layer in range(net.depth):
        nodes = [h]
        for target in range(1, NUM_NODES):
            acc = None
            for e, (source, t) in enumerate(EDGES):
                if t != target:
                    continue
                y = mixed_edge_forward(net, nodes[source], e, beta, params, layer)
                acc = y if acc is None else dc.add(acc, y)
            nodes.append(acc)
        h = nodes[-1]
    return dc.linear(dc.mean_pool(h), params["head.W"], params["head.b"])
