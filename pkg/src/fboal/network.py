"""Fully-connected tanh network and output transforms.

Parameters live in one flat float64 vector; ``weights[l]`` and ``biases[l]`` are
views into it, so the optimizer updates a single array and the batched kernels
read the same memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad

SNAPSHOT_MAGIC = "fboal-params"
SNAPSHOT_VERSION = 1


@dataclass
class NetworkParams:
    layer_sizes: tuple[int, ...]
    flat: np.ndarray
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        n = n_parameters(self.layer_sizes)
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.flat.shape}")
        self.weights, self.biases = [], []
        off = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.flat[off : off + fan_in * fan_out].reshape(fan_out, fan_in))
            off += fan_in * fan_out
            self.biases.append(self.flat[off : off + fan_out])
            off += fan_out

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.layer_sizes, self.flat.copy())


def n_parameters(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def _check_sizes(layer_sizes: Sequence[int]) -> None:
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(int(s) < 1 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {list(layer_sizes)}")


def init_network(layer_sizes: Sequence[int], seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    _check_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    params = NetworkParams(tuple(layer_sizes), np.zeros(n_parameters(layer_sizes)))
    for W in params.weights:
        fan_out, fan_in = W.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


@dataclass
class LiftedParams:
    """Network parameters as tape variables (nested lists of :class:`~fboal.autodiff.Var`)."""

    layer_sizes: tuple[int, ...]
    weights: list[list[list[ad.Var]]]
    biases: list[list[ad.Var]]

    def flat_vars(self) -> list[ad.Var]:
        out = []
        for W, b in zip(self.weights, self.biases):
            for row in W:
                out.extend(row)
            out.extend(b)
        return out


def lift_params(params: NetworkParams, tape: ad.Tape) -> LiftedParams:
    """Record every parameter as a leaf; keys are positions in ``params.flat``."""
    weights, biases = [], []
    k = 0
    for W, b in zip(params.weights, params.biases):
        rows = []
        for row in W:
            rows.append([tape.parameter(float(v), k + j) for j, v in enumerate(row)])
            k += len(row)
        weights.append(rows)
        biases.append([tape.parameter(float(v), k + j) for j, v in enumerate(b)])
        k += len(b)
    return LiftedParams(params.layer_sizes, weights, biases)


def forward(params: NetworkParams | LiftedParams, inputs: Sequence):
    """Evaluate the network on one input vector of floats, Vars or Dual2s.

    Hidden layers use tanh, the output layer is linear; the result is the
    single output unit in the same numeric kind as the inputs.
    """
    if len(inputs) != params.layer_sizes[0]:
        raise ValueError(f"expected {params.layer_sizes[0]} inputs, got {len(inputs)}")
    if isinstance(params, NetworkParams):
        weights = [W.tolist() for W in params.weights]
        biases = [b.tolist() for b in params.biases]
    else:
        weights, biases = params.weights, params.biases
    h = list(inputs)
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        z = [ad.vdot(row, h) + bj for row, bj in zip(W, b)]
        h = z if l == last else [ad.tanh(v) for v in z]
    return h[0] if len(h) == 1 else h


@dataclass(frozen=True)
class OutputTransform:
    """Map from raw network output to the predicted field.

    ``burgers_hard`` is ``t (x-1)(x+1) raw - sin(pi x)``, which pins the
    initial condition ``-sin(pi x)`` and zero Dirichlet values at ``x = +-1``.
    """

    kind: str = "identity"

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "burgers_hard"):
            raise ValueError(f"unknown transform {self.kind!r}")

    def coefficients(self, x: np.ndarray, t: np.ndarray) -> dict[str, np.ndarray]:
        """Pointwise ``u = a*raw + b`` factors and their x/t derivatives."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        zero = np.zeros_like(x)
        if self.kind == "identity":
            one = np.ones_like(x)
            return dict(a=one, a_x=zero, a_xx=zero, a_t=zero, a_tt=zero,
                        b=zero, b_x=zero, b_xx=zero, b_t=zero, b_tt=zero)
        s, c = np.sin(np.pi * x), np.cos(np.pi * x)
        return dict(
            a=t * (x * x - 1.0), a_x=2.0 * t * x, a_xx=2.0 * t, a_t=x * x - 1.0, a_tt=zero,
            b=-s, b_x=-np.pi * c, b_xx=np.pi**2 * s, b_t=zero, b_tt=zero,
        )


def apply_transform(transform: OutputTransform, raw, x, time):
    """Apply ``transform`` to a raw output (float, Var or Dual2)."""
    if transform.kind == "identity":
        return raw
    xv = x.value if isinstance(x, ad.Dual2) else x
    xv = xv.value if isinstance(xv, ad.Var) else xv
    if not -1.0 - 1e-12 <= xv <= 1.0 + 1e-12:
        raise ValueError(f"burgers_hard needs x in [-1, 1], got {xv}")
    return time * (x - 1.0) * (x + 1.0) * raw - ad.sin(math.pi * x)


def save_params(params: NetworkParams, path: str | Path) -> None:
    """Write a versioned text snapshot.

    Layout: ``fboal-params 1`` / ``layers n0 n1 ...`` / ``count N`` then one
    value per line, each layer's row-major weights followed by its biases.
    """
    lines = [
        f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}",
        "layers " + " ".join(str(s) for s in params.layer_sizes),
        f"count {params.flat.size}",
    ]
    lines.extend(repr(float(v)) for v in params.flat)
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path: str | Path) -> NetworkParams:
    lines = Path(path).read_text().splitlines()
    magic, version = lines[0].split()
    if magic != SNAPSHOT_MAGIC or int(version) != SNAPSHOT_VERSION:
        raise ValueError(f"not a version-{SNAPSHOT_VERSION} parameter snapshot: {lines[0]!r}")
    sizes = tuple(int(s) for s in lines[1].split()[1:])
    count = int(lines[2].split()[1])
    flat = np.array([float(v) for v in lines[3 : 3 + count]])
    if flat.size != count or count != n_parameters(sizes):
        raise ValueError("snapshot is truncated or inconsistent with its layer sizes")
    return NetworkParams(sizes, flat)
