"""Scalar automatic differentiation.

Two cooperating pieces:

* :class:`Tape` / :class:`Var` -- reverse mode over scalars. Every operation on a
  ``Var`` appends a node (opcode, parents, local partials) to its tape, and
  :func:`grad` sweeps the tape backwards.
* :class:`Dual2` -- truncated second-order forward mode along one direction.
  Components may be plain floats or ``Var`` objects, so second input
  derivatives such as ``u_xx`` stay differentiable with respect to network
  parameters.

This engine is the reference path. Training uses the batched kernels in
:mod:`fboal.kernels`, which are checked against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence


class TapeStructureError(RuntimeError):
    """Raised when a tape is not a DAG in recording order."""


@dataclass
class TapeNode:
    opcode: str
    parents: tuple[int, ...]
    partials: tuple[float, ...]
    const: float = 0.0


class Tape:
    """Append-only record of scalar operations.

    Node ``i`` may only reference parents with index ``< i``; recording order is
    therefore a topological order, which is what :func:`grad` relies on.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self.values: list[float] = []
        self.param_ids: dict[int, object] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, opcode, value, parents=(), partials=(), const=0.0) -> "Var":
        # merge repeated parents so each leaf appears once per node
        if len(parents) > 1 and len(set(parents)) != len(parents):
            merged: dict[int, float] = {}
            for p, d in zip(parents, partials):
                merged[p] = merged.get(p, 0.0) + d
            parents, partials = tuple(merged), tuple(merged.values())
        self.nodes.append(TapeNode(opcode, tuple(parents), tuple(partials), const))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1, value)

    def constant(self, value: float) -> "Var":
        return self._push("const", float(value), const=float(value))

    def parameter(self, value: float, key: object = None) -> "Var":
        v = self._push("leaf", float(value), const=float(value))
        self.param_ids[v.index] = v.index if key is None else key
        return v

    def replay(self, leaf_values: dict[int, float] | None = None) -> list[float]:
        """Recompute every node value from its opcode in recording order."""
        vals: list[float] = []
        for i, node in enumerate(self.nodes):
            p = [vals[j] for j in node.parents]
            op = node.opcode
            if op in ("const", "leaf"):
                v = node.const
                if leaf_values is not None and i in leaf_values:
                    v = float(leaf_values[i])
            elif op == "add":
                v = p[0] + p[1] if len(p) == 2 else 2.0 * p[0]
            elif op == "sub":
                v = p[0] - p[1] if len(p) == 2 else 0.0
            elif op == "mul":
                v = p[0] * p[1] if len(p) == 2 else p[0] * p[0]
            elif op == "div":
                v = p[0] / p[1] if len(p) == 2 else 1.0
            elif op == "neg":
                v = -p[0]
            elif op == "scale":
                v = node.const * p[0]
            elif op == "shift":
                v = node.const + p[0]
            elif op == "powi":
                v = p[0] ** int(node.const)
            elif op == "dot":
                v = _replay_dot(node, vals)
            elif op in _UNARY:
                v = _UNARY[op][0](p[0])
            else:  # pragma: no cover - guarded by construction
                raise TapeStructureError(f"unknown opcode {op!r}")
            vals.append(v)
        return vals


def _replay_dot(node: TapeNode, vals: list[float]) -> float:
    # dot nodes keep (a_i, b_i) pairs in const-encoded layout; see vdot
    pairs = node.const
    return math.fsum(vals[a] * vals[b] for a, b in pairs) if pairs else 0.0  # type: ignore[union-attr]


class Var:
    """A scalar living on a :class:`Tape`."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: Tape, index: int, value: float) -> None:
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self) -> str:
        return f"Var({self.value!r}, node={self.index})"

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if not isinstance(other, Var):
            return self.tape._push("shift", self.value + other, (self.index,), (1.0,), float(other))
        o = self._lift(other)
        return self.tape._push("add", self.value + o.value, (self.index, o.index), (1.0, 1.0))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if not isinstance(other, Var):
            return self.tape._push("shift", self.value - other, (self.index,), (1.0,), -float(other))
        o = self._lift(other)
        return self.tape._push("sub", self.value - o.value, (self.index, o.index), (1.0, -1.0))

    def __rsub__(self, other):
        neg = -self
        return neg + other

    def __mul__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if not isinstance(other, Var):
            c = float(other)
            return self.tape._push("scale", self.value * c, (self.index,), (c,), c)
        o = self._lift(other)
        return self.tape._push(
            "mul", self.value * o.value, (self.index, o.index), (o.value, self.value)
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if not isinstance(other, Var):
            return self * (1.0 / float(other))
        o = self._lift(other)
        q = self.value / o.value
        return self.tape._push("div", q, (self.index, o.index), (1.0 / o.value, -q / o.value))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        return self.tape._push("neg", -self.value, (self.index,), (-1.0,))

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported")
        if n == 0:
            return self.tape.constant(1.0)
        d = n * self.value ** (n - 1)
        return self.tape._push("powi", self.value**n, (self.index,), (d,), float(n))

    def _unary(self, op: str) -> "Var":
        f, df = _UNARY[op]
        return self.tape._push(op, f(self.value), (self.index,), (df(self.value),))


def _sech2(x: float) -> float:
    return 1.0 - math.tanh(x) ** 2


_UNARY: dict[str, tuple[Callable[[float], float], Callable[[float], float]]] = {
    "tanh": (math.tanh, _sech2),
    "sin": (math.sin, math.cos),
    "cos": (math.cos, lambda x: -math.sin(x)),
    "exp": (math.exp, math.exp),
    "cosh": (math.cosh, math.sinh),
    "sinh": (math.sinh, math.cosh),
    "log": (math.log, lambda x: 1.0 / x),
}


def vdot(ws: Sequence, hs: Sequence):
    """Sum of products ``sum(w*h)`` recorded as a single tape node.

    Works on floats, Vars (any mix) and Dual2 right-hand operands.
    """
    if any(isinstance(h, Dual2) for h in hs):
        hs = [Dual2._coerce(h) for h in hs]
        return Dual2(
            vdot(ws, [h.value for h in hs]),
            vdot(ws, [h.d1 for h in hs]),
            vdot(ws, [h.d2 for h in hs]),
        )
    tape = None
    for v in (*ws, *hs):
        if isinstance(v, Var):
            tape = v.tape
            break
    if tape is None:
        return math.fsum(w * h for w, h in zip(ws, hs))
    parents: list[int] = []
    partials: list[float] = []
    pairs = []
    products = []
    for w, h in zip(ws, hs):
        wv = w.value if isinstance(w, Var) else float(w)
        hv = h.value if isinstance(h, Var) else float(h)
        products.append(wv * hv)
        if isinstance(w, Var) and isinstance(h, Var):
            parents += [w.index, h.index]
            partials += [hv, wv]
            pairs.append((w.index, h.index))
        elif isinstance(w, Var):
            c = tape.constant(hv)
            parents.append(w.index)
            partials.append(hv)
            pairs.append((w.index, c.index))
        elif isinstance(h, Var):
            c = tape.constant(wv)
            parents.append(h.index)
            partials.append(wv)
            pairs.append((c.index, h.index))
    out = tape._push("dot", math.fsum(products), tuple(parents), tuple(partials))
    tape.nodes[out.index].const = tuple(pairs)  # type: ignore[assignment]
    return out


def grad(loss: Var, params: Sequence[Var] | None = None) -> dict[object, float]:
    """Reverse sweep: d(loss)/d(parameter) for every parameter leaf.

    Parameters that ``loss`` does not depend on get 0. With ``params`` given,
    only those leaves are reported (keyed by their parameter id).
    """
    if not isinstance(loss, Var):
        raise TypeError("loss must be a Var recorded on a tape")
    tape = loss.tape
    adj = [0.0] * (loss.index + 1)
    adj[loss.index] = 1.0
    nodes = tape.nodes
    for i in range(loss.index, -1, -1):
        a = adj[i]
        node = nodes[i]
        for p in node.parents:
            if p >= i:
                raise TapeStructureError(f"node {i} references node {p}: cycle or forward edge")
        if a == 0.0:
            continue
        for p, d in zip(node.parents, node.partials):
            adj[p] += a * d
    leaves = tape.param_ids if params is None else {v.index: tape.param_ids.get(v.index, v.index) for v in params}
    return {key: (adj[idx] if idx <= loss.index else 0.0) for idx, key in leaves.items()}


class Dual2:
    """Value with first and second derivative along a single direction.

    Propagation follows the second-order chain rule
    ``(f o g)'' = f''(g) g'^2 + f'(g) g''``.
    """

    __slots__ = ("value", "d1", "d2")

    def __init__(self, value, d1=0.0, d2=0.0) -> None:
        self.value = value
        self.d1 = d1
        self.d2 = d2

    def __repr__(self) -> str:
        return f"Dual2({self.value!r}, {self.d1!r}, {self.d2!r})"

    def __iter__(self):
        return iter((self.value, self.d1, self.d2))

    @staticmethod
    def _coerce(x) -> "Dual2":
        return x if isinstance(x, Dual2) else Dual2(x, 0.0, 0.0)

    def __add__(self, other):
        o = Dual2._coerce(other)
        return Dual2(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual2._coerce(other)
        return Dual2(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        return Dual2._coerce(other) - self

    def __neg__(self):
        return Dual2(-self.value, -self.d1, -self.d2)

    def __mul__(self, other):
        if not isinstance(other, Dual2):
            return Dual2(self.value * other, self.d1 * other, self.d2 * other)
        a, b = self, other
        return Dual2(
            a.value * b.value,
            a.d1 * b.value + a.value * b.d1,
            a.d2 * b.value + 2.0 * (a.d1 * b.d1) + a.value * b.d2,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Dual2):
            return self * (1.0 / other)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return Dual2._coerce(other) * self.reciprocal()

    def __pow__(self, n: int):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported")
        if n == 0:
            return Dual2(1.0, 0.0, 0.0)
        v = self.value
        f = v**n
        f1 = n * v ** (n - 1)
        f2 = n * (n - 1) * v ** (n - 2) if n >= 2 else 0.0
        return self._chain(f, f1, f2)

    def _chain(self, f, f1, f2) -> "Dual2":
        return Dual2(f, f1 * self.d1, f2 * (self.d1 * self.d1) + f1 * self.d2)

    def reciprocal(self) -> "Dual2":
        v = self.value
        r = 1.0 / v
        return self._chain(r, -(r * r), 2.0 * (r * r * r))

    def tanh(self) -> "Dual2":
        th = tanh(self.value)
        s1 = 1.0 - th * th
        return self._chain(th, s1, -2.0 * th * s1)

    def sin(self) -> "Dual2":
        s, c = sin(self.value), cos(self.value)
        return self._chain(s, c, -s)

    def cos(self) -> "Dual2":
        s, c = sin(self.value), cos(self.value)
        return self._chain(c, -s, -c)

    def exp(self) -> "Dual2":
        e = exp(self.value)
        return self._chain(e, e, e)

    def cosh(self) -> "Dual2":
        ch, sh = cosh(self.value), sinh(self.value)
        return self._chain(ch, sh, ch)

    def sinh(self) -> "Dual2":
        ch, sh = cosh(self.value), sinh(self.value)
        return self._chain(sh, ch, sh)


def _dispatch(name: str):
    fn = getattr(math, name)

    def f(x):
        if isinstance(x, Dual2):
            return getattr(x, name)()
        if isinstance(x, Var):
            return x._unary(name)
        return fn(x)

    f.__name__ = name
    f.__doc__ = f"``{name}`` for floats, Var and Dual2 operands."
    return f


tanh = _dispatch("tanh")
sin = _dispatch("sin")
cos = _dispatch("cos")
exp = _dispatch("exp")
cosh = _dispatch("cosh")
sinh = _dispatch("sinh")


def lift_input(x, seed_d1: float = 1.0) -> Dual2:
    """Lift an input coordinate; ``seed_d1`` of 1 marks it as the direction."""
    return Dual2(x, float(seed_d1), 0.0)


def directional_derivs(f: Callable, point: Sequence, direction_index: int):
    """Return ``(f, df/dxi, d2f/dxi2)`` at ``point`` along coordinate ``direction_index``.

    ``f`` receives a list of :class:`Dual2` and must return a Dual2 (or a
    constant, which has zero derivatives).
    """
    if not 0 <= direction_index < len(point):
        raise IndexError(f"direction_index {direction_index} out of range for {len(point)} inputs")
    args = [lift_input(p, 1.0 if i == direction_index else 0.0) for i, p in enumerate(point)]
    out = f(args)
    if not isinstance(out, Dual2):
        return out, 0.0, 0.0
    return out.value, out.d1, out.d2
