"""Reverse-mode automatic differentiation over dense float64 arrays.

Every computation is recorded on an explicit :class:`Tape`: an ordered list
of nodes, each holding an op kind, the ids of its input nodes, and the value
computed for it. Ops evaluate eagerly as the graph is built (so shape errors
surface at the call site), and a finished tape can be replayed with
:func:`forward_eval` and differentiated with :func:`backward`.

The op set is deliberately small: dense matmul, broadcasting add/mul, relu,
strided conv2d (patch-flattening + matmul), global average pooling,
per-channel scale-shift normalization, row L2-normalization, log-sum-exp,
sum, mean, and concat. Everything runs in float64.
"""

from __future__ import annotations

import numpy as np

NORM_EPS = 1e-12

SUPPORTED_OPS = frozenset({
    "leaf", "const", "add", "mul", "matmul", "relu", "conv2d",
    "global_avg_pool", "channel_norm", "l2norm_rows", "logsumexp",
    "sum", "mean", "concat",
})


def l2_normalize_rows(m: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Scale each row of a 2-D matrix to unit Euclidean norm.

    Rows with norm <= eps cannot be normalized and raise, identifying the
    offending row.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"l2_normalize_rows expects a 2-D matrix, got shape {m.shape}")
    norms = np.sqrt(np.sum(m * m, axis=1))
    bad = np.flatnonzero(norms <= eps)
    if bad.size:
        raise ValueError(f"degenerate embedding row {int(bad[0])}")
    return m / norms[:, None]


def channel_batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and (population) variance of an (N, C, H, W) batch."""
    mean = np.mean(x, axis=(0, 2, 3))
    var = np.mean((x - mean[None, :, None, None]) ** 2, axis=(0, 2, 3))
    return mean, var


class Node:
    """One recorded operation: op kind, input node ids, and its value."""

    __slots__ = ("idx", "op", "inputs", "value", "name", "trainable", "attrs")

    def __init__(self, idx, op, inputs, value, name=None, trainable=False, attrs=None):
        self.idx = idx
        self.op = op
        self.inputs = inputs
        self.value = value
        self.name = name
        self.trainable = trainable
        self.attrs = attrs or {}

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Node({self.idx}, {self.op}{tag}, shape={tuple(self.value.shape)})"


class Tape:
    """Ordered, replayable record of a computation.

    Nodes are appended in construction order, so inputs always precede their
    consumers. Named leaves are the only override points for replay; consts
    are frozen.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.outputs: dict[str, int] = {}
        self._leaf_ids: dict[str, int] = {}

    # -- graph construction ------------------------------------------------

    def leaf(self, name: str, value, trainable: bool = False) -> Node:
        if name in self._leaf_ids:
            raise ValueError(f"duplicate leaf name {name!r}")
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite values in leaf {name!r}")
        node = self._append("leaf", [], value, name=name, trainable=trainable)
        self._leaf_ids[name] = node.idx
        return node

    def const(self, value) -> Node:
        return self._append("const", [], np.asarray(value, dtype=np.float64))

    def add(self, a: Node, b: Node) -> Node:
        return self._op("add", [a, b])

    def mul(self, a: Node, b: Node) -> Node:
        return self._op("mul", [a, b])

    def matmul(self, a: Node, b: Node, trans_a: bool = False, trans_b: bool = False) -> Node:
        return self._op("matmul", [a, b], trans_a=trans_a, trans_b=trans_b)

    def relu(self, a: Node) -> Node:
        return self._op("relu", [a])

    def conv2d(self, x: Node, kernel: Node, stride: int = 1, padding: int = 0) -> Node:
        if stride < 1 or padding < 0:
            raise ValueError(f"invalid conv2d stride={stride} padding={padding}")
        return self._op("conv2d", [x, kernel], stride=stride, padding=padding)

    def global_avg_pool(self, x: Node) -> Node:
        return self._op("global_avg_pool", [x])

    def channel_norm(self, x: Node, gamma: Node, beta: Node, training: bool,
                     running_mean: np.ndarray | None = None,
                     running_var: np.ndarray | None = None,
                     eps: float = 1e-5) -> Node:
        """Scale-shift normalization over per-channel statistics.

        Training mode normalizes with statistics of the current batch; eval
        mode uses the running averages supplied at construction time.
        """
        if not training and (running_mean is None or running_var is None):
            raise ValueError("eval-mode channel_norm requires running statistics")
        attrs = {"training": training, "eps": eps}
        if not training:
            attrs["running_mean"] = np.asarray(running_mean, dtype=np.float64)
            attrs["running_var"] = np.asarray(running_var, dtype=np.float64)
        return self._op("channel_norm", [x, gamma, beta], **attrs)

    def l2norm_rows(self, a: Node) -> Node:
        return self._op("l2norm_rows", [a])

    def logsumexp(self, a: Node, axis: int) -> Node:
        return self._op("logsumexp", [a], axis=axis)

    def sum(self, a: Node, axis: int | None = None) -> Node:
        return self._op("sum", [a], axis=axis)

    def mean(self, a: Node, axis: int | None = None) -> Node:
        return self._op("mean", [a], axis=axis)

    def concat(self, parts: list[Node], axis: int = 0) -> Node:
        if not parts:
            raise ValueError("concat needs at least one input")
        return self._op("concat", list(parts), axis=axis)

    def mark_output(self, name: str, node: Node) -> None:
        self.outputs[name] = node.idx

    # -- access ------------------------------------------------------------

    def leaf_value(self, name: str) -> np.ndarray:
        return self.nodes[self._leaf_ids[name]].value

    def leaf_names(self, trainable_only: bool = False) -> list[str]:
        names = []
        for name, idx in self._leaf_ids.items():
            if not trainable_only or self.nodes[idx].trainable:
                names.append(name)
        return names

    def output_value(self, name: str) -> np.ndarray:
        return self.nodes[self.outputs[name]].value

    # -- internals ---------------------------------------------------------

    def _append(self, op, inputs, value, name=None, trainable=False, attrs=None):
        node = Node(len(self.nodes), op, inputs, value, name, trainable, attrs)
        self.nodes.append(node)
        return node

    def _op(self, op, input_nodes, **attrs):
        ids = []
        for n in input_nodes:
            if not isinstance(n, Node) or self.nodes[n.idx] is not n:
                raise ValueError(f"op {op!r} received an input that is not on this tape")
            ids.append(n.idx)
        node = Node(len(self.nodes), op, ids, None, attrs=attrs)
        node.value = _compute(node, [self.nodes[i].value for i in ids])
        self.nodes.append(node)
        return node


# -- forward kernels -------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def _conv_geometry(node: Node, x: np.ndarray, k: np.ndarray):
    if x.ndim != 4 or k.ndim != 4:
        raise ValueError(f"conv2d at node {node.idx} needs 4-D input and kernel, "
                         f"got {x.shape} and {k.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = k.shape
    if kc != c:
        raise ValueError(f"conv2d at node {node.idx}: kernel expects {kc} channels, input has {c}")
    s, p = node.attrs["stride"], node.attrs["padding"]
    oh = (h + 2 * p - kh) // s + 1
    ow = (w + 2 * p - kw) // s + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d at node {node.idx}: kernel {kh}x{kw} too large for "
                         f"input {h}x{w} with padding {p}")
    return n, c, f, kh, kw, s, p, oh, ow


def _logsumexp_nd(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _compute(node: Node, vals: list[np.ndarray]) -> np.ndarray:
    op = node.op
    if op == "add" or op == "mul":
        a, b = vals
        try:
            return a + b if op == "add" else a * b
        except ValueError:
            raise ValueError(f"{op} shape mismatch at node {node.idx}: {a.shape} vs {b.shape}")
    if op == "matmul":
        a, b = vals
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError(f"matmul at node {node.idx}: expects 2-D operands, "
                             f"got {a.shape} and {b.shape}")
        at = a.T if node.attrs["trans_a"] else a
        bt = b.T if node.attrs["trans_b"] else b
        if at.shape[1] != bt.shape[0]:
            raise ValueError(f"matmul shape mismatch at node {node.idx}: "
                             f"{at.shape} @ {bt.shape}")
        return at @ bt
    if op == "relu":
        return np.maximum(vals[0], 0.0)
    if op == "conv2d":
        x, k = vals
        n, c, f, kh, kw, s, p, oh, ow = _conv_geometry(node, x, k)
        cols = _im2col(_pad2d(x, p), kh, kw, s, oh, ow)
        cols2 = cols.reshape(n, c * kh * kw, oh * ow)
        out = np.matmul(k.reshape(f, c * kh * kw)[None], cols2)
        return out.reshape(n, f, oh, ow)
    if op == "global_avg_pool":
        x = vals[0]
        if x.ndim != 4:
            raise ValueError(f"global_avg_pool at node {node.idx}: expects 4-D input, got {x.shape}")
        return np.mean(x, axis=(2, 3))
    if op == "channel_norm":
        x, gamma, beta = vals
        if x.ndim != 4:
            raise ValueError(f"channel_norm at node {node.idx}: expects 4-D input, got {x.shape}")
        if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ValueError(f"channel_norm at node {node.idx}: scale/shift must have "
                             f"shape ({x.shape[1]},)")
        if node.attrs["training"]:
            mean, var = channel_batch_stats(x)
        else:
            mean, var = node.attrs["running_mean"], node.attrs["running_var"]
        inv = 1.0 / np.sqrt(var + node.attrs["eps"])
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        return gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    if op == "l2norm_rows":
        return l2_normalize_rows(vals[0])
    if op == "logsumexp":
        return _logsumexp_nd(vals[0], node.attrs["axis"])
    if op == "sum":
        return np.asarray(np.sum(vals[0], axis=node.attrs["axis"]))
    if op == "mean":
        return np.asarray(np.mean(vals[0], axis=node.attrs["axis"]))
    if op == "concat":
        return np.concatenate(vals, axis=node.attrs["axis"])
    raise ValueError(f"unsupported op kind {op!r} at node {node.idx}")


# -- replay and differentiation ---------------------------------------------


def _evaluate(tape: Tape, overrides: dict[str, np.ndarray] | None) -> list[np.ndarray]:
    overrides = overrides or {}
    unknown = set(overrides) - set(tape._leaf_ids)
    if unknown:
        raise ValueError(f"unknown leaf names in forward_eval: {sorted(unknown)}")
    values: list[np.ndarray] = [None] * len(tape.nodes)
    for node in tape.nodes:
        if node.op == "leaf":
            v = overrides.get(node.name)
            if v is None:
                values[node.idx] = node.value
            else:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != node.value.shape:
                    raise ValueError(f"leaf {node.name!r} expects shape {node.value.shape}, "
                                     f"got {v.shape}")
                values[node.idx] = v
        elif node.op == "const":
            values[node.idx] = node.value
        else:
            values[node.idx] = _compute(node, [values[i] for i in node.inputs])
    return values


def forward_eval(tape: Tape, inputs: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Re-run the tape, optionally overriding named leaves.

    Recorded node values are replaced by the re-evaluation (which is
    bit-identical for identical inputs) and the marked outputs are returned.
    """
    values = _evaluate(tape, inputs)
    for node in tape.nodes:
        node.value = values[node.idx]
    return {name: tape.nodes[idx].value for name, idx in tape.outputs.items()}


def _resolve_output(tape: Tape, output: str | None) -> int:
    if output is not None:
        if output not in tape.outputs:
            raise ValueError(f"unknown output {output!r}")
        return tape.outputs[output]
    if len(tape.outputs) == 1:
        return next(iter(tape.outputs.values()))
    raise ValueError("backward needs an explicit output name when the tape marks "
                     f"{len(tape.outputs)} outputs")


def backward(tape: Tape, output: str | None = None,
             seed: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar output with respect to every trainable leaf.

    Trainable leaves that do not reach the output get a zero gradient entry;
    non-trainable leaves get none.
    """
    out_idx = _resolve_output(tape, output)
    out = tape.nodes[out_idx]
    if out.value.ndim != 0:
        raise ValueError(f"backward requires a scalar output, got shape {out.value.shape}")
    if seed is None:
        seed = np.ones(())
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != ():
        raise ValueError(f"seed must be scalar, got shape {seed.shape}")

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[out_idx] = seed
    for node in reversed(tape.nodes[:out_idx + 1]):
        g = grads[node.idx]
        if g is None or node.op in ("leaf", "const"):
            continue
        for inp_idx, dg in zip(node.inputs, _vjp(node, g, tape)):
            if dg is None:
                continue
            if grads[inp_idx] is None:
                grads[inp_idx] = dg
            else:
                grads[inp_idx] = grads[inp_idx] + dg

    result = {}
    for name, idx in tape._leaf_ids.items():
        node = tape.nodes[idx]
        if node.trainable:
            g = grads[idx]
            result[name] = np.zeros_like(node.value) if g is None else np.asarray(g)
    return result


def _vjp(node: Node, g: np.ndarray, tape: Tape) -> list[np.ndarray | None]:
    op = node.op
    vals = [tape.nodes[i].value for i in node.inputs]
    if op == "add":
        a, b = vals
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]
    if op == "mul":
        a, b = vals
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    if op == "matmul":
        a, b = vals
        ta, tb = node.attrs["trans_a"], node.attrs["trans_b"]
        at = a.T if ta else a
        bt = b.T if tb else b
        da, db = g @ bt.T, at.T @ g
        return [da.T if ta else da, db.T if tb else db]
    if op == "relu":
        return [g * (vals[0] > 0)]
    if op == "conv2d":
        x, k = vals
        n, c, f, kh, kw, s, p, oh, ow = _conv_geometry(node, x, k)
        xp = _pad2d(x, p)
        cols2 = _im2col(xp, kh, kw, s, oh, ow).reshape(n, c * kh * kw, oh * ow)
        gm = g.reshape(n, f, oh * ow)
        dk = np.einsum("nfl,nkl->fk", gm, cols2).reshape(f, c, kh, kw)
        dcols = np.matmul(k.reshape(f, c * kh * kw).T[None], gm)
        dcols = dcols.reshape(n, c, kh, kw, oh, ow)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, i, j]
        dx = dxp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else dxp
        return [dx, dk]
    if op == "global_avg_pool":
        x = vals[0]
        scale = 1.0 / (x.shape[2] * x.shape[3])
        return [np.broadcast_to((g * scale)[:, :, None, None], x.shape)]
    if op == "channel_norm":
        return _channel_norm_vjp(node, g, vals)
    if op == "l2norm_rows":
        x = vals[0]
        y = node.value
        norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
        return [(g - np.sum(g * y, axis=1, keepdims=True) * y) / norms]
    if op == "logsumexp":
        x = vals[0]
        axis = node.attrs["axis"]
        soft = np.exp(x - np.expand_dims(node.value, axis))
        return [soft * np.expand_dims(g, axis)]
    if op == "sum":
        x = vals[0]
        axis = node.attrs["axis"]
        if axis is None:
            return [np.broadcast_to(g, x.shape)]
        return [np.broadcast_to(np.expand_dims(g, axis), x.shape)]
    if op == "mean":
        x = vals[0]
        axis = node.attrs["axis"]
        count = x.size if axis is None else x.shape[axis]
        if axis is None:
            return [np.broadcast_to(g / count, x.shape)]
        return [np.broadcast_to(np.expand_dims(g / count, axis), x.shape)]
    if op == "concat":
        axis = node.attrs["axis"]
        sizes = [v.shape[axis] for v in vals]
        return list(np.split(g, np.cumsum(sizes)[:-1], axis=axis))
    raise ValueError(f"unsupported op kind {op!r} at node {node.idx}")


def _channel_norm_vjp(node: Node, g: np.ndarray, vals: list[np.ndarray]):
    x, gamma, _ = vals
    eps = node.attrs["eps"]
    if node.attrs["training"]:
        mean, var = channel_batch_stats(x)
    else:
        mean, var = node.attrs["running_mean"], node.attrs["running_var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    dgamma = np.sum(g * xhat, axis=(0, 2, 3))
    dbeta = np.sum(g, axis=(0, 2, 3))
    dxhat = g * gamma[None, :, None, None]
    if not node.attrs["training"]:
        return [dxhat * inv[None, :, None, None], dgamma, dbeta]
    m = x.shape[0] * x.shape[2] * x.shape[3]
    sum_dxhat = np.sum(dxhat, axis=(0, 2, 3))[None, :, None, None]
    sum_dxhat_xhat = np.sum(dxhat * xhat, axis=(0, 2, 3))[None, :, None, None]
    dx = (inv[None, :, None, None] / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return [dx, dgamma, dbeta]
