"""Numpy executor for the ONNX op subset used by convolutional backbones.

Supported ops: Conv, BatchNormalization, Relu, MaxPool, AveragePool,
GlobalAveragePool, Add, Flatten, Reshape, Gemm, MatMul, Identity,
Constant.  Inference is float32 end to end.  Anything else raises
InferenceError naming the op.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hemoclass.errors import InferenceError, SchemaError
from hemoclass.onnx.proto import Graph, Model, Node

# cap on the transient im2col buffer; large batches are chunked to stay under it
_IM2COL_BUDGET_BYTES = 256 * 1024 * 1024


def _pool_shape(size: int, kernel: int, stride: int, pad_lo: int, pad_hi: int,
                ceil_mode: int) -> int:
    span = size + pad_lo + pad_hi - kernel
    if ceil_mode:
        return -(-span // stride) + 1
    return span // stride + 1


def _windows(x: np.ndarray, kernel: tuple[int, int], strides: tuple[int, int],
             dilations: tuple[int, int]) -> np.ndarray:
    """Sliding (kh, kw) windows over the trailing two axes, stride applied."""
    kh, kw = kernel
    dh, dw = dilations
    span_h = (kh - 1) * dh + 1
    span_w = (kw - 1) * dw + 1
    win = sliding_window_view(x, (span_h, span_w), axis=(-2, -1))
    win = win[..., ::strides[0], ::strides[1], :, :]
    if dh > 1 or dw > 1:
        win = win[..., ::dh, ::dw]
    return win


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, *,
           strides=(1, 1), pads=(0, 0, 0, 0), dilations=(1, 1)) -> np.ndarray:
    n, cin, _, _ = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise InferenceError(f"Conv channel mismatch: input {cin}, weight {cin_w}")
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = _windows(xp, (kh, kw), strides, dilations)  # n,cin,ho,wo,kh,kw
    _, _, ho, wo, _, _ = win.shape
    w_mat = w.reshape(cout, cin * kh * kw).astype(np.float32)

    patch_bytes = cin * kh * kw * ho * wo * 4
    chunk = max(1, _IM2COL_BUDGET_BYTES // max(patch_bytes, 1))
    out = np.empty((n, cout, ho, wo), dtype=np.float32)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        cols = win[start:stop].transpose(0, 2, 3, 1, 4, 5).reshape(
            (stop - start) * ho * wo, cin * kh * kw)
        prod = cols.astype(np.float32) @ w_mat.T
        out[start:stop] = prod.reshape(stop - start, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out += b.astype(np.float32).reshape(1, cout, 1, 1)
    return out


def max_pool(x: np.ndarray, *, kernel=(3, 3), strides=(2, 2), pads=(0, 0, 0, 0),
             ceil_mode=0) -> np.ndarray:
    pt, pl, pb, pr = pads
    if ceil_mode:
        # extend the high side so the last partial window is representable
        h_out = _pool_shape(x.shape[2], kernel[0], strides[0], pt, pb, 1)
        w_out = _pool_shape(x.shape[3], kernel[1], strides[1], pl, pr, 1)
        pb = (h_out - 1) * strides[0] + kernel[0] - x.shape[2] - pt
        pr = (w_out - 1) * strides[1] + kernel[1] - x.shape[3] - pl
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)),
                constant_values=np.float32(-np.inf))
    win = _windows(xp, kernel, strides, (1, 1))
    return win.max(axis=(-2, -1)).astype(np.float32)


def average_pool(x: np.ndarray, *, kernel, strides, pads=(0, 0, 0, 0)) -> np.ndarray:
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = _windows(xp, kernel, strides, (1, 1))
    # count_include_pad=0 semantics: divide by the number of real cells
    ones = np.pad(np.ones(x.shape[2:], dtype=np.float32), ((pt, pb), (pl, pr)))
    counts = _windows(ones, kernel, strides, (1, 1)).sum(axis=(-2, -1))
    return (win.sum(axis=(-2, -1)) / counts).astype(np.float32)


def batch_norm(x, scale, bias, mean, var, epsilon=1e-5):
    inv = (scale / np.sqrt(var + epsilon)).astype(np.float32)
    shift = (bias - mean * inv).astype(np.float32)
    return x * inv.reshape(1, -1, 1, 1) + shift.reshape(1, -1, 1, 1)


def gemm(a, b, c=None, *, alpha=1.0, beta=1.0, trans_a=0, trans_b=0):
    if trans_a:
        a = a.T
    if trans_b:
        b = b.T
    out = np.float32(alpha) * (a @ b)
    if c is not None:
        out = out + np.float32(beta) * c
    return out.astype(np.float32)


class GraphExecutor:
    """Executes an ONNX graph on float32 numpy inputs.

    The graph's nodes are assumed topologically sorted, which the ONNX
    spec requires of valid files.
    """

    def __init__(self, model: Model):
        self.graph: Graph = model.graph
        self.weights = {t.name: t.to_array() for t in self.graph.initializers}
        weight_names = set(self.weights)
        self.input_names = [vi.name for vi in self.graph.inputs
                            if vi.name not in weight_names]
        self.output_names = [vi.name for vi in self.graph.outputs]
        if not self.input_names:
            raise SchemaError("graph declares no runtime inputs")

    def run(self, feeds: dict[str, np.ndarray],
            outputs: list[str] | None = None) -> dict[str, np.ndarray]:
        wanted = outputs or self.output_names
        values: dict[str, np.ndarray] = dict(self.weights)
        for name, arr in feeds.items():
            values[name] = np.asarray(arr, dtype=np.float32)
        for node in self.graph.nodes:
            try:
                self._execute(node, values)
            except InferenceError:
                raise
            except Exception as exc:
                raise InferenceError(
                    f"node {node.name or node.op_type} failed: {exc}") from exc
        missing = [n for n in wanted if n not in values]
        if missing:
            raise SchemaError(
                f"requested outputs {missing} not produced; "
                f"graph outputs are {self.output_names}")
        return {n: values[n] for n in wanted}

    def _execute(self, node: Node, values: dict[str, np.ndarray]) -> None:
        op = node.op_type
        def inp(i):
            name = node.inputs[i]
            if name not in values:
                raise InferenceError(f"{op} input {name!r} is not available")
            return values[name]

        if op == "Conv":
            if node.attr("group", 1) != 1:
                raise InferenceError("grouped Conv is not supported")
            bias = inp(2) if len(node.inputs) > 2 else None
            out = conv2d(
                inp(0), inp(1), bias,
                strides=tuple(node.attr("strides", [1, 1])),
                pads=tuple(node.attr("pads", [0, 0, 0, 0])),
                dilations=tuple(node.attr("dilations", [1, 1])),
            )
        elif op == "BatchNormalization":
            out = batch_norm(inp(0), inp(1), inp(2), inp(3), inp(4),
                             epsilon=node.attr("epsilon", 1e-5))
        elif op == "Relu":
            out = np.maximum(inp(0), np.float32(0))
        elif op == "MaxPool":
            out = max_pool(
                inp(0),
                kernel=tuple(node.attr("kernel_shape")),
                strides=tuple(node.attr("strides", [1, 1])),
                pads=tuple(node.attr("pads", [0, 0, 0, 0])),
                ceil_mode=node.attr("ceil_mode", 0),
            )
        elif op == "AveragePool":
            out = average_pool(
                inp(0),
                kernel=tuple(node.attr("kernel_shape")),
                strides=tuple(node.attr("strides", [1, 1])),
                pads=tuple(node.attr("pads", [0, 0, 0, 0])),
            )
        elif op == "GlobalAveragePool":
            x = inp(0)
            out = x.mean(axis=(2, 3), keepdims=True).astype(np.float32)
        elif op == "Add":
            out = inp(0) + inp(1)
        elif op == "Flatten":
            x = inp(0)
            axis = node.attr("axis", 1)
            lead = int(np.prod(x.shape[:axis])) if axis else 1
            out = x.reshape(lead, -1)
        elif op == "Reshape":
            shape = inp(1).astype(np.int64).tolist()
            x = inp(0)
            shape = [x.shape[i] if v == 0 else v for i, v in enumerate(shape)]
            out = x.reshape(shape)
        elif op == "Gemm":
            c = inp(2) if len(node.inputs) > 2 else None
            out = gemm(inp(0), inp(1), c,
                       alpha=node.attr("alpha", 1.0), beta=node.attr("beta", 1.0),
                       trans_a=node.attr("transA", 0), trans_b=node.attr("transB", 0))
        elif op == "MatMul":
            out = (inp(0) @ inp(1)).astype(np.float32)
        elif op == "Identity":
            out = inp(0)
        elif op == "Constant":
            tensor = node.attr("value")
            if tensor is None:
                raise InferenceError("Constant node without a value attribute")
            out = tensor.to_array()
        else:
            raise InferenceError(f"unsupported op type {op!r}")
        values[node.outputs[0]] = out
