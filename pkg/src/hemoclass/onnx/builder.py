"""Convenience API for assembling ONNX graphs node by node.

Used by the test fixtures and by the backbone export tooling; emits the
op subset the executor understands (convolutional classification nets).
"""

from __future__ import annotations

import numpy as np

from hemoclass.onnx.proto import (
    ATTR_FLOAT,
    ATTR_INT,
    ATTR_INTS,
    FLOAT,
    Attribute,
    Graph,
    Model,
    Node,
    TensorData,
    ValueInfo,
)


def _attrs(**kwargs) -> list[Attribute]:
    out = []
    for name, value in kwargs.items():
        if value is None:
            continue
        if isinstance(value, float):
            out.append(Attribute(name, ATTR_FLOAT, value))
        elif isinstance(value, int):
            out.append(Attribute(name, ATTR_INT, value))
        elif isinstance(value, (list, tuple)):
            out.append(Attribute(name, ATTR_INTS, [int(v) for v in value]))
        else:
            raise TypeError(f"unsupported attribute value for {name}: {value!r}")
    return out


class GraphBuilder:
    """Accumulates nodes and initializers, then emits a Model."""

    def __init__(self, name: str, input_name: str = "input",
                 input_shape=( "batch", 3, 224, 224)):
        self.graph = Graph(name=name)
        self.graph.inputs.append(ValueInfo(input_name, FLOAT, tuple(input_shape)))
        self._counter = 0

    def _fresh(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}_{self._counter}"

    def initializer(self, name: str, array: np.ndarray) -> str:
        self.graph.initializers.append(TensorData.from_array(name, array))
        return name

    def node(self, op_type: str, inputs: list[str], output: str | None = None,
             **attrs) -> str:
        out = output or self._fresh(op_type.lower())
        self.graph.nodes.append(
            Node(op_type=op_type, inputs=list(inputs), outputs=[out],
                 name=self._fresh(f"n_{op_type.lower()}"), attributes=_attrs(**attrs))
        )
        return out

    def conv(self, x: str, weight: np.ndarray, bias: np.ndarray | None = None, *,
             strides=(1, 1), pads=(0, 0, 0, 0), output: str | None = None) -> str:
        w_name = self.initializer(self._fresh("conv_w"), weight.astype(np.float32))
        inputs = [x, w_name]
        if bias is not None:
            inputs.append(self.initializer(self._fresh("conv_b"),
                                           bias.astype(np.float32)))
        return self.node(
            "Conv", inputs, output,
            kernel_shape=list(weight.shape[2:]), strides=list(strides),
            pads=list(pads), dilations=[1, 1], group=1,
        )

    def batch_norm(self, x: str, scale: np.ndarray, bias: np.ndarray,
                   mean: np.ndarray, var: np.ndarray, *, epsilon: float = 1e-5,
                   output: str | None = None) -> str:
        names = [
            self.initializer(self._fresh("bn_scale"), scale.astype(np.float32)),
            self.initializer(self._fresh("bn_bias"), bias.astype(np.float32)),
            self.initializer(self._fresh("bn_mean"), mean.astype(np.float32)),
            self.initializer(self._fresh("bn_var"), var.astype(np.float32)),
        ]
        return self.node("BatchNormalization", [x] + names, output, epsilon=epsilon)

    def relu(self, x: str, output: str | None = None) -> str:
        return self.node("Relu", [x], output)

    def max_pool(self, x: str, *, kernel=(3, 3), strides=(2, 2),
                 pads=(0, 0, 0, 0), output: str | None = None) -> str:
        return self.node("MaxPool", [x], output, kernel_shape=list(kernel),
                         strides=list(strides), pads=list(pads))

    def add(self, a: str, b: str, output: str | None = None) -> str:
        return self.node("Add", [a, b], output)

    def global_average_pool(self, x: str, output: str | None = None) -> str:
        return self.node("GlobalAveragePool", [x], output)

    def flatten(self, x: str, output: str | None = None) -> str:
        return self.node("Flatten", [x], output, axis=1)

    def gemm(self, x: str, weight: np.ndarray, bias: np.ndarray, *,
             output: str | None = None) -> str:
        # weight is (out_features, in_features), applied as x @ W.T + b
        w_name = self.initializer(self._fresh("gemm_w"), weight.astype(np.float32))
        b_name = self.initializer(self._fresh("gemm_b"), bias.astype(np.float32))
        return self.node("Gemm", [x, w_name, b_name], output,
                         alpha=1.0, beta=1.0, transB=1)

    def mark_output(self, name: str, dims: tuple) -> None:
        self.graph.outputs.append(ValueInfo(name, FLOAT, tuple(dims)))

    def model(self, opset_version: int = 13) -> Model:
        return Model(graph=self.graph, opset_version=opset_version)
