"""Self-contained ONNX model support: wire codec, graph builder, executor.

No external ONNX libraries are used; files produced and consumed here
follow the standard ONNX protobuf schema (opset >= 13) so they remain
interchangeable with other runtimes.
"""

from hemoclass.onnx.proto import (
    Attribute,
    Graph,
    Model,
    Node,
    TensorData,
    ValueInfo,
    load_model,
    save_model,
)
from hemoclass.onnx.runtime import GraphExecutor

__all__ = [
    "Attribute",
    "Graph",
    "GraphExecutor",
    "Model",
    "Node",
    "TensorData",
    "ValueInfo",
    "load_model",
    "save_model",
]
