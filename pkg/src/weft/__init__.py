"""weft: a small, transparent CNN inference runtime.

Loads models from an ONNX subset or a JSON twin format, simplifies the
computation graph, executes each layer through interchangeable backends
selected at runtime, and benchmarks full networks and individual layers.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    GraphError,
    InputError,
    LimitError,
    NumericError,
    ParseError,
    PlanError,
    RegistrationError,
    ShapeError,
    TruncatedError,
    UnknownBackendError,
    UnsupportedError,
    WeftError,
)
from .graph import (
    BatchNormAttrs,
    ConcatAttrs,
    ConvAttrs,
    GemmAttrs,
    Graph,
    Node,
    OpKind,
    PoolAttrs,
    ReshapeAttrs,
    SoftmaxAttrs,
    format_graph,
    infer_shapes,
    topo_sort,
    validate,
)
from .kernels import KernelRegistry, default_registry, list_backends, register_backend
from .modeljson import graph_to_json, load_json_model, parse_json_model, save_json_model
from .onnx import OnnxLimits, parse_onnx
from .runtime import (
    BenchReport,
    ExecutionPlan,
    RunConfig,
    autotune,
    compare_backends,
    execute,
    plan,
    report_to_csv,
    report_to_json,
    time_layers,
    time_network,
)
from .simplify import (
    DEFAULT_PIPELINE,
    PassReport,
    drop_identity,
    eliminate_dead,
    fold_batch_norm,
    fuse_activation,
    run_pipeline,
)
from .tensor import ComparisonReport, Tensor, tensor_compare

from .cli import load_model  # noqa: E402  (needs the modules above)

__all__ = [name for name in dir() if not name.startswith("_")]
