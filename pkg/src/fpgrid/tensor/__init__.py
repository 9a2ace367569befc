from .net import (
    ExecutableNet,
    GradcheckResult,
    GraphInvalidError,
    count_macs,
    forward,
    gradcheck,
    gradients,
    instantiate,
    loss,
    node_values,
)

__all__ = [
    "ExecutableNet",
    "GradcheckResult",
    "GraphInvalidError",
    "count_macs",
    "forward",
    "gradcheck",
    "gradients",
    "instantiate",
    "loss",
    "node_values",
]
