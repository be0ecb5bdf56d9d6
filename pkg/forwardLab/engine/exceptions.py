"""
Exception hierarchy shared by every forwardLab app.

All errors raised on purpose by the engine, the training stack, the dataset readers and the diagnostics derive
from `ForwardLabError`, so management commands can turn any of them into a clean `CommandError`.
"""


class ForwardLabError(Exception):
    """Base class for all forwardLab errors."""


class ShapeError(ForwardLabError, ValueError):
    """
    Raised when a tensor does not have the shape an operation needs.

    Attributes:
        dimension (str): Name of the offending dimension, e.g. ``"C_in"`` or ``"H"``.
        expected: What the operation required.
        actual: What it received.
    """

    def __init__(self, dimension, expected, actual, op=None):
        self.dimension = dimension
        self.expected = expected
        self.actual = actual
        self.op = op
        where = f"{op}: " if op else ""
        super().__init__(f"{where}dimension {dimension} expected {expected}, got {actual}")


class NonFiniteError(ForwardLabError, ValueError):
    """Raised when external input contains NaN or Inf."""


class TraceError(ForwardLabError, RuntimeError):
    """Raised on a backward pass without its forward trace, or on ops mixing two gradient groups."""


class CounterError(ForwardLabError, RuntimeError):
    """Raised when allocation counters are read while disabled."""


class ConfigError(ForwardLabError, ValueError):
    """
    Configuration parse error or invariant violation.

    Attributes:
        path (str): Dotted key of the offending value, e.g. ``"arch.blocks.3.goodness.scales"``.
        line (int | None): 1-based line in the source file, when known.
        source (str | None): File the configuration was read from.
    """

    def __init__(self, message, path=None, line=None, source=None):
        self.message = message
        self.path = path
        self.line = line
        self.source = source
        super().__init__(self.render())

    def render(self):
        location = ""
        if self.source:
            location = f"{self.source}:{self.line}: " if self.line else f"{self.source}: "
        elif self.line:
            location = f"line {self.line}: "
        key = f"{self.path}: " if self.path else ""
        return f"{location}{key}{self.message}"


class CheckpointError(ForwardLabError, ValueError):
    """Raised for unreadable, truncated or mismatching checkpoint files."""


class DatasetError(ForwardLabError, ValueError):
    """Raised for malformed dataset files and invalid labels."""


class MetricError(ForwardLabError, ValueError):
    """Raised when a diagnostic metric is undefined for its input."""


class NonFiniteLossError(ForwardLabError, FloatingPointError):
    """
    Raised when a local loss becomes NaN or Inf during training.

    Attributes:
        layer (int): Layer (or group exit layer) whose loss diverged.
        batch_index (int): Index of the batch within the epoch.
    """

    def __init__(self, layer, batch_index, value):
        self.layer = layer
        self.batch_index = batch_index
        self.value = value
        super().__init__(f"non-finite loss {value!r} at layer {layer}, batch {batch_index}")
