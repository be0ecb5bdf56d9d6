"""
Dense tensors, parameters and gradient groups.

A `GradientGroup` owns a set of named parameters and records the operations of one forward segment. Its
`backward` walks that record in reverse and writes gradients only into its own parameters, then releases the
record. Tensors produced outside any group, or passed through `detach`, carry no group and therefore stop
gradients: the group boundary is the detach boundary.
"""

import logging
import threading
from contextlib import contextmanager

import numpy as np

from .exceptions import CounterError, NonFiniteError, ShapeError, TraceError


logger = logging.getLogger(__name__)

DTYPES = {
    'float64': np.float64,
    'float32': np.float32,
}


def resolve_dtype(precision):
    """Map a precision name (``"float64"`` / ``"float32"``) or numpy dtype to a numpy scalar type."""

    if isinstance(precision, str):
        try:
            return DTYPES[precision]
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}, expected one of {sorted(DTYPES)}") from None
    return np.dtype(precision).type


class ActivationCounter:
    """
    Thread-safe count of engine-allocated traced bytes with a monotonic high-water mark.

    Counts every traced op output while it is resident in a trace and every gradient array the backward pass
    holds for a traced value. Parameters, parameter gradients and optimizer buffers are not counted here; the
    memory model adds them separately.
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self._lock = threading.Lock()
        self.resident_bytes = 0
        self.resident_count = 0
        self.peak_bytes = 0
        self.peak_count = 0

    def allocate(self, nbytes):
        with self._lock:
            self.resident_bytes += nbytes
            self.resident_count += 1
            if self.resident_bytes > self.peak_bytes:
                self.peak_bytes = self.resident_bytes
            if self.resident_count > self.peak_count:
                self.peak_count = self.resident_count

    def free(self, nbytes, count):
        with self._lock:
            self.resident_bytes -= nbytes
            self.resident_count -= count

    def reset(self):
        """Forget the high-water mark; resident totals are kept."""

        with self._lock:
            self.peak_bytes = self.resident_bytes
            self.peak_count = self.resident_count

    def high_water_mark(self):
        if not self.enabled:
            raise CounterError("allocation counters are disabled for this run")
        with self._lock:
            return self.peak_bytes


COUNTER = ActivationCounter()

_state = threading.local()


def tracing_enabled():
    return not getattr(_state, 'no_trace', False)


@contextmanager
def no_trace():
    """Run ops without recording them in any gradient group (evaluation, logit extraction)."""

    previous = getattr(_state, 'no_trace', False)
    _state.no_trace = True
    try:
        yield
    finally:
        _state.no_trace = previous


class Tensor:
    """
    A dense numeric array plus the gradient group whose trace produced it.

    Ops never write into their inputs, so a tensor's values do not change after construction.
    """

    __slots__ = ('data', 'group')

    def __init__(self, data, group=None):
        self.data = data
        self.group = group

    @classmethod
    def from_array(cls, array, dtype=np.float64):
        """
        Build a tensor from external input, copying it and rejecting NaN/Inf.

        Raises:
            NonFiniteError: If any entry is NaN or infinite.
        """

        data = np.array(array, dtype=dtype, copy=True)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"tensor input contains {int(np.size(data) - np.isfinite(data).sum())} "
                                 f"non-finite entries")
        return cls(data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def nbytes(self):
        return self.data.nbytes

    @property
    def tracked(self):
        return self.group is not None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        owner = self.group.name if self.group is not None else None
        return f"{type(self).__name__}(shape={self.shape}, dtype={self.dtype}, group={owner!r})"


class Tensor4(Tensor):
    """Rank-4 activation tensor laid out as (batch, channel, height, width), width fastest."""

    __slots__ = ()

    def __init__(self, data, group=None):
        if np.ndim(data) != 4:
            raise ShapeError('rank', 4, np.ndim(data), op='Tensor4')
        super().__init__(data, group)

    @property
    def B(self):
        return self.data.shape[0]

    @property
    def C(self):
        return self.data.shape[1]

    @property
    def H(self):
        return self.data.shape[2]

    @property
    def W(self):
        return self.data.shape[3]


class Parameter(Tensor):
    """A named learnable tensor owned by exactly one gradient group, with its gradient accumulator."""

    __slots__ = ('name', 'grad')

    def __init__(self, name, data, group=None):
        super().__init__(np.asarray(data), group)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def assign(self, data):
        """Replace the parameter values (optimizer updates, checkpoint loads)."""

        data = np.asarray(data, dtype=self.data.dtype)
        if data.shape != self.data.shape:
            raise ShapeError(self.name, self.data.shape, data.shape, op='Parameter.assign')
        self.data = data


class TraceEntry:
    __slots__ = ('output', 'inputs', 'backward')

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class GradientGroup:
    """
    Parameters trained by one local loss, and the recorded trace of the forward segment that computes it.

    Gradients only ever reach parameters registered here. The trace is cleared after every backward pass, so no
    graph state carries over between steps.
    """

    def __init__(self, name, counter=None):
        self.name = name
        self.parameters = {}
        self.trace = []
        self.counter = counter if counter is not None else COUNTER
        self._trace_bytes = 0

    def __repr__(self):
        return f"GradientGroup({self.name!r}, parameters={len(self.parameters)}, trace={len(self.trace)})"

    def register(self, name, data):
        """Create and own a new parameter called ``name``."""

        if name in self.parameters:
            raise ValueError(f"parameter {name!r} already registered in group {self.name!r}")
        param = Parameter(name, data, group=self)
        self.parameters[name] = param
        return param

    def adopt(self, param):
        """Take ownership of an existing parameter (rebuilding groups for another block size)."""

        if param.name in self.parameters:
            raise ValueError(f"parameter {param.name!r} already registered in group {self.name!r}")
        param.group = self
        self.parameters[param.name] = param
        return param

    def zero_grad(self):
        for param in self.parameters.values():
            param.zero_grad()

    @property
    def resident_bytes(self):
        return self._trace_bytes

    def record(self, output, inputs, backward):
        """Append one op to the trace; called by the traced ops in `engine.ops`."""

        self.trace.append(TraceEntry(output, inputs, backward))
        self._trace_bytes += output.nbytes
        self.counter.allocate(output.nbytes)

    def backward(self, loss):
        """
        Accumulate d(loss)/d(parameter) into every parameter of this group, then release the trace.

        Args:
            loss (Tensor): A scalar produced by ops recorded in this group.

        Raises:
            TraceError: If the loss was not produced inside this group or the trace is empty.
        """

        if loss.group is not self:
            raise TraceError(f"loss does not belong to gradient group {self.name!r}")
        if not self.trace:
            raise TraceError(f"gradient group {self.name!r} has no recorded forward trace")
        if loss.data.size != 1:
            raise ShapeError('loss', 'scalar', loss.shape, op='backward')

        seed = np.ones_like(loss.data)
        grads = {id(loss): seed}
        grad_bytes, grad_count = seed.nbytes, 1
        self.counter.allocate(seed.nbytes)

        try:
            for entry in reversed(self.trace):
                upstream = grads.get(id(entry.output))
                if upstream is None:
                    continue
                for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
                    if grad is None or tensor.group is not self:
                        continue
                    if isinstance(tensor, Parameter):
                        tensor.grad = tensor.grad + grad
                        continue
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + grad
                    else:
                        grads[key] = grad
                        grad_bytes += grad.nbytes
                        grad_count += 1
                        self.counter.allocate(grad.nbytes)
        finally:
            # a failed pass leaves partial parameter gradients but no resident trace or gradient bytes
            grads.clear()
            self.counter.free(grad_bytes, grad_count)
            self.release()

    def release(self):
        """Drop the recorded trace and return its bytes to the counter."""

        count = len(self.trace)
        if count:
            self.counter.free(self._trace_bytes, count)
        self.trace = []
        self._trace_bytes = 0


def detach(tensor):
    """Value-identical tensor outside every gradient group; no gradient crosses it."""

    cls = Tensor4 if tensor.ndim == 4 else Tensor
    return cls(tensor.data)
