"""Feed-forward dense networks with hand-written reverse-mode gradients."""
from dataclasses import dataclass
from pathlib import Path
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from adaptive_td3bc.exceptions import CheckpointFormatError
from adaptive_td3bc.exceptions import ShapeError
from adaptive_td3bc.exceptions import StaleCacheError
from adaptive_td3bc.helpers import decode_header
from adaptive_td3bc.helpers import encode_header
from adaptive_td3bc.helpers import pack_array
from adaptive_td3bc.helpers import require_field
from adaptive_td3bc.helpers import unpack_array


NET_MAGIC = "ADAPTIVE-TD3BC-DENSENET"
NET_FORMAT_VERSION = "1"
HEADS = ("linear", "scaled_tanh")
DEFAULT_HIDDEN = (256, 256)

# tanh saturates to exactly 1.0 in floating point; shrinking keeps outputs
# strictly inside the action box.
_TANH_MARGIN = 1.0 - 1e-6


def _format_floats(values: np.ndarray) -> str:
    return ",".join(repr(float(value)) for value in values)


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(value) for value in text.split(",")], dtype=np.float64)


class DenseNet:
    """A feed-forward net with rectifier hidden layers and a linear or tanh head.

    Weights are stored as ``(fan_in, fan_out)`` matrices so that a batch of
    row vectors maps through ``x @ W + b``.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        params: Sequence[np.ndarray],
        head: str = "linear",
        action_low: Optional[Sequence[float]] = None,
        action_high: Optional[Sequence[float]] = None,
        seed: int = -1,
    ) -> None:
        """Wrap existing parameters; use :meth:`initialize` to create a fresh net."""
        sizes = tuple(int(size) for size in layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"Invalid layer sizes {sizes}")
        if head not in HEADS:
            raise ValueError(f"Unknown output head {head!r}, expected one of {HEADS}")
        if len(params) != 2 * (len(sizes) - 1):
            raise ShapeError(
                f"Expected {2 * (len(sizes) - 1)} parameter arrays, got {len(params)}"
            )
        for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            weight, bias = params[2 * index], params[2 * index + 1]
            if weight.shape != (fan_in, fan_out) or bias.shape != (fan_out,):
                raise ShapeError(
                    f"Layer {index} expects weight {(fan_in, fan_out)} and bias "
                    f"{(fan_out,)}, got {weight.shape} and {bias.shape}"
                )
        self.layer_sizes = sizes
        self.params: List[np.ndarray] = [np.array(param) for param in params]
        self.head = head
        self.seed = seed
        self.version = 0
        if head == "scaled_tanh":
            if action_low is None or action_high is None:
                raise ValueError("scaled_tanh head needs action_low and action_high")
            low = np.asarray(action_low, dtype=np.float64).reshape(-1)
            high = np.asarray(action_high, dtype=np.float64).reshape(-1)
            if low.shape != (sizes[-1],) or high.shape != (sizes[-1],):
                raise ShapeError("Action bounds must have length output_dim")
            if not np.all(low < high):
                raise ValueError("action_low must be strictly below action_high")
            self.action_low: Optional[np.ndarray] = low
            self.action_high: Optional[np.ndarray] = high
        else:
            self.action_low = None
            self.action_high = None

    @classmethod
    def initialize(
        cls,
        layer_sizes: Sequence[int],
        seed: int,
        head: str = "linear",
        action_low: Optional[Sequence[float]] = None,
        action_high: Optional[Sequence[float]] = None,
        dtype: Union[str, type] = np.float64,
    ) -> "DenseNet":
        """Draw every weight and bias uniformly from ``±1/sqrt(fan_in)``."""
        rng = np.random.default_rng(seed)
        params: List[np.ndarray] = []
        sizes = tuple(int(size) for size in layer_sizes)
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            params.append(rng.uniform(-bound, bound, size=(fan_out,)))
        params = [param.astype(dtype) for param in params]
        return cls(sizes, params, head, action_low, action_high, seed)

    @classmethod
    def zeros(
        cls,
        layer_sizes: Sequence[int],
        head: str = "linear",
        action_low: Optional[Sequence[float]] = None,
        action_high: Optional[Sequence[float]] = None,
        dtype: Union[str, type] = np.float64,
    ) -> "DenseNet":
        """Build a net whose parameters are all zero."""
        sizes = tuple(int(size) for size in layer_sizes)
        params: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            params.append(np.zeros((fan_in, fan_out), dtype=dtype))
            params.append(np.zeros((fan_out,), dtype=dtype))
        return cls(sizes, params, head, action_low, action_high)

    @property
    def input_dim(self) -> int:
        """Width of the input layer."""
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        """Width of the output layer."""
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        """Number of affine layers."""
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        """Total number of scalar parameters."""
        return sum(
            fan_in * fan_out + fan_out
            for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )

    @property
    def dtype(self) -> np.dtype:
        """Floating point type of the parameters."""
        return self.params[0].dtype

    def mark_updated(self) -> None:
        """Invalidate every forward cache taken before an in-place change."""
        self.version += 1

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        """Overwrite the parameters in place, keeping shapes and dtype."""
        if len(params) != len(self.params):
            raise ShapeError(f"Expected {len(self.params)} arrays, got {len(params)}")
        for own, new in zip(self.params, params):
            if own.shape != np.shape(new):
                raise ShapeError(f"Shape mismatch {own.shape} vs {np.shape(new)}")
            own[...] = new
        self.mark_updated()

    def copy(self) -> "DenseNet":
        """Return an independent deep copy."""
        return DenseNet(
            self.layer_sizes,
            [param.copy() for param in self.params],
            self.head,
            self.action_low,
            self.action_high,
            self.seed,
        )

    def astype(self, dtype: Union[str, type]) -> "DenseNet":
        """Return a copy with parameters cast to ``dtype``."""
        clone = self.copy()
        clone.params = [param.astype(dtype) for param in clone.params]
        return clone

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        """Evaluate the net on a single vector or a batch of vectors."""
        batch = np.asarray(inputs)
        if batch.ndim == 1:
            return net_forward(self, batch[None, :])[0][0]
        return net_forward(self, batch)[0]

    def to_bytes(self) -> bytes:
        """Serialize as a text header followed by 32-bit little-endian parameters."""
        fields = {
            "version": NET_FORMAT_VERSION,
            "layer_sizes": ",".join(str(size) for size in self.layer_sizes),
            "hidden": "relu",
            "head": self.head,
            "seed": str(self.seed),
        }
        if self.action_low is not None and self.action_high is not None:
            fields["action_low"] = _format_floats(self.action_low)
            fields["action_high"] = _format_floats(self.action_high)
        payload = b"".join(pack_array(param) for param in self.params)
        return encode_header(NET_MAGIC, fields) + payload

    @classmethod
    def from_bytes(
        cls,
        buffer: bytes,
        offset: int = 0,
        dtype: Union[str, type] = np.float64,
    ) -> Tuple["DenseNet", int]:
        """Decode a net written by :meth:`to_bytes`; returns it and the next offset."""
        fields, position = decode_header(
            buffer, offset, NET_MAGIC, CheckpointFormatError
        )
        version = require_field(fields, "version", CheckpointFormatError)
        if version != NET_FORMAT_VERSION:
            raise CheckpointFormatError(f"Unsupported net version {version}")
        try:
            sizes = tuple(
                int(size)
                for size in require_field(
                    fields, "layer_sizes", CheckpointFormatError
                ).split(",")
            )
            seed = int(fields.get("seed", "-1"))
            low: Optional[np.ndarray] = None
            high: Optional[np.ndarray] = None
            if "action_low" in fields and "action_high" in fields:
                low = _parse_floats(fields["action_low"])
                high = _parse_floats(fields["action_high"])
        except ValueError as error:
            raise CheckpointFormatError(f"Malformed net header: {error}") from error
        params: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weight, position = unpack_array(
                buffer, position, (fan_in, fan_out), error_cls=CheckpointFormatError
            )
            bias, position = unpack_array(
                buffer, position, (fan_out,), error_cls=CheckpointFormatError
            )
            params += [weight.astype(dtype), bias.astype(dtype)]
        head = require_field(fields, "head", CheckpointFormatError)
        try:
            net = cls(sizes, params, head, low, high, seed)
        except (ShapeError, ValueError) as error:
            raise CheckpointFormatError(f"Inconsistent net header: {error}") from error
        return net, position

    def save(self, path: Union[str, Path]) -> None:
        """Write the checkpoint to ``path``."""
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(
        cls, path: Union[str, Path], dtype: Union[str, type] = np.float64
    ) -> "DenseNet":
        """Read a checkpoint written by :meth:`save`."""
        buffer = Path(path).read_bytes()
        net, end = cls.from_bytes(buffer, 0, dtype)
        if end != len(buffer):
            raise CheckpointFormatError(f"{len(buffer) - end} trailing bytes in {path}")
        return net


@dataclass
class ForwardCache:
    """Activations recorded by :func:`net_forward` for one backward pass."""

    net_id: int
    version: int
    inputs: np.ndarray
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]
    outputs: np.ndarray
    head_tanh: Optional[np.ndarray] = None


def net_forward(net: DenseNet, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Map a ``(batch, input_dim)`` array through the net, keeping a cache."""
    batch = np.asarray(inputs, dtype=net.dtype)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeError(
            f"Expected inputs of shape (batch, {net.input_dim}), got {batch.shape}"
        )
    activations = [batch]
    pre_activations: List[np.ndarray] = []
    hidden = batch
    for index in range(net.n_layers):
        weight, bias = net.params[2 * index], net.params[2 * index + 1]
        pre = hidden @ weight + bias
        pre_activations.append(pre)
        if index < net.n_layers - 1:
            hidden = np.maximum(pre, 0.0)
            activations.append(hidden)
    last = pre_activations[-1]
    head_tanh = None
    if net.head == "scaled_tanh":
        assert net.action_low is not None and net.action_high is not None
        head_tanh = np.tanh(last) * _TANH_MARGIN
        mid = (net.action_high + net.action_low) / 2.0
        half = (net.action_high - net.action_low) / 2.0
        outputs = (mid + half * head_tanh).astype(net.dtype, copy=False)
    else:
        outputs = last
    cache = ForwardCache(
        net_id=id(net),
        version=net.version,
        inputs=batch,
        pre_activations=pre_activations,
        activations=activations,
        outputs=outputs,
        head_tanh=head_tanh,
    )
    return outputs, cache


def net_backward(
    net: DenseNet, cache: ForwardCache, output_grad: np.ndarray
) -> Tuple[List[np.ndarray], np.ndarray]:
    """Gradients of ``sum(output_grad * outputs)`` w.r.t. parameters and inputs."""
    if cache.net_id != id(net) or cache.version != net.version:
        raise StaleCacheError(
            "Forward cache does not belong to this net or predates a parameter update"
        )
    grad = np.asarray(output_grad, dtype=net.dtype)
    if grad.shape != cache.outputs.shape:
        raise ShapeError(
            f"output_grad shape {grad.shape} != outputs shape {cache.outputs.shape}"
        )
    if net.head == "scaled_tanh":
        assert net.action_low is not None and net.action_high is not None
        assert cache.head_tanh is not None
        half = (net.action_high - net.action_low) / 2.0
        # d/dz [half * m * tanh(z)] = half * m * (1 - tanh(z)^2), with t = m * tanh
        tanh = cache.head_tanh / _TANH_MARGIN
        delta = grad * half * _TANH_MARGIN * (1.0 - tanh**2)
    else:
        delta = grad
    param_grads: List[np.ndarray] = [np.empty(0)] * len(net.params)
    for index in reversed(range(net.n_layers)):
        weight = net.params[2 * index]
        below = cache.activations[index]
        param_grads[2 * index] = below.T @ delta
        param_grads[2 * index + 1] = delta.sum(axis=0)
        upstream = delta @ weight.T
        if index > 0:
            delta = upstream * (cache.pre_activations[index - 1] > 0.0)
    return param_grads, upstream
