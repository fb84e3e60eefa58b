"""Sequential CNN assembly, forward/backward over a whole model, and the model file format."""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import layers as L
from .layers import ShapeError

CONV, POOL, FLATTEN, DENSE, RELU, SOFTMAX = "conv2d", "maxpool2x2", "flatten", "dense", "relu", "softmax"
KINDS = (CONV, POOL, FLATTEN, DENSE, RELU, SOFTMAX)
ARCHITECTURES = ("baseline", "improved")
HIDDEN_UNITS = 100

MAGIC = b"MALGRID1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``units`` is the filter count for conv2d and the output width for dense;
    ``fan_in`` is filled in by shape inference (3*3*c_in for conv2d, n_in for dense)."""

    kind: str
    units: int = 0
    in_channels: int = 0
    n_in: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in (CONV, DENSE) and self.units < 1:
            raise ValueError(f"{self.kind} needs a positive unit count")

    @property
    def has_params(self) -> bool:
        return self.kind in (CONV, DENSE)

    @property
    def fan_in(self) -> int:
        return L.KERNEL * L.KERNEL * self.in_channels if self.kind == CONV else self.n_in

    @property
    def param_shapes(self) -> list[tuple[int, ...]]:
        if self.kind == CONV:
            return [(L.KERNEL, L.KERNEL, self.in_channels, self.units), (self.units,)]
        if self.kind == DENSE:
            return [(self.n_in, self.units), (self.units,)]
        return []

    def to_dict(self) -> dict:
        return {"kind": self.kind, "units": self.units, "in_channels": self.in_channels, "n_in": self.n_in}


def conv(filters: int) -> LayerSpec:
    return LayerSpec(CONV, filters)


def dense(units: int) -> LayerSpec:
    return LayerSpec(DENSE, units)


def pool() -> LayerSpec:
    return LayerSpec(POOL)


def flatten() -> LayerSpec:
    return LayerSpec(FLATTEN)


def relu() -> LayerSpec:
    return LayerSpec(RELU)


def softmax() -> LayerSpec:
    return LayerSpec(SOFTMAX)


def architecture_layers(arch: str, num_classes: int) -> list[LayerSpec]:
    if arch == "baseline":
        body = [conv(32), relu(), pool()]
    elif arch == "improved":
        body = [conv(32), relu(), pool(), conv(64), relu(), conv(64), relu(), pool()]
    else:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    return body + [flatten(), dense(HIDDEN_UNITS), relu(), dense(num_classes), softmax()]


def infer_shapes(specs: Sequence[LayerSpec], input_side: int, channels: int = 1):
    """Resolve input widths and return ``(resolved_specs, output_shapes)``.

    Output shapes exclude the batch axis. Raises ShapeError naming the first
    layer whose input is too small or of the wrong rank.
    """
    shape: tuple[int, ...] = (input_side, input_side, channels)
    resolved, shapes = [], []
    for i, spec in enumerate(specs):
        where = f"layer {i} ({spec.kind}) with input {'x'.join(map(str, shape))}"
        if spec.kind in (CONV, POOL) and len(shape) != 3:
            raise ShapeError(f"{where}: needs a spatial input")
        if spec.kind == DENSE and len(shape) != 1:
            raise ShapeError(f"{where}: needs a flattened input")
        if spec.kind == CONV:
            h, w, c = shape
            if h < L.KERNEL or w < L.KERNEL:
                raise ShapeError(f"{where}: spatial size below the 3x3 kernel")
            spec = LayerSpec(CONV, spec.units, in_channels=c)
            shape = (h - 2, w - 2, spec.units)
        elif spec.kind == POOL:
            h, w, c = shape
            if h < L.POOL or w < L.POOL:
                raise ShapeError(f"{where}: spatial size below the 2x2 pool window")
            shape = (h // 2, w // 2, c)
        elif spec.kind == FLATTEN:
            shape = (int(np.prod(shape)),)
        elif spec.kind == DENSE:
            spec = LayerSpec(DENSE, spec.units, n_in=shape[0])
            shape = (spec.units,)
        resolved.append(spec)
        shapes.append(shape)
    return resolved, shapes


@dataclass
class Model:
    layers: list[LayerSpec]
    params: list[np.ndarray]  # weight, bias for each parametric layer, in layer order
    input_side: int
    num_classes: int
    arch: str = "custom"
    seed: int = 0
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers or self.layers[-1].kind != SOFTMAX:
            raise ShapeError("the final layer must be softmax")
        last = self.layers[-2] if len(self.layers) > 1 else None
        if last is None or last.kind != DENSE or last.units != self.num_classes:
            raise ShapeError(f"softmax must follow dense({self.num_classes})")
        expected = [s for spec in self.layers for s in spec.param_shapes]
        got = [tuple(p.shape) for p in self.params]
        if got != expected:
            raise ShapeError(f"parameter shapes {got} do not match layers {expected}")

    @property
    def dtype(self):
        return self.params[0].dtype

    def layer_shapes(self) -> list[tuple[int, ...]]:
        return infer_shapes(self.layers, self.input_side)[1]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params))

    def astype(self, dtype) -> "Model":
        return Model(
            list(self.layers), [p.astype(dtype) for p in self.params], self.input_side,
            self.num_classes, self.arch, self.seed, list(self.class_names),
        )


def parameter_checksum(model: Model) -> int:
    crc = 0
    for p in model.params:
        crc = zlib.crc32(np.ascontiguousarray(p).tobytes(), crc)
    return crc


def assemble(
    specs: Sequence[LayerSpec], input_side: int, seed: int, *, arch: str = "custom",
    class_names: Sequence[str] = (), dtype=np.float32,
) -> Model:
    """He-uniform weights (one PCG64 stream per layer keyed on (seed, layer index)), zero biases."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    resolved, shapes = infer_shapes(specs, input_side)
    params = []
    for i, spec in enumerate(resolved):
        if spec.has_params:
            w_shape, b_shape = spec.param_shapes
            params.append(L.he_uniform_init(spec.fan_in, w_shape, np.random.SeedSequence([seed, i]), dtype))
            params.append(np.zeros(b_shape, dtype=dtype))
    return Model(resolved, params, input_side, shapes[-1][0], arch, seed, list(class_names))


def build_model(arch: str, input_side: int = 32, num_classes: int = 25, seed: int = 1,
                class_names: Sequence[str] = ()) -> Model:
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    return assemble(architecture_layers(arch, num_classes), input_side, seed,
                    arch=arch, class_names=class_names)


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]  # input to each layer (batched)
    pool_argmax: dict[int, np.ndarray]
    probs: np.ndarray  # [N, num_classes]

    def __len__(self):
        return len(self.inputs)


def model_forward(model: Model, x: np.ndarray) -> ForwardTrace:
    """Run a ``[side, side, 1]`` sample or ``[N, side, side, 1]`` batch through the model."""
    expected = (model.input_side, model.input_side, 1)
    if x.shape == expected:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"model expects input {expected} (optionally batched), got {x.shape}")
    x = x.astype(model.dtype, copy=False)
    inputs, argmax = [], {}
    p = 0
    for i, spec in enumerate(model.layers):
        inputs.append(x)
        if spec.kind == CONV:
            x = L.conv2d_forward(x, model.params[p], model.params[p + 1])
            p += 2
        elif spec.kind == DENSE:
            x = L.dense_forward(x, model.params[p], model.params[p + 1])
            p += 2
        elif spec.kind == POOL:
            x, argmax[i] = L.maxpool2x2_forward(x)
        elif spec.kind == FLATTEN:
            x = x.reshape(x.shape[0], -1)
        elif spec.kind == RELU:
            x = L.relu(x)
        else:
            x = L.softmax(x)
    return ForwardTrace(inputs, argmax, x)


def predict_proba(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    if x.ndim == 3:
        return model_forward(model, x).probs[0]
    return np.concatenate(
        [model_forward(model, x[i : i + batch_size]).probs for i in range(0, len(x), batch_size)]
    )


def _check_onehot(targets: np.ndarray, num_classes: int) -> None:
    if targets.ndim != 2 or targets.shape[1] != num_classes:
        raise ValueError(f"targets must be one-hot of length {num_classes}, got shape {targets.shape}")
    if not (np.all((targets == 0) | (targets == 1)) and np.all(targets.sum(axis=1) == 1)):
        raise ValueError("targets must be one-hot")


def model_backward(model: Model, trace: ForwardTrace, targets: np.ndarray) -> list[np.ndarray]:
    """Gradients of the batch-mean categorical cross-entropy, one per entry of ``model.params``."""
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[None]
    _check_onehot(targets, model.num_classes)
    n = trace.probs.shape[0]
    if targets.shape[0] != n:
        raise ValueError(f"{targets.shape[0]} targets for a batch of {n}")
    # softmax + cross-entropy boundary
    g = ((trace.probs - targets) / n).astype(model.dtype)
    grads: list[np.ndarray | None] = [None] * len(model.params)
    p = len(model.params)
    for i in range(len(model.layers) - 2, -1, -1):
        spec, x = model.layers[i], trace.inputs[i]
        if spec.kind == CONV:
            p -= 2
            g, grads[p], grads[p + 1] = L.conv2d_backward(x, model.params[p], g)
        elif spec.kind == DENSE:
            p -= 2
            g, grads[p], grads[p + 1] = L.dense_backward(x, model.params[p], g)
        elif spec.kind == POOL:
            g = L.maxpool2x2_backward(x.shape, trace.pool_argmax[i], g)
        elif spec.kind == FLATTEN:
            g = g.reshape(x.shape)
        elif spec.kind == RELU:
            g = L.relu_backward(x, g)
        else:
            raise ShapeError("softmax is only supported as the final layer")
    return grads


# -- model file ---------------------------------------------------------------

class ModelFileError(ValueError):
    pass


class NotAModelFileError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


class TruncatedModelFileError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


_LEN = struct.Struct("<I")


def encode_model(model: Model) -> bytes:
    """``MAGIC | u32 header length | JSON header | float32 LE params | u32 CRC32``."""
    header = {
        "format_version": FORMAT_VERSION,
        "arch": model.arch,
        "input_side": model.input_side,
        "num_classes": model.num_classes,
        "seed": model.seed,
        "class_names": list(model.class_names),
        "layers": [spec.to_dict() for spec in model.layers],
        "param_shapes": [list(p.shape) for p in model.params],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + _LEN.pack(len(hbytes)) + hbytes
    body += b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.params)
    return body + _LEN.pack(zlib.crc32(body))


def _parse_header(data: bytes) -> tuple[dict, int]:
    (hlen,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + hlen > len(data):
        raise TruncatedModelFileError("model file truncated inside the header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ChecksumError("model header is corrupt") from None
    if not isinstance(header, dict):
        raise ChecksumError("model header is corrupt")
    return header, start + hlen


def decode_model(data: bytes) -> Model:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise NotAModelFileError("not a model file (bad magic bytes)")
    if len(data) < len(MAGIC) + 2 * _LEN.size:
        raise TruncatedModelFileError("model file truncated")
    intact = zlib.crc32(data[:-_LEN.size]) == _LEN.unpack_from(data, len(data) - _LEN.size)[0]
    header, offset = _parse_header(data)
    try:
        shapes = [tuple(int(d) for d in s) for s in header["param_shapes"]]
    except (KeyError, TypeError, ValueError):
        raise ChecksumError("model header is corrupt") from None
    expected = offset + 4 * sum(int(np.prod(s)) for s in shapes) + _LEN.size
    if not intact:
        if len(data) < expected:
            raise TruncatedModelFileError(f"model file truncated: {len(data)} of {expected} bytes")
        raise ChecksumError("model file checksum mismatch")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version!r} (this build reads {FORMAT_VERSION})")
    if len(data) != expected:
        raise ChecksumError(f"model file length {len(data)} does not match its header ({expected})")
    params = []
    for s in shapes:
        count = int(np.prod(s))
        params.append(np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(s))
        offset += 4 * count
    specs = [LayerSpec(**d) for d in header["layers"]]
    return Model(specs, params, header["input_side"], header["num_classes"], header["arch"],
                 header["seed"], list(header["class_names"]))


def save_model(model: Model, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(model))


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "rb") as fh:
        return decode_model(fh.read())
