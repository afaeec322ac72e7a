"""Text CNN learner: full-width convolutions of heights 3/4/5, ReLU,
max-over-time pooling, then a small fully connected stack."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, LabelError, SchemaError
from .rng import make_rng


@dataclass(frozen=True)
class ArchSpec:
    filter_heights: tuple = (3, 4, 5)
    filters_per_height: int = 8
    extra_fc_layers: int = 0
    fc_hidden: int = 32
    classes: int = 3
    embed_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "filter_heights", tuple(int(h) for h in self.filter_heights))
        if not self.filter_heights or min(self.filter_heights) < 1:
            raise ValueError("filter heights must be >= 1")
        if self.extra_fc_layers not in (0, 1, 2, 3):
            raise ValueError("extra_fc_layers must be in 0..3")
        for name in ("filters_per_height", "fc_hidden", "classes", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def min_length(self) -> int:
        return max(self.filter_heights)

    def with_extra_fc(self, k: int) -> "ArchSpec":
        return replace(self, extra_fc_layers=k)

    def param_shapes(self) -> list:
        """``(name, shape)`` for every parameter, in canonical order."""
        f, d = self.filters_per_height, self.embed_dim
        shapes = []
        for h in self.filter_heights:
            shapes += [(f"conv{h}.weight", (f, h, d)), (f"conv{h}.bias", (f,))]
        width = f * len(self.filter_heights)
        for i in range(self.extra_fc_layers):
            shapes += [(f"fc{i}.weight", (width, self.fc_hidden)), (f"fc{i}.bias", (self.fc_hidden,))]
            width = self.fc_hidden
        shapes += [("out.weight", (width, self.classes)), ("out.bias", (self.classes,))]
        return shapes

    def parameter_count(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.param_shapes()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_heights"] = list(self.filter_heights)
        return d


@dataclass(frozen=True)
class InitSpec:
    mode: str = "fixed"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "random"):
            raise ValueError(f"init mode must be 'fixed' or 'random', got {self.mode!r}")


class TextCnnParams:
    """Named parameter tensors for one :class:`ArchSpec`."""

    def __init__(self, arch: ArchSpec, tensors: dict):
        expected = arch.param_shapes()
        if [n for n, _ in expected] != list(tensors):
            raise DimensionError("parameter names do not match the architecture")
        for name, shape in expected:
            t = tensors[name]
            if tuple(t.shape) != shape:
                raise DimensionError(f"{name}: expected {shape}, got {tuple(t.shape)}")
        self.arch = arch
        self.tensors = {k: ad.as_tensor(v) for k, v in tensors.items()}

    def names(self) -> list:
        return list(self.tensors)

    def values(self) -> list:
        return list(self.tensors.values())

    def numpy(self) -> dict:
        return {k: v.data for k, v in self.tensors.items()}

    def leaves(self) -> "TextCnnParams":
        """Fresh copies marked as differentiation leaves."""
        return TextCnnParams(self.arch, {k: Tensor(v.data.copy(), requires_grad=True)
                                         for k, v in self.tensors.items()})

    def with_values(self, values) -> "TextCnnParams":
        return TextCnnParams(self.arch, dict(zip(self.names(), values)))

    def flat(self) -> np.ndarray:
        return np.concatenate([v.data.ravel() for v in self.tensors.values()])

    def equals(self, other: "TextCnnParams") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(a.data, b.data) for a, b in zip(self.values(), other.values()))

    # -- serialization: key=value header, blank line, little-endian f8 payload
    def to_bytes(self) -> bytes:
        header = {"format": "textcnn-params-v1", **_flat_header(self.arch.to_dict())}
        head = "".join(f"{k}={v}\n" for k, v in header.items()) + "\n"
        return head.encode("ascii") + self.flat().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TextCnnParams":
        header, payload = split_header(blob)
        if header.get("format") != "textcnn-params-v1":
            raise SchemaError("not a textcnn parameter file")
        arch = ArchSpec(
            filter_heights=tuple(int(h) for h in header["filter_heights"].split(",")),
            filters_per_height=int(header["filters_per_height"]),
            extra_fc_layers=int(header["extra_fc_layers"]),
            fc_hidden=int(header["fc_hidden"]),
            classes=int(header["classes"]),
            embed_dim=int(header["embed_dim"]),
        )
        flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        if flat.size != arch.parameter_count():
            raise SchemaError("payload size does not match the architecture")
        tensors, pos = {}, 0
        for name, shape in arch.param_shapes():
            n = int(np.prod(shape))
            tensors[name] = flat[pos:pos + n].reshape(shape).copy()
            pos += n
        return cls(arch, tensors)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TextCnnParams":
        return cls.from_bytes(Path(path).read_bytes())


def _flat_header(d: dict) -> dict:
    return {k: ",".join(str(x) for x in v) if isinstance(v, (list, tuple)) else v
            for k, v in d.items()}


def split_header(blob: bytes):
    """Split a ``key=value`` header (terminated by an empty line) from its payload."""
    end = blob.find(b"\n\n")
    if end < 0:
        raise SchemaError("missing header terminator")
    header = {}
    for line in io.StringIO(blob[:end].decode("ascii")):
        key, sep, value = line.rstrip("\n").partition("=")
        if not sep:
            raise SchemaError(f"malformed header line {line!r}")
        header[key] = value
    return header, blob[end + 2:]


def init(arch: ArchSpec, spec: InitSpec = InitSpec(), draw_index: int = 0) -> TextCnnParams:
    """Glorot-uniform weights and zero biases.

    Fixed mode ignores ``draw_index`` and always yields the same values for
    a seed; random mode draws afresh for every ``(seed, draw_index)``.
    """
    if spec.mode == "fixed":
        rng = make_rng(spec.seed, "init", "fixed")
    else:
        rng = make_rng(spec.seed, "init", "random", int(draw_index))
    tensors = {}
    for name, shape in arch.param_shapes():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in, fan_out = init_fans(shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return TextCnnParams(arch, tensors)


def init_fans(shape) -> tuple:
    if len(shape) == 3:  # conv filters [f, h, d]
        f, h, d = shape
        return h * d, f
    return shape[0], shape[1]


def forward(params: TextCnnParams, x) -> Tensor:
    """Logits for ``x`` of shape ``[s, d]`` (returns ``[C]``) or ``[B, s, d]`` (``[B, C]``)."""
    arch = params.arch
    x = ad.as_tensor(x)
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[-1] != arch.embed_dim:
        raise DimensionError(f"expected [B, s, {arch.embed_dim}] input, got {x.shape}")
    if x.shape[1] < arch.min_length:
        raise DimensionError(f"sequence length {x.shape[1]} < largest filter {arch.min_length}")
    t = params.tensors
    f, d = arch.filters_per_height, arch.embed_dim
    pooled = []
    for h in arch.filter_heights:
        w = ad.transpose(ad.reshape(t[f"conv{h}.weight"], (f, h * d)))
        conv = ad.relu(ad.windows(x, h) @ w + t[f"conv{h}.bias"])  # [B, L, f]
        pooled.append(ad.max_over(conv, axis=1))
    hidden = ad.concat(pooled, axis=1) if len(pooled) > 1 else pooled[0]
    for i in range(arch.extra_fc_layers):
        hidden = ad.relu(hidden @ t[f"fc{i}.weight"] + t[f"fc{i}.bias"])
    logits = hidden @ t["out.weight"] + t["out.bias"]
    return ad.reshape(logits, (arch.classes,)) if single else logits


def loss(params: TextCnnParams, batch_x, batch_y, validate: bool = True) -> Tensor:
    """Mean soft-label cross-entropy over the batch."""
    batch_y = ad.as_tensor(batch_y)
    if batch_y.ndim != 2 or batch_y.shape[0] == 0:
        raise DimensionError("labels must be a non-empty [M, C] matrix")
    if batch_y.shape[1] != params.arch.classes:
        raise DimensionError(f"labels have {batch_y.shape[1]} classes, model has {params.arch.classes}")
    if validate:
        rows = batch_y.data.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-6):
            raise LabelError("every label row must sum to 1")
    logits = forward(params, batch_x)
    if logits.shape[0] != batch_y.shape[0]:
        raise DimensionError("inputs and labels differ in batch size")
    per_example = ad.neg(ad.sum(batch_y * ad.log_softmax(logits, axis=1), axis=1))
    return ad.mean(per_example)


def sgd_step(params: TextCnnParams, grads, lr) -> TextCnnParams:
    """``theta - lr * g`` for every tensor; recorded in the graph when grads are on."""
    grads = list(grads)
    if len(grads) != len(params.tensors):
        raise DimensionError("one gradient per parameter tensor is required")
    if not isinstance(lr, Tensor) and lr < 0:
        raise ValueError("learning rate must be non-negative")
    new = []
    for p, g in zip(params.values(), grads):
        g = ad.as_tensor(g)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        new.append(p - ad.mul(lr, g) if isinstance(lr, Tensor) else p - ad.scale(g, lr))
    return params.with_values(new)


def predict_logits(params: TextCnnParams, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    out = []
    with ad.no_grad():
        for start in range(0, len(x), batch_size):
            out.append(forward(params, x[start:start + batch_size]).data)
    return np.concatenate(out) if out else np.zeros((0, params.arch.classes))


def predict(params: TextCnnParams, x: np.ndarray) -> np.ndarray:
    return predict_logits(params, x).argmax(axis=1)
