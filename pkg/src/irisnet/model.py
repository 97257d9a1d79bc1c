"""IrisNet encoder-decoder built from RetinaConv blocks.

Topology (``n`` pooled levels)::

    enc_l : (RetinaConv -> BN -> ReLU) x2, maxpool 2x2       l = 0 .. n-1
    mid   : (RetinaConv -> BN -> ReLU) x2
    dec_l : 2x2 transposed conv (stride 2), concat skip enc_l,
            (RetinaConv -> BN -> ReLU) x2                   l = n-1 .. 0
    head  : 1x1 conv to 2 channels -> channel softmax

Channel 0 of the output is background, channel 1 foreground.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal

import numpy as np

from irisnet.ops import BatchNormState, ConvSpec, batchnorm2d, conv2d, maxpool2d, relu, softmax_channels, transposed_conv2d
from irisnet.retinaconv import RetinaConvLayer, retinaconv_forward, retinaconv_reference
from irisnet.tensor import ShapeError, Tensor, concat_channels

INIT_SCHEME = "fan_in_uniform"
CHECKPOINT_MAGIC = b"IRISNET\x00"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def default_dilations(levels: int, interior: int = 2) -> tuple[int, ...]:
    """Dilation 1 at both ends of the network, ``interior`` everywhere else."""
    n = 2 * levels + 1
    return tuple(1 if i in (0, n - 1) else interior for i in range(n))


@dataclass(frozen=True)
class ArchConfig:
    depth: int = 4
    base_filters: int = 16
    dilation_schedule: tuple[int, ...] | None = None
    input_size: int = 128
    in_channels: int = 1
    out_classes: int = 2
    ks: int = 3
    kd: int = 3
    bottleneck: bool = True
    # Initial foreground probability set through the head bias; 0.5 means a zero bias.
    foreground_prior: float = 0.1

    def __post_init__(self):
        if self.dilation_schedule is None:
            object.__setattr__(self, "dilation_schedule", default_dilations(self.levels))
        else:
            object.__setattr__(self, "dilation_schedule", tuple(int(d) for d in self.dilation_schedule))
        self.validate()

    @property
    def levels(self) -> int:
        """Number of pooled encoder levels (each with a decoder partner)."""
        return self.depth if self.bottleneck else self.depth - 1

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.levels < 1:
            raise ConfigError("depth must be >= 2 when bottleneck is disabled")
        if self.base_filters < 1:
            raise ConfigError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.in_channels != 1:
            raise ConfigError(f"in_channels must be 1 (grayscale), got {self.in_channels}")
        if self.out_classes != 2:
            raise ConfigError(f"out_classes must be 2 (background, foreground), got {self.out_classes}")
        for name in ("ks", "kd"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be a positive odd integer, got {k}")
        if self.input_size < 1 or self.input_size % (2**self.depth):
            raise ConfigError(f"input_size {self.input_size} must be divisible by 2**depth = {2**self.depth}")
        if not 0.0 < self.foreground_prior < 1.0:
            raise ConfigError(f"foreground_prior must lie in (0, 1), got {self.foreground_prior}")
        sched = self.dilation_schedule
        if len(sched) != 2 * self.levels + 1:
            raise ConfigError(
                f"dilation_schedule needs {2 * self.levels + 1} entries (encoders, middle, decoders), got {len(sched)}"
            )
        if any(d < 1 for d in sched):
            raise ConfigError(f"dilation_schedule entries must be >= 1, got {sched}")
        if sched[0] != 1 or sched[-1] != 1:
            raise ConfigError(f"dilation_schedule must be 1 at the first encoder and last decoder level, got {sched}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_schedule"] = list(self.dilation_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ArchConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Block:
    """One (RetinaConv -> BN -> ReLU) x2 stage."""

    name: str
    cin: int
    cout: int
    dilation: int
    skip_from: str | None = None  # encoder block whose output is concatenated in


@dataclass
class Model:
    config: ArchConfig
    params: dict[str, Tensor]
    bn: dict[str, BatchNormState]
    blocks: list[Block] = field(default_factory=list)

    def retina(self, name: str) -> RetinaConvLayer:
        p, block = self.params, self.block(name.rsplit(".", 1)[0])
        return RetinaConvLayer(p[f"{name}.g"], p[f"{name}.h"], block.dilation, p[f"{name}.bias"])

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def copy(self) -> "Model":
        return Model(self.config, dict(self.params), {k: v.copy() for k, v in self.bn.items()}, copy.deepcopy(self.blocks))


def _topology(cfg: ArchConfig) -> list[Block]:
    n, base, sched = cfg.levels, cfg.base_filters, cfg.dilation_schedule
    blocks = []
    cin = cfg.in_channels
    for lvl in range(n):
        cout = base * 2**lvl
        blocks.append(Block(f"enc{lvl}", cin, cout, sched[lvl]))
        cin = cout
    blocks.append(Block("mid", cin, base * 2**n, sched[n]))
    for lvl in reversed(range(n)):
        cout = base * 2**lvl
        blocks.append(Block(f"dec{lvl}", 2 * cout, cout, sched[2 * n - lvl], skip_from=f"enc{lvl}"))
    return blocks


def _param_shapes(cfg: ArchConfig, blocks: list[Block]) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) in declaration order; fan_in 0 marks zero-init, -1 marks one-init."""
    out = []
    ks, kd = cfg.ks, cfg.kd
    prev = None
    for b in blocks:
        if b.skip_from is not None:
            up_in = prev.cout
            out.append((f"{b.name}.up.kernel", (up_in, b.cout, 2, 2), up_in))
        c = b.cin
        for r in (1, 2):
            rc = f"{b.name}.rc{r}"
            fan = c * (ks * ks + kd * kd)
            out += [
                (f"{rc}.g", (b.cout, c, ks, ks), fan),
                (f"{rc}.h", (b.cout, c, kd, kd), fan),
                (f"{rc}.bias", (b.cout,), 0),
                (f"{b.name}.bn{r}.gamma", (b.cout,), -1),
                (f"{b.name}.bn{r}.beta", (b.cout,), 0),
            ]
            c = b.cout
        prev = b
    last = blocks[-1].cout
    out += [("head.kernel", (cfg.out_classes, last, 1, 1), last), ("head.bias", (cfg.out_classes,), 0)]
    return out


def build_irisnet(config: ArchConfig, seed: int = 0) -> Model:
    """Fresh model with seeded fan-in-scaled uniform weights and unit BN scales.

    Biases start at zero except the head, whose foreground logit is offset so the
    untrained model predicts ``config.foreground_prior`` everywhere.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    blocks = _topology(config)
    params: dict[str, Tensor] = {}
    for name, shape, fan in _param_shapes(config, blocks):
        if fan > 0:
            bound = np.sqrt(6.0 / fan)
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.full(shape, 1.0 if fan == -1 else 0.0)
        params[name] = Tensor._wrap(arr)
    # Thin structures cover a small fraction of the image; starting the head at that
    # prior spares the optimizer hundreds of steps spent only on the background logit.
    pi = config.foreground_prior
    params["head.bias"] = Tensor._wrap(np.array([0.0, np.log(pi / (1.0 - pi))]))
    bn = {f"{b.name}.bn{r}": BatchNormState(b.cout) for b in blocks for r in (1, 2)}
    return Model(config, params, bn, blocks)


def _double_block(model: Model, x: Tensor, name: str, mode: str, path: str) -> Tensor:
    conv = retinaconv_forward if path == "fused" else retinaconv_reference
    p = model.params
    for r in (1, 2):
        x = conv(x, model.retina(f"{name}.rc{r}"))
        x = batchnorm2d(x, p[f"{name}.bn{r}.gamma"], p[f"{name}.bn{r}.beta"], model.bn[f"{name}.bn{r}"], mode)
        x = relu(x)
    return x


def forward(
    model: Model,
    batch: Tensor,
    mode: Literal["train", "eval"] = "eval",
    path: Literal["fused", "reference"] = "fused",
) -> Tensor:
    """Per-pixel (background, foreground) probabilities, shape B x 2 x H x W."""
    cfg = model.config
    s = cfg.input_size
    if batch.ndim != 4 or batch.shape[1] != cfg.in_channels or batch.shape[2:] != (s, s):
        raise ShapeError(
            f"input must be B x {cfg.in_channels} x {s} x {s}, got {batch.shape}; resize or pad images to {s}x{s}"
        )
    if path not in ("fused", "reference"):
        raise ValueError(f"path must be 'fused' or 'reference', got {path!r}")
    skips: dict[str, Tensor] = {}
    x = batch
    for b in model.blocks:
        if b.skip_from is not None:
            x = transposed_conv2d(x, model.params[f"{b.name}.up.kernel"], stride=2)
            x = concat_channels(skips[b.skip_from], x)
        x = _double_block(model, x, b.name, mode, path)
        if b.name.startswith("enc"):
            skips[b.name] = x
            x, _ = maxpool2d(x)
    logits = conv2d(x, model.params["head.kernel"], model.params["head.bias"], ConvSpec(kernel_size=1))
    return softmax_channels(logits)


def count_parameters(model: Model) -> int:
    """Learnable scalars; BN running statistics are state, not parameters."""
    return sum(t.size for t in model.params.values())


# --- checkpoints -------------------------------------------------------------

def checkpoint_bytes(model: Model) -> bytes:
    header = {
        "arch": model.config.to_dict(),
        "init": INIT_SCHEME,
        "params": [[k, list(t.shape)] for k, t in model.params.items()],
        "bn": [[k, s.channels, s.initialized, s.eps, s.momentum] for k, s in model.bn.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)), hbytes]
    for t in model.params.values():
        parts.append(t.data.astype("<f8").tobytes())
    for s in model.bn.values():
        parts.append(np.asarray(s.running_mean, dtype="<f8").tobytes())
        parts.append(np.asarray(s.running_var, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.blake2b(body, digest_size=8).digest()


def model_from_bytes(blob: bytes, expected: ArchConfig | None = None) -> Model:
    n_magic = len(CHECKPOINT_MAGIC)
    if len(blob) < n_magic + 12 + 8 or blob[:n_magic] != CHECKPOINT_MAGIC:
        raise CheckpointError("not an IrisNet checkpoint (bad magic or truncated header)")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch: file is corrupt or truncated")
    version, hlen = struct.unpack_from("<IQ", blob, n_magic)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    off = n_magic + 12
    header = json.loads(body[off : off + hlen].decode("utf-8"))
    off += hlen
    config = ArchConfig.from_dict(header["arch"])
    if expected is not None:
        for f in fields(ArchConfig):
            a, b = getattr(expected, f.name), getattr(config, f.name)
            if a != b:
                raise CheckpointError(f"checkpoint ArchConfig mismatch in field '{f.name}': checkpoint has {b!r}, expected {a!r}")
    model = build_irisnet(config, seed=0)
    if [[k, list(t.shape)] for k, t in model.params.items()] != header["params"]:
        raise CheckpointError("checkpoint parameter manifest does not match the architecture")

    def take(n):
        nonlocal off
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        return arr

    for k, t in model.params.items():
        model.params[k] = Tensor._wrap(take(t.size).reshape(t.shape))
    for k, channels, initialized, eps, momentum in header["bn"]:
        st = model.bn[k]
        st.eps, st.momentum, st.initialized = eps, momentum, initialized
        st.running_mean = take(channels)
        st.running_var = take(channels)
    if off != len(body):
        raise CheckpointError(f"checkpoint has {len(body) - off} trailing bytes")
    return model


def save_checkpoint(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path: str | Path, expected: ArchConfig | None = None) -> Model:
    """Load and verify a checkpoint; ``expected`` enforces a matching ArchConfig."""
    return model_from_bytes(Path(path).read_bytes(), expected)
