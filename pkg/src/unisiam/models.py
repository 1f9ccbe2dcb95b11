"""Encoder stacks: MLP building block, head wiring, SGD, checkpoints.

A stack is a backbone plus small heads (projection, prediction,
optional distillation). All heads are plain MLPs over the autodiff
core. Parameters are float64 at runtime but are drawn through a
float32 round-trip at init so that a freshly saved checkpoint (float32
payload) reloads to bit-identical parameters.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import ContractViolationError, DivergenceError, FormatError
from .ioutil import atomic_write_bytes

CHECKPOINT_MAGIC = b"USIA"
CHECKPOINT_VERSION = 1
_MAX_RANK = 8


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one MLP: layer output widths, per-layer batch
    norm flags, and whether the final output is L2-normalized.

    ReLU follows every layer except the last; batch norm (when flagged)
    sits between the linear map and the ReLU.
    """

    in_dim: int
    widths: tuple[int, ...]
    batch_norm: tuple[bool, ...]
    normalize_output: bool = False

    def __post_init__(self):
        if self.in_dim < 1:
            raise ContractViolationError(f"in_dim must be >= 1, got {self.in_dim}")
        if not self.widths:
            raise ContractViolationError("MlpSpec needs at least one layer")
        if any(w < 1 for w in self.widths):
            raise ContractViolationError(f"layer widths must be >= 1, got {self.widths}")
        if len(self.batch_norm) != len(self.widths):
            raise ContractViolationError(
                f"batch_norm flags ({len(self.batch_norm)}) must match layer "
                f"count ({len(self.widths)})")

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> dict:
        return {"in_dim": self.in_dim, "widths": list(self.widths),
                "batch_norm": list(self.batch_norm),
                "normalize_output": self.normalize_output}

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(in_dim=int(d["in_dim"]), widths=tuple(int(w) for w in d["widths"]),
                       batch_norm=tuple(bool(b) for b in d["batch_norm"]),
                       normalize_output=bool(d["normalize_output"]))


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    # Round through float32 so checkpoint payloads represent fresh
    # parameters exactly.
    return w.astype(np.float32).astype(np.float64)


class Mlp:
    """A fully connected network holding its own parameter tensors."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator | None):
        self.spec = spec
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.gammas: dict[int, Tensor] = {}
        self.betas: dict[int, Tensor] = {}
        self.bn_states: dict[int, BatchNormState] = {}
        self.forward_calls = 0
        fan_in = spec.in_dim
        for i, width in enumerate(spec.widths):
            if rng is None:
                w = np.zeros((fan_in, width))
            else:
                w = _he_uniform(rng, fan_in, width)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(width), requires_grad=True))
            if spec.batch_norm[i]:
                self.gammas[i] = Tensor(np.ones(width), requires_grad=True)
                self.betas[i] = Tensor(np.zeros(width), requires_grad=True)
                self.bn_states[i] = BatchNormState(width)
            fan_in = width

    def forward(self, x, training: bool, *, update_running: bool = True) -> Tensor:
        if not isinstance(x, Tensor):
            x = ad.constant(np.asarray(x, dtype=np.float64))
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ContractViolationError(
                f"expected input (n, {self.spec.in_dim}), got {x.shape}")
        self.forward_calls += 1
        h = x
        last = len(self.spec.widths) - 1
        for i in range(last + 1):
            h = ad.add(ad.matmul(h, self.weights[i]), self.biases[i])
            if i in self.bn_states:
                h = ad.batch_norm(h, self.gammas[i], self.betas[i],
                                  self.bn_states[i], training,
                                  update_running=update_running)
            if i < last:
                h = ad.relu(h)
        if self.spec.normalize_output:
            h = ad.l2_normalize(h)
        return h

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i in range(len(self.spec.widths)):
            out.append((f"w{i}", self.weights[i]))
            out.append((f"b{i}", self.biases[i]))
            if i in self.gammas:
                out.append((f"bn{i}.gamma", self.gammas[i]))
                out.append((f"bn{i}.beta", self.betas[i]))
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, st in sorted(self.bn_states.items()):
            out.append((f"bn{i}.running_mean", st.running_mean))
            out.append((f"bn{i}.running_var", st.running_var))
        return out

    def bn_initialized_flags(self) -> list[bool]:
        return [self.bn_states[i].initialized for i in sorted(self.bn_states)]

    def set_bn_initialized_flags(self, flags: Iterable[bool]) -> None:
        keys = sorted(self.bn_states)
        flags = list(flags)
        if len(flags) != len(keys):
            raise FormatError(f"expected {len(keys)} batch-norm flags, got {len(flags)}")
        for k, f in zip(keys, flags):
            self.bn_states[k].initialized = bool(f)

    @property
    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.parameters())


_COMPONENT_ORDER = ("backbone", "proj", "pred", "dist")

STUDENT = "student"
TEACHER = "teacher"


class EncoderStack:
    """Backbone + projection (+ prediction, + distillation) heads.

    Role is either "student" (trainable) or "teacher" (frozen: all
    parameters have requires_grad=False and convenience forwards run in
    eval mode regardless of the flag passed).
    """

    def __init__(self, backbone: Mlp, proj: Mlp, pred: Mlp | None = None,
                 dist: Mlp | None = None, role: str = STUDENT):
        if role not in (STUDENT, TEACHER):
            raise ContractViolationError(f"unknown role {role!r}")
        if proj.spec.in_dim != backbone.spec.out_dim:
            raise ContractViolationError("projection input must match backbone output")
        if pred is not None and (pred.spec.in_dim != proj.spec.out_dim
                                 or pred.spec.out_dim != proj.spec.out_dim):
            raise ContractViolationError("prediction head must map z-space to z-space")
        if dist is not None and dist.spec.in_dim != backbone.spec.out_dim:
            raise ContractViolationError("distillation input must match backbone output")
        self.backbone = backbone
        self.proj = proj
        self.pred = pred
        self.dist = dist
        self.role = role
        if role == TEACHER:
            self.freeze()

    @property
    def input_dim(self) -> int:
        return self.backbone.spec.in_dim

    @property
    def embed_dim(self) -> int:
        return self.proj.spec.out_dim

    def components(self) -> list[tuple[str, Mlp]]:
        out = [("backbone", self.backbone), ("proj", self.proj)]
        if self.pred is not None:
            out.append(("pred", self.pred))
        if self.dist is not None:
            out.append(("dist", self.dist))
        return out

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for cname, mlp in self.components():
            out.extend((f"{cname}.{n}", p) for n, p in mlp.parameters())
        return out

    def freeze(self) -> None:
        self.role = TEACHER
        for _, p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def zero_grads(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def _training(self, training: bool) -> bool:
        return False if self.role == TEACHER else training

    def features(self, x, training: bool = False) -> Tensor:
        """Backbone representation h(x)."""
        return self.backbone.forward(x, self._training(training))

    def project(self, x, training: bool = False) -> Tensor:
        """Unit-norm embedding z = proj(backbone(x))."""
        h = self.features(x, training)
        return self.proj.forward(h, self._training(training))

    def distill_embed(self, x, training: bool = False) -> Tensor:
        if self.dist is None:
            raise ContractViolationError("stack has no distillation head")
        h = self.features(x, training)
        return self.dist.forward(h, self._training(training))


def default_stack(input_dim: int, rng: np.random.Generator, *,
                  with_pred: bool = True, with_dist: bool = False) -> EncoderStack:
    """Standard stack: backbone (input, 256, 256, 128), a 3-layer
    projection head and a 2-layer bottleneck prediction head (both to
    128-D, unit-norm output), and optionally a deep 5-layer
    distillation head with batch norm on every hidden layer.

    Components draw from rng in a fixed order (backbone, proj, pred,
    dist), so adding the distillation head does not shift the draws of
    the other three.
    """
    backbone = Mlp(MlpSpec(input_dim, (256, 256, 128), (True, True, False)), rng)
    proj = Mlp(MlpSpec(128, (256, 256, 128), (True, True, False),
                       normalize_output=True), rng)
    pred = None
    if with_pred:
        pred = Mlp(MlpSpec(128, (64, 128), (True, False), normalize_output=True), rng)
    dist = None
    if with_dist:
        dist = Mlp(MlpSpec(128, (256, 256, 256, 64, 128),
                           (True, True, True, True, False),
                           normalize_output=True), rng)
    return EncoderStack(backbone, proj, pred=pred, dist=dist)


# -- optimizer ----------------------------------------------------------


@dataclass
class SGDState:
    """Momentum SGD with decoupled-from-nothing weight decay (decay is
    added to the gradient, classic style) and a cosine learning-rate
    schedule over total_steps."""

    lr0: float
    total_steps: int
    momentum: float = 0.9
    weight_decay: float = 1e-4
    step: int = 0
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr0 < 0:
            raise ContractViolationError(f"lr0 must be >= 0, got {self.lr0}")
        if self.total_steps < 1:
            raise ContractViolationError("total_steps must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ContractViolationError(f"momentum out of [0, 1): {self.momentum}")
        if self.weight_decay < 0:
            raise ContractViolationError("weight_decay must be >= 0")


def cosine_lr(state: SGDState) -> float:
    """Learning rate for the step about to be taken.

    lr(0) == lr0, decaying along a half cosine to 0 at t == total_steps.
    """
    t = state.step
    if not (0 <= t <= state.total_steps):
        raise ContractViolationError(
            f"schedule step {t} outside [0, {state.total_steps}]")
    return float(0.5 * state.lr0 * (1.0 + np.cos(np.pi * t / state.total_steps)))


def sgd_step(params: list[tuple[str, Tensor]], state: SGDState) -> float:
    """Apply one momentum-SGD update in place. Returns the lr used.

    Every named parameter must carry a finite gradient; a missing
    gradient is a contract violation and a non-finite one is a
    divergence error.
    """
    lr = cosine_lr(state)
    updates = []
    for name, p in params:
        if p.grad is None:
            raise ContractViolationError(f"parameter {name!r} has no gradient")
        if not np.isfinite(p.grad).all():
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")
        updates.append((name, p, p.grad))
    for name, p, g in updates:
        buf = state.velocities.get(name)
        if buf is None:
            buf = np.zeros_like(p.data)
        buf = state.momentum * buf + (g + state.weight_decay * p.data)
        state.velocities[name] = buf
        p.data -= lr * buf
    state.step += 1
    return lr


# -- checkpoint io -------------------------------------------------------


def _stack_entries(stack: EncoderStack) -> list[tuple[str, np.ndarray]]:
    entries: list[tuple[str, np.ndarray]] = []
    for cname, mlp in stack.components():
        for n, p in mlp.parameters():
            entries.append((f"{cname}.{n}", p.data))
        for n, buf in mlp.buffers():
            entries.append((f"{cname}.{n}", buf))
    return entries


def save_checkpoint(stack: EncoderStack, path: str | os.PathLike,
                    extra_metadata: dict | None = None) -> None:
    """Write the stack to the binary checkpoint format (atomic)."""
    entries = _stack_entries(stack)
    meta = {
        "role": stack.role,
        "input_dim": stack.input_dim,
        "components": {
            cname: {"spec": mlp.spec.to_dict(),
                    "bn_initialized": mlp.bn_initialized_flags()}
            for cname, mlp in stack.components()
        },
    }
    if extra_metadata:
        meta["extra"] = extra_metadata
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(entries))
    for name, arr in entries:
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ContractViolationError(f"tensor name too long: {name!r}")
        if arr.ndim > _MAX_RANK:
            raise ContractViolationError(f"tensor rank {arr.ndim} exceeds {_MAX_RANK}")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    mb = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(mb))
    blob += mb
    atomic_write_bytes(path, bytes(blob))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated file while reading {what}", offset=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def read_checkpoint_entries(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Low-level reader: named float64 arrays (cast up from the float32
    payload) plus the metadata dict."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    version, count = r.unpack("<II", "header")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name_off = r.pos
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", offset=name_off)
        if name in arrays:
            raise FormatError(f"duplicate tensor name {name!r}", offset=name_off)
        (rank,) = r.unpack("<B", "tensor rank")
        if rank > _MAX_RANK:
            raise FormatError(f"tensor rank {rank} exceeds {_MAX_RANK}", offset=r.pos - 1)
        dims = r.unpack(f"<{rank}I", "tensor dims") if rank else ()
        size = 1
        for d in dims:
            size *= d
        payload = r.take(4 * size, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
        arrays[name] = arr
    (meta_len,) = r.unpack("<I", "metadata length")
    meta_off = r.pos
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad metadata JSON: {e}", offset=meta_off)
    if r.pos != len(blob):
        raise FormatError(f"{len(blob) - r.pos} trailing bytes after metadata",
                          offset=r.pos)
    return arrays, meta


def load_checkpoint(path: str | os.PathLike) -> EncoderStack:
    """Rebuild an encoder stack from a checkpoint file."""
    arrays, meta = read_checkpoint_entries(path)
    try:
        comp_meta = meta["components"]
        role = meta["role"]
    except (KeyError, TypeError):
        raise FormatError("metadata missing required keys")
    mlps: dict[str, Mlp] = {}
    for cname in _COMPONENT_ORDER:
        if cname not in comp_meta:
            continue
        spec = MlpSpec.from_dict(comp_meta[cname]["spec"])
        mlp = Mlp(spec, rng=None)
        for pname, p in mlp.parameters():
            key = f"{cname}.{pname}"
            if key not in arrays:
                raise FormatError(f"checkpoint missing tensor {key!r}")
            if arrays[key].shape != p.data.shape:
                raise FormatError(
                    f"tensor {key!r} has shape {arrays[key].shape}, "
                    f"expected {p.data.shape}")
            p.data = arrays[key]
        for bname, buf in mlp.buffers():
            key = f"{cname}.{bname}"
            if key not in arrays:
                raise FormatError(f"checkpoint missing buffer {key!r}")
            if arrays[key].shape != buf.shape:
                raise FormatError(f"buffer {key!r} has wrong shape")
            buf[...] = arrays[key]
        mlp.set_bn_initialized_flags(comp_meta[cname].get("bn_initialized", []))
        mlps[cname] = mlp
    if "backbone" not in mlps or "proj" not in mlps:
        raise FormatError("checkpoint lacks backbone or projection component")
    known = {f"{c}.{n}" for c, m in mlps.items()
             for n, _ in (m.parameters() + m.buffers())}
    unknown = set(arrays) - known
    if unknown:
        raise FormatError(f"checkpoint has unexpected tensors: {sorted(unknown)[:3]}")
    stack = EncoderStack(mlps["backbone"], mlps["proj"], pred=mlps.get("pred"),
                         dist=mlps.get("dist"), role=STUDENT)
    if role == TEACHER:
        stack.freeze()
    return stack
