"""Low-rank adaptors on the attention projections of the U-Net.

Adaptors live outside the bundle and are applied functionally at forward
time: a projection ``W`` with adaptor ``(A, B)`` computes
``W x + (alpha / r) * B (A x)`` without ever materialising ``B A``.
"""

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, IncompatibleCheckpointError, ShapeError

__all__ = [
    "LoRAAdaptor",
    "AdaptorSet",
    "init_adaptor_set",
    "adapted_projection",
    "trainable_parameters",
    "write_adaptors",
    "read_adaptors",
]

ADAPTOR_MAGIC = b"SILORA-AD"
ADAPTOR_VERSION = 1


@dataclass
class LoRAAdaptor:
    name: str
    A: torch.Tensor  # (r, d_in)
    B: torch.Tensor  # (d_out, r)
    scale: float

    @property
    def rank(self):
        return self.A.shape[0]

    @property
    def d_in(self):
        return self.A.shape[1]

    @property
    def d_out(self):
        return self.B.shape[0]

    def delta(self):
        """Materialised weight update ``(alpha / r) B A``; for inspection only."""
        return (self.scale / self.rank) * (self.B @ self.A)


class AdaptorSet:
    """Ordered map from attention site name to :class:`LoRAAdaptor`."""

    def __init__(self, adaptors, rank, scale):
        self._adaptors = {a.name: a for a in adaptors}
        self.rank = int(rank)
        self.scale = float(scale)
        for a in self._adaptors.values():
            if a.rank != self.rank:
                raise ConfigError(f"adaptor {a.name} has rank {a.rank}, set rank is {self.rank}")

    def __getitem__(self, name):
        return self._adaptors[name]

    def get(self, name, default=None):
        return self._adaptors.get(name, default)

    def __contains__(self, name):
        return name in self._adaptors

    def __iter__(self):
        return iter(self._adaptors.values())

    def __len__(self):
        return len(self._adaptors)

    @property
    def site_names(self):
        return list(self._adaptors)

    def to(self, dtype):
        """Detached copy with every factor cast to ``dtype``."""
        return AdaptorSet(
            [
                LoRAAdaptor(a.name, a.A.detach().to(dtype).requires_grad_(a.A.requires_grad),
                            a.B.detach().to(dtype).requires_grad_(a.B.requires_grad), a.scale)
                for a in self
            ],
            self.rank,
            self.scale,
        )

    def clone(self):
        return self.to(next(iter(self)).A.dtype) if len(self) else AdaptorSet([], self.rank, self.scale)

    def state(self):
        """``{name: (A, B)}`` as float32 numpy arrays."""
        return {a.name: (a.A.detach().cpu().numpy().astype(np.float32),
                         a.B.detach().cpu().numpy().astype(np.float32)) for a in self}


def init_adaptor_set(bundle, rank=8, scale=None, seed=0):
    """One adaptor per attention projection site of ``bundle``.

    ``A`` is drawn from U(-1/sqrt(d_in), 1/sqrt(d_in)), ``B`` starts at zero,
    and ``scale`` (alpha) defaults to ``rank`` so that alpha / r = 1.
    """
    sites = bundle.attention_sites
    if rank < 1:
        raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
    limit = min(min(s.d_in, s.d_out) for s in sites)
    if rank > limit:
        raise ConfigError(f"LoRA rank {rank} exceeds the smallest projection dimension {limit}")
    scale = float(rank if scale is None else scale)
    if scale <= 0:
        raise ConfigError("LoRA scale must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x10A,)))
    adaptors = []
    for s in sites:
        bound = 1.0 / np.sqrt(s.d_in)
        A = torch.from_numpy(rng.uniform(-bound, bound, size=(rank, s.d_in)).astype(np.float32))
        B = torch.zeros(s.d_out, rank, dtype=torch.float32)
        adaptors.append(LoRAAdaptor(s.name, A.requires_grad_(True), B.requires_grad_(True), scale))
    return AdaptorSet(adaptors, rank, scale)


def adapted_projection(x, W, a=None):
    """``x W^T`` plus the adaptor's low-rank update, for row-vector inputs.

    ``x`` has shape ``(..., d_in)``; ``W`` is ``(d_out, d_in)``.
    """
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match weight {tuple(W.shape)}")
    out = x @ W.T
    if a is None:
        return out
    if a.A.shape[1] != W.shape[1] or a.B.shape[0] != W.shape[0]:
        raise ShapeError(f"adaptor {a.name} factors do not fit weight {tuple(W.shape)}")
    return out + (a.scale / a.rank) * ((x @ a.A.T) @ a.B.T)


def trainable_parameters(s):
    """The A and B tensors of every adaptor, A before B, in site order."""
    params = []
    for a in s:
        params.extend((a.A, a.B))
    return params


def write_adaptors(fh, s):
    """Serialise an adaptor set to an open binary file."""
    fh.write(ADAPTOR_MAGIC)
    fh.write(struct.pack("<HIdI", ADAPTOR_VERSION, s.rank, s.scale, len(s)))
    for a in s:
        name = a.name.encode("utf-8")
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack("<II", a.d_in, a.d_out))
        fh.write(_f32(a.A))
        fh.write(_f32(a.B))


def read_adaptors(fh):
    """Inverse of :func:`write_adaptors`; factors come back trainable."""
    if fh.read(len(ADAPTOR_MAGIC)) != ADAPTOR_MAGIC:
        raise IncompatibleCheckpointError("not a silora adaptor file (bad magic)")
    version, rank, scale, n = struct.unpack("<HIdI", fh.read(18))
    if version != ADAPTOR_VERSION:
        raise IncompatibleCheckpointError(f"unsupported adaptor format version {version}")
    adaptors = []
    for _ in range(n):
        (ln,) = struct.unpack("<H", fh.read(2))
        name = fh.read(ln).decode("utf-8")
        d_in, d_out = struct.unpack("<II", fh.read(8))
        A = _read_f32(fh, (rank, d_in))
        B = _read_f32(fh, (d_out, rank))
        adaptors.append(LoRAAdaptor(name, A.requires_grad_(True), B.requires_grad_(True), scale))
    return AdaptorSet(adaptors, rank, scale)


def _f32(t):
    return t.detach().cpu().numpy().astype("<f4").tobytes()


def _read_f32(fh, shape):
    count = int(np.prod(shape))
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise IncompatibleCheckpointError("truncated adaptor file")
    return torch.from_numpy(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape))
