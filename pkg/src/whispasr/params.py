"""Named parameter storage with freeze flags, plus the WCK1 checkpoint format."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

CHECKPOINT_MAGIC = b"WCK1"


@dataclass
class Param:
    value: np.ndarray
    layer_index: int
    frozen: bool = False
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class ParamStore:
    """Ordered mapping of parameter name to :class:`Param`.

    ``layer_index`` orders layer groups bottom (0, the feature extractor)
    to top.  Frozen entries keep their gradient buffer but the optimizer
    never touches their values.
    """

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value, layer_index: int, frozen: bool = False) -> Param:
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Param(np.array(value, dtype=np.float64), int(layer_index), bool(frozen))
        self._entries[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        """Add ``grad`` into the buffer of ``name`` unless the entry is frozen."""
        p = self._entries[name]
        if not p.frozen:
            p.grad += grad

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.grad.fill(0.0)

    def layer_groups(self) -> list[int]:
        return sorted({p.layer_index for p in self._entries.values()})

    def freeze_all(self) -> None:
        for p in self._entries.values():
            p.frozen = True

    def set_trainable_groups(self, groups) -> None:
        groups = set(groups)
        for p in self._entries.values():
            p.frozen = p.layer_index not in groups

    def frozen_flags(self) -> dict[str, bool]:
        return {k: p.frozen for k, p in self._entries.items()}

    def restore_flags(self, flags: dict[str, bool]) -> None:
        for k, f in flags.items():
            self._entries[k].frozen = f

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, p in self._entries.items():
            out.add(k, p.value.copy(), p.layer_index, p.frozen)
        return out

    def n_values(self) -> int:
        return sum(p.value.size for p in self._entries.values())

    def to_bytes(self) -> bytes:
        chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(self._entries))]
        for name, p in self._entries.items():
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<BII", int(p.frozen), p.layer_index, p.value.ndim))
            chunks.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
            chunks.append(p.value.astype("<f4").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ValueError("not a WCK1 checkpoint")
        (count,) = struct.unpack_from("<I", blob, 4)
        off = 8
        store = cls()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            frozen, layer_index, rank = struct.unpack_from("<BII", blob, off)
            off += 9
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            store.add(name, values.astype(np.float64), layer_index, bool(frozen))
        if off != len(blob):
            raise ValueError("trailing bytes in checkpoint")
        return store

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def round_to_f32(self) -> None:
        """Snap values onto the float32 grid the checkpoint stores."""
        for p in self._entries.values():
            p.value = p.value.astype(np.float32).astype(np.float64)
