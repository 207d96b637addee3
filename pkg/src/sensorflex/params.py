"""Named parameter store with gradient slots, frozen tensors, and checkpoint IO.

Checkpoint layout (little-endian): magic "SFXM", u32 version, u32 JSON length,
JSON-encoded model config, then each tensor in declaration order as
u32 name length, utf-8 name, u32 ndim, u32 dims..., raw float64 data.
Save -> load round-trips bit-exactly.
"""

import json
import struct

import numpy as np

from .errors import ConfigError, DataError, NumericError

MAGIC = b"SFXM"
VERSION = 1


class ParamStore:
    """Ordered name -> float64 array mapping with parallel gradient slots.

    A gradient slot is None until the backward pass touches it; tensors whose
    slot is still None after a step took no part in the computation and are
    skipped entirely by the optimizer (no update, no weight decay).
    """

    def __init__(self):
        self.tensors: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray | None] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray, frozen: bool = False):
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter {name}")
        self.tensors[name] = np.ascontiguousarray(value, dtype=np.float64)
        self.grads[name] = None
        if frozen:
            self.frozen.add(name)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list:
        return list(self.tensors)

    def trainable_names(self) -> list:
        return [n for n in self.tensors if n not in self.frozen]

    def n_trainable(self) -> int:
        return sum(self.tensors[n].size for n in self.trainable_names())

    def zero_grads(self):
        for n in self.grads:
            self.grads[n] = None

    def accumulate(self, name: str, g: np.ndarray):
        """Add into a gradient slot. Frozen tensors never accumulate."""
        if name in self.frozen:
            return
        t = self.tensors[name]
        if g.shape != t.shape:
            raise NumericError(f"gradient shape {g.shape} != parameter shape {t.shape} for {name}")
        if self.grads[name] is None:
            self.grads[name] = np.array(g, dtype=np.float64)
        else:
            self.grads[name] += g

    def grad(self, name: str) -> np.ndarray:
        """Gradient buffer view; zeros for untouched tensors."""
        g = self.grads[name]
        return np.zeros_like(self.tensors[name]) if g is None else g

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, t in self.tensors.items():
            out.add(n, t.copy(), frozen=n in self.frozen)
        return out

    def shadow(self) -> "ParamStore":
        """View sharing this store's tensors but with private gradient slots.

        Lets worker threads run backward passes concurrently; the caller
        merges shadow grads back in a fixed order.
        """
        out = ParamStore.__new__(ParamStore)
        out.tensors = self.tensors
        out.grads = {n: None for n in self.tensors}
        out.frozen = self.frozen
        return out

    # -- checkpoint IO ------------------------------------------------------

    def save(self, path, config_dict: dict):
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            blob = json.dumps(config_dict, sort_keys=True).encode("utf-8")
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for name, t in self.tensors.items():
                nb = name.encode("utf-8")
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", t.ndim))
                f.write(struct.pack(f"<{t.ndim}I", *t.shape))
                f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())

    @staticmethod
    def load(path) -> tuple:
        """Returns (tensors_in_order, config_dict); caller rebuilds the store."""
        with open(path, "rb") as f:
            if f.read(4) != MAGIC:
                raise DataError(f"{path}: not a checkpoint file")
            (version,) = struct.unpack("<I", f.read(4))
            if version != VERSION:
                raise DataError(f"{path}: unsupported checkpoint version {version}")
            (jlen,) = struct.unpack("<I", f.read(4))
            config = json.loads(f.read(jlen).decode("utf-8"))
            tensors = []
            while True:
                head = f.read(4)
                if not head:
                    break
                (nlen,) = struct.unpack("<I", head)
                name = f.read(nlen).decode("utf-8")
                (ndim,) = struct.unpack("<I", f.read(4))
                shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
                count = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
                tensors.append((name, np.array(data, dtype=np.float64)))
        return tensors, config
