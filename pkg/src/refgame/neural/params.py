"""Named parameter store with matching gradient buffers and a versioned,
exactly round-tripping checkpoint format (JSON map name -> shape/dtype/raw
little-endian bytes, base64)."""

from __future__ import annotations

import base64
import json
import math

import numpy as np

from ..errors import SchemaError
from ..io import atomic_write_text

CHECKPOINT_VERSION = 1


class ParamStore:
    """Ordered mapping name -> parameter array, plus a same-shaped gradient
    buffer per parameter.  Initialization is deterministic given the seed:
    matrices are uniform(-a, a) with a = 1/sqrt(fan_in), vectors zeros."""

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, shape: tuple[int, ...], init: str = "auto") -> np.ndarray:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        if init == "auto":
            init = "uniform" if len(shape) >= 2 else "zeros"
        if init == "zeros":
            value = np.zeros(shape, dtype=self.dtype)
        elif init == "uniform":
            a = 1.0 / math.sqrt(shape[-1])
            value = self.rng.uniform(-a, a, size=shape).astype(self.dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.params[name] = value
        self.grads[name] = np.zeros(shape, dtype=self.dtype)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def scale_grads(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def grad_global_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float(np.sum(g * g))
        return math.sqrt(total)

    def clip_grad_global_norm(self, max_norm: float) -> float:
        norm = self.grad_global_norm()
        if norm > max_norm > 0:
            self.scale_grads(max_norm / norm)
        return norm

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.params):
            raise ValueError("parameter name mismatch while loading values")
        for k, v in values.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k][...] = v

    # --- checkpoint io ----------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "format": "refgame-params",
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "dtype": self.dtype.name,
            "params": {
                name: {
                    "shape": list(arr.shape),
                    "dtype": arr.dtype.name,
                    "data": base64.b64encode(
                        np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
                    ).decode("ascii"),
                }
                for name, arr in self.params.items()
            },
        }

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_json_obj()))

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ParamStore":
        if obj.get("format") != "refgame-params":
            raise SchemaError("not a parameter checkpoint")
        if obj.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"unsupported checkpoint version {obj.get('version')!r}")
        store = cls(seed=int(obj.get("seed", 0)), dtype=np.dtype(obj["dtype"]))
        for name, rec in obj["params"].items():
            dt = np.dtype(rec["dtype"]).newbyteorder("<")
            arr = np.frombuffer(base64.b64decode(rec["data"]), dtype=dt)
            arr = arr.astype(np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
            store.params[name] = arr
            store.grads[name] = np.zeros_like(arr)
        return store

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_obj(json.load(f))
