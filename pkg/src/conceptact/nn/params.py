"""Named parameter storage, seeded initialisation and checkpoint files."""
from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = "conceptact-ckpt/1"


class CheckpointError(ValueError):
    pass


def _name_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by name so adding a parameter never shifts the others' values
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def init_array(kind: str, shape: tuple, seed: int, name: str) -> np.ndarray:
    """Float64 initial values; callers cast to the store dtype."""
    rng = _name_rng(seed, name)
    if kind == "uniform":
        fan_in = shape[-2] if len(shape) > 1 else shape[-1]
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    if kind == "normal":
        return 0.02 * rng.standard_normal(shape)
    raise ValueError(f"unknown init kind {kind!r}")


class ParameterStore:
    """Ordered mapping of parameter name -> :class:`Tensor` leaf."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()

    def create(self, name: str, shape, init: str = "uniform") -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        data = init_array(init, shape, self.seed, name).astype(self.dtype)
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def trainable(self):
        return [(n, t) for n, t in self._params.items() if n not in self.frozen]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise CheckpointError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for n, arr in state.items():
            if n not in self._params:
                continue
            t = self._params[n]
            if t.data.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {n}: {arr.shape} vs {t.data.shape}")
            t.data[...] = arr.astype(self.dtype)

    def set(self, name: str, value) -> None:
        t = self._params[name]
        t.data[...] = np.asarray(value, dtype=self.dtype)

    # -- checkpoint files -------------------------------------------------
    def save(self, path, metadata: dict | None = None) -> Path:
        return save_checkpoint(self, path, metadata)


def save_checkpoint(store: ParameterStore, path, metadata: dict | None = None) -> Path:
    """Write ``manifest.json`` + little-endian ``params.bin`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dtype = store.dtype.newbyteorder("<")
    entries, offset = [], 0
    with open(path / "params.bin", "wb") as fh:
        for name, t in store.items():
            raw = np.ascontiguousarray(t.data, dtype=dtype).tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(t.data.shape), "offset": offset,
                            "nbytes": len(raw)})
            offset += len(raw)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "dtype": dtype.str,
        "seed": store.seed,
        "frozen": sorted(store.frozen),
        "params": entries,
        "metadata": metadata or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    dtype = np.dtype(manifest["dtype"])
    payload = (path / "params.bin").read_bytes()
    store = ParameterStore(seed=manifest["seed"], dtype=dtype.newbyteorder("="))
    for e in manifest["params"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"truncated payload at {e['name']}")
        arr = np.frombuffer(payload[e["offset"]:end], dtype=dtype).reshape(e["shape"])
        store._params[e["name"]] = Tensor(arr.astype(store.dtype), requires_grad=True, name=e["name"])
    store.frozen = set(manifest.get("frozen", []))
    return store, manifest.get("metadata", {})
