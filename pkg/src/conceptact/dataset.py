"""Demonstration episodes and the on-disk dataset directory format.

Layout::

    <root>/manifest.json            version, schema, episodes, dims
    <root>/ep_00000/proprio.f32     T x d_s   little-endian float32
    <root>/ep_00000/actions.f32     T x d_a   little-endian float32
    <root>/ep_00000/cam0.u8         T x H x W x 3 bytes (one file per camera)
    <root>/ep_00000/meta.json       annotation, scenario_id, T
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .concepts import ConceptError, ConceptSchema, EpisodeAnnotation

FORMAT_VERSION = "conceptact-dataset/1"


class DatasetError(ValueError):
    pass


class DatasetVersionError(DatasetError):
    pass


class TruncatedArrayError(DatasetError):
    pass


class SchemaMismatchError(DatasetError):
    pass


@dataclass
class Episode:
    proprio: np.ndarray          # (T, d_s) float32
    actions: np.ndarray          # (T, d_a) float32
    images: np.ndarray           # (T, cameras, H, W, 3) uint8
    annotation: EpisodeAnnotation
    scenario_id: str
    scenario: dict = field(default_factory=dict)

    def __post_init__(self):
        T = len(self.proprio)
        if T < 1:
            raise DatasetError("episodes need at least one step")
        if len(self.actions) != T or len(self.images) != T:
            raise DatasetError("proprio, actions and images must share the time axis")

    @property
    def length(self) -> int:
        return len(self.proprio)


@dataclass
class Dataset:
    schema: ConceptSchema
    episodes: list[Episode]
    task: str = ""

    @property
    def dims(self) -> dict:
        if not self.episodes:
            return {"d_s": 0, "d_a": 0, "H": 0, "W": 0, "cameras": 0}
        ep = self.episodes[0]
        return {"d_s": int(ep.proprio.shape[1]), "d_a": int(ep.actions.shape[1]),
                "H": int(ep.images.shape[2]), "W": int(ep.images.shape[3]),
                "cameras": int(ep.images.shape[1])}

    def __len__(self) -> int:
        return len(self.episodes)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.schema, [self.episodes[i] for i in indices], self.task)

    def validate(self) -> None:
        dims = self.dims
        for i, ep in enumerate(self.episodes):
            if (ep.proprio.shape[1], ep.actions.shape[1]) != (dims["d_s"], dims["d_a"]) or \
                    ep.images.shape[1:] != (dims["cameras"], dims["H"], dims["W"], 3):
                raise DatasetError(f"episode {i} dimensions differ from the dataset")
            try:
                ep.annotation.validate(self.schema)
            except ConceptError as exc:
                raise SchemaMismatchError(f"episode {i}: {exc}") from exc


def _write(path: Path, arr: np.ndarray, dtype: str) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes())


def _read(path: Path, dtype: str, shape: tuple) -> np.ndarray:
    raw = path.read_bytes()
    dt = np.dtype(dtype)
    expected = int(np.prod(shape)) * dt.itemsize
    if len(raw) != expected:
        raise TruncatedArrayError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save_dataset(dataset: Dataset, path) -> Path:
    dataset.validate()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    dims = dataset.dims
    index = []
    for i, ep in enumerate(dataset.episodes):
        name = f"ep_{i:05d}"
        d = root / name
        d.mkdir(exist_ok=True)
        _write(d / "proprio.f32", ep.proprio, "<f4")
        _write(d / "actions.f32", ep.actions, "<f4")
        for c in range(dims["cameras"]):
            _write(d / f"cam{c}.u8", ep.images[:, c], "u1")
        meta = {
            "T": ep.length,
            "scenario_id": ep.scenario_id,
            "scenario": ep.scenario,
            "annotation": {k: np.asarray(v).astype(int).tolist() for k, v in ep.annotation.vectors.items()},
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=1))
        index.append({"dir": name, "T": ep.length, "scenario_id": ep.scenario_id})
    manifest = {
        "version": FORMAT_VERSION,
        "task": dataset.task,
        "schema": dataset.schema.to_list(),
        "episodes": index,
        "dims": dims,
        "dtypes": {"proprio": "<f4", "actions": "<f4", "images": "u1"},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetVersionError(f"unsupported dataset version {manifest.get('version')!r}")
    schema = ConceptSchema.from_dict(manifest["schema"])
    dims = manifest["dims"]
    episodes = []
    for entry in manifest["episodes"]:
        d = root / entry["dir"]
        meta = json.loads((d / "meta.json").read_text())
        T = int(meta["T"])
        proprio = _read(d / "proprio.f32", "<f4", (T, dims["d_s"]))
        actions = _read(d / "actions.f32", "<f4", (T, dims["d_a"]))
        cams = [_read(d / f"cam{c}.u8", "u1", (T, dims["H"], dims["W"], 3)) for c in range(dims["cameras"])]
        images = np.stack(cams, axis=1) if cams else np.zeros((T, 0, dims["H"], dims["W"], 3), np.uint8)
        vectors = {k: np.asarray(v, dtype=np.int8) for k, v in meta["annotation"].items()}
        annotation = EpisodeAnnotation(vectors)
        try:
            annotation.validate(schema)
        except ConceptError as exc:
            raise SchemaMismatchError(f"{entry['dir']}: {exc}") from exc
        episodes.append(Episode(proprio, actions, images, annotation, meta["scenario_id"],
                                meta.get("scenario", {})))
    return Dataset(schema, episodes, manifest.get("task", ""))
