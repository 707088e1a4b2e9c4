"""Persistent index of labeled public datasets.

Each dataset is described by one JSON manifest (statistics, the stored
reconstruction curve, ranked best detectors). A top-level index file lists
manifest paths plus a schema version; it is replaced atomically on write.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from tda.dataset import TabularDataset, load_csv
from tda.errors import ValidationError
from tda.similarity import ReconstructionCurve, dataset_curve
from tda.zoo import DetectorSpec

SCHEMA_VERSION = 1


@lru_cache(maxsize=None)
def _schema(name):
    return json.loads(resources.files("tda.schemas").joinpath(name).read_text())


def _validate(doc, schema_name, source):
    try:
        jsonschema.validate(doc, _schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"{source}: schema violation at {where}: {exc.message}") from None


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def atomic_write_text(path, text):
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class BestModel:
    spec: DetectorSpec
    metric_name: str
    metric_value: float

    def to_dict(self):
        d = self.spec.to_dict()
        d.update(metric_name=self.metric_name, metric_value=float(self.metric_value))
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(DetectorSpec.from_dict(d), d["metric_name"], float(d["metric_value"]))


@dataclass(frozen=True)
class PublicIndexEntry:
    """One public dataset: statistics, curve and ranked best detectors.

    ``best_models`` is kept sorted by descending known metric.
    """

    dataset_name: str
    data_path: str
    n_samples: int
    n_features: int
    n_outliers: int
    curve: ReconstructionCurve
    best_models: tuple
    label_column: str = "label"
    manifest_path: Optional[str] = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.best_models:
            raise ValidationError(f"{self.dataset_name}: best_models must not be empty")
        if not 0 < self.n_outliers < self.n_samples:
            raise ValidationError(
                f"{self.dataset_name}: need 0 < n_outliers < n_samples, got {self.n_outliers}/{self.n_samples}"
            )
        ranked = sorted(self.best_models, key=lambda m: -m.metric_value)
        object.__setattr__(self, "best_models", tuple(ranked))

    @property
    def outlier_fraction(self) -> float:
        return self.n_outliers / self.n_samples

    def load(self) -> TabularDataset:
        """The labeled public dataset, read once and cached."""
        if "dataset" not in self._cache:
            ds = load_csv(self.data_path, self.label_column, name=self.dataset_name)
            self._check_stats(ds, self.data_path)
            self._cache["dataset"] = ds
        return self._cache["dataset"]

    def _check_stats(self, ds, source):
        found = (ds.n_samples, ds.n_features, ds.n_outliers)
        declared = (self.n_samples, self.n_features, self.n_outliers)
        if found != declared:
            raise ValidationError(
                f"{source}: manifest declares (n_samples, n_features, n_outliers)={declared}, data has {found}"
            )

    @classmethod
    def from_dataset(cls, ds: TabularDataset, best_models, data_path="", label_column="label"):
        """Entry backed by an in-memory labeled dataset."""
        if ds.labels is None:
            raise ValidationError(f"{ds.name}: public datasets need labels")
        models = tuple(m if isinstance(m, BestModel) else BestModel(*m) for m in best_models)
        entry = cls(
            dataset_name=ds.name, data_path=str(data_path), n_samples=ds.n_samples,
            n_features=ds.n_features, n_outliers=ds.n_outliers, curve=dataset_curve(ds),
            best_models=models, label_column=label_column,
        )
        entry._cache["dataset"] = ds
        return entry

    def to_manifest(self, relative_to=None) -> dict:
        data_path = self.data_path
        if relative_to is not None:
            data_path = os.path.relpath(data_path, relative_to)
        return {
            "name": self.dataset_name,
            "data_path": data_path,
            "label_column": self.label_column,
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "n_outliers": self.n_outliers,
            "curve": self.curve.to_list(),
            "best_models": [m.to_dict() for m in self.best_models],
        }


def load_manifest(path, write_back=True) -> PublicIndexEntry:
    """Read and validate one manifest; a missing curve is computed and persisted."""
    path = Path(path).resolve()
    doc = _read_json(path)
    _validate(doc, "manifest.schema.json", path)
    data_path = (path.parent / doc["data_path"]).resolve()
    if not data_path.is_file():
        raise ValidationError(f"{path}: data file {doc['data_path']} not found")
    try:
        models = tuple(BestModel.from_dict(m) for m in doc["best_models"])
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None

    curve = doc.get("curve")
    ds = None
    if curve is None:
        ds = load_csv(data_path, doc["label_column"], name=doc["name"])
        curve = dataset_curve(ds)
    else:
        curve = ReconstructionCurve.from_list(curve)

    entry = PublicIndexEntry(
        dataset_name=doc["name"], data_path=str(data_path), n_samples=doc["n_samples"],
        n_features=doc["n_features"], n_outliers=doc["n_outliers"], curve=curve,
        best_models=models, label_column=doc["label_column"], manifest_path=str(path),
    )
    if ds is not None:
        entry._check_stats(ds, path)
        entry._cache["dataset"] = ds
        if write_back:
            doc["curve"] = curve.to_list()
            atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
    return entry


@dataclass(frozen=True)
class PublicIndex:
    entries: tuple = ()
    version: int = 0

    def __post_init__(self):
        entries = tuple(sorted(self.entries, key=lambda e: e.dataset_name))
        seen = set()
        for e in entries:
            if e.dataset_name in seen:
                raise ValidationError(f"duplicate dataset name {e.dataset_name!r}")
            seen.add(e.dataset_name)
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def names(self):
        return [e.dataset_name for e in self.entries]

    def get(self, name) -> PublicIndexEntry:
        for e in self.entries:
            if e.dataset_name == name:
                return e
        raise KeyError(name)

    def without(self, name) -> "PublicIndex":
        return PublicIndex(tuple(e for e in self.entries if e.dataset_name != name), self.version)


def register_dataset(index: PublicIndex, entry: PublicIndexEntry) -> PublicIndex:
    """New index containing ``entry``; the input index is left untouched."""
    if entry.dataset_name in index.names():
        raise ValidationError(f"duplicate dataset name {entry.dataset_name!r}")
    return PublicIndex(index.entries + (entry,), index.version + 1)


def _is_index_doc(doc):
    return isinstance(doc, dict) and "manifests" in doc and "name" not in doc


def build_index(manifest_dir) -> PublicIndex:
    """Load every manifest ``*.json`` in a directory (index files are skipped)."""
    manifest_dir = Path(manifest_dir)
    if not manifest_dir.is_dir():
        raise ValidationError(f"not a directory: {manifest_dir}")
    entries = []
    for path in sorted(manifest_dir.glob("*.json")):
        if _is_index_doc(_read_json(path)):
            continue
        entry = load_manifest(path)
        for other in entries:
            if other.dataset_name == entry.dataset_name:
                raise ValidationError(
                    f"duplicate dataset name {entry.dataset_name!r} in {other.manifest_path} and {path}"
                )
        entries.append(entry)
    return PublicIndex(tuple(entries), version=1)


def save_index(index: PublicIndex, path) -> None:
    """Write the top-level index file listing each entry's manifest."""
    path = Path(path).resolve()
    listing = []
    for e in index.entries:
        if e.manifest_path is None:
            raise ValidationError(f"{e.dataset_name}: entry has no manifest on disk")
        listing.append(os.path.relpath(e.manifest_path, path.parent))
    doc = {"schema_version": SCHEMA_VERSION, "version": index.version, "manifests": listing}
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_index(path) -> PublicIndex:
    path = Path(path).resolve()
    doc = _read_json(path)
    _validate(doc, "index.schema.json", path)
    entries = [load_manifest(path.parent / rel) for rel in doc["manifests"]]
    return PublicIndex(tuple(entries), version=doc["version"])


def write_manifest(entry: PublicIndexEntry, path) -> PublicIndexEntry:
    """Persist ``entry`` as a manifest at ``path``; returns the entry bound to it."""
    path = Path(path).resolve()
    atomic_write_text(path, json.dumps(entry.to_manifest(relative_to=path.parent), indent=2) + "\n")
    bound = PublicIndexEntry(
        entry.dataset_name, entry.data_path, entry.n_samples, entry.n_features, entry.n_outliers,
        entry.curve, entry.best_models, entry.label_column, str(path),
    )
    bound._cache.update(entry._cache)
    return bound
