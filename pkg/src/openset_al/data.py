"""Dataset ingestion, pool bookkeeping, and the per-sample label state machine.

File formats
------------
Embeddings are a little-endian binary file: magic ``OPEB``, version u32=1,
N u64, D u32, dtype u8 (0 = IEEE-754 float32), then N*D scalars row-major.
Metadata is UTF-8 JSON-lines with one object per row: ``id`` (string),
``label`` (int, -1 if unknown), optional ``image`` (relative path). Row order
defines the embedding index.
"""

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ConsistencyError, IngestionError

MAGIC = b"OPEB"
FORMAT_VERSION = 1
DTYPE_F32 = 0

NON_TARGET = -1  # committed label value for out-of-distribution samples


@dataclass(frozen=True)
class LabelState:
    """A committed annotation: an ID class index or the non-target marker.

    Unlabeled samples are represented by absence from ``PoolState.labeled``,
    so a LabelState is never "unlabeled".
    """

    class_index: int

    @staticmethod
    def id_class(c: int) -> "LabelState":
        if c < 0:
            raise ValueError("ID class index must be non-negative")
        return LabelState(c)

    @staticmethod
    def non_target() -> "LabelState":
        return LabelState(NON_TARGET)

    @property
    def is_id(self) -> bool:
        return self.class_index >= 0


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    embedding_index: int
    oracle_label: int | None = None  # full fine-grained index, None if unknown
    image_ref: str | None = None

    def is_oracle_id(self, id_count: int) -> bool | None:
        """Ground-truth ID-ness (label < C), or None when unknown."""
        if self.oracle_label is None:
            return None
        return self.oracle_label < id_count


@dataclass(frozen=True)
class Dataset:
    embeddings: np.ndarray  # N x D, float64
    samples: tuple[SampleRecord, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "_index_by_id", {s.sample_id: s.embedding_index for s in self.samples}
        )

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def index_of(self, sample_id: str) -> int:
        return self._index_by_id[sample_id]

    def record(self, sample_id: str) -> SampleRecord:
        return self.samples[self._index_by_id[sample_id]]


@dataclass(frozen=True)
class PoolState:
    """Partition of sample ids into the unlabeled pool and the labeled set."""

    unlabeled_ids: tuple[str, ...]
    labeled: dict[str, LabelState] = field(default_factory=dict)
    round: int = 0

    @staticmethod
    def initial(sample_ids) -> "PoolState":
        ids = tuple(sample_ids)
        if len(set(ids)) != len(ids):
            raise ConsistencyError("duplicate sample ids in pool")
        return PoolState(unlabeled_ids=ids)

    @property
    def size(self) -> int:
        return len(self.unlabeled_ids) + len(self.labeled)

    def commit_labels(self, labels: dict[str, LabelState]) -> "PoolState":
        """Move every labeled id out of the unlabeled pool; round += 1.

        Relabeling or labeling an unknown id raises; an empty map is a no-op
        except for the round counter.
        """
        unlabeled = set(self.unlabeled_ids)
        for sid in labels:
            if sid in self.labeled:
                raise ConsistencyError(f"sample {sid!r} is already labeled")
            if sid not in unlabeled:
                raise ConsistencyError(f"sample {sid!r} is not in the unlabeled pool")
        new_labeled = dict(self.labeled)
        new_labeled.update(labels)
        remaining = tuple(sid for sid in self.unlabeled_ids if sid not in labels)
        return replace(
            self, unlabeled_ids=remaining, labeled=new_labeled, round=self.round + 1
        )

    def check_partition(self, total: int) -> None:
        unlabeled = set(self.unlabeled_ids)
        if unlabeled & set(self.labeled):
            raise ConsistencyError("unlabeled and labeled sets overlap")
        if len(unlabeled) + len(self.labeled) != total:
            raise ConsistencyError("pool partition does not cover the dataset")


@dataclass(frozen=True)
class ClassCatalog:
    id_class_names: tuple[str, ...]
    ood_class_names: tuple[str, ...]
    task_description: str = ""

    def __post_init__(self):
        if len(self.id_class_names) < 2:
            raise ConfigError("need at least two ID classes")
        names = list(self.id_class_names) + list(self.ood_class_names)
        if len(set(names)) != len(names):
            raise ConfigError("class names must be unique")

    @property
    def id_count(self) -> int:
        return len(self.id_class_names)

    @property
    def ood_count(self) -> int:
        return len(self.ood_class_names)

    @property
    def all_names(self) -> tuple[str, ...]:
        return self.id_class_names + self.ood_class_names


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 20
    weight_decay: float = 8e-4
    hidden_dim: int = 256
    batch_size: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    budget_L: int = 50
    rounds_R: int = 5
    percentile_M: float = 25.0
    batches_B: int = 10
    tau: float = 0.01
    seed: int = 0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    feature_space_for_prototypes: str = "probe_hidden"  # or "raw_embedding"
    use_ood_centroid_in_pis: bool = False
    warmup_strategy: str = "vids_cluster"  # or "vids_only", "random"
    train_with_ood_class: bool = False
    refine_clusters: bool = True

    def validate(self) -> None:
        problems = []
        if self.budget_L < 1 or self.batches_B < 1 or self.budget_L < self.batches_B:
            problems.append("budget_L/batches_B: require L >= B >= 1")
        if not (0.0 < self.percentile_M <= 100.0):
            problems.append("percentile_M: must be in (0, 100]")
        if self.rounds_R < 1:
            problems.append("rounds_R: must be >= 1")
        if self.tau <= 0:
            problems.append("tau: must be positive")
        if self.training.epochs < 1:
            problems.append("training.epochs: must be >= 1")
        if self.training.lr <= 0:
            problems.append("training.lr: must be positive")
        if self.feature_space_for_prototypes not in ("probe_hidden", "raw_embedding"):
            problems.append("feature_space_for_prototypes: unknown value")
        if self.warmup_strategy not in ("vids_cluster", "vids_only", "random"):
            problems.append("warmup_strategy: unknown value")
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))


# --- embedding binary format ---------------------------------------------

_HEADER = struct.Struct("<4sIQIB")


def write_embeddings(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise IngestionError("embedding matrix must be 2-D")
    n, d = matrix.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, d, DTYPE_F32))
        f.write(matrix.tobytes(order="C"))


def read_embeddings(path) -> np.ndarray:
    """Read an embedding file, widening float32 storage to float64."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise IngestionError(f"{path}: truncated header")
        magic, version, n, d, dtype = _HEADER.unpack(header)
        if magic != MAGIC:
            raise IngestionError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise IngestionError(f"{path}: unsupported version {version}")
        if dtype != DTYPE_F32:
            raise IngestionError(f"{path}: unsupported dtype code {dtype}")
        payload = f.read(n * d * 4)
        if len(payload) != n * d * 4:
            raise IngestionError(
                f"{path}: expected {n * d * 4} payload bytes, found {len(payload)}"
            )
        if f.read(1):
            raise IngestionError(f"{path}: trailing bytes after payload")
    flat = np.frombuffer(payload, dtype="<f4")
    return flat.reshape(n, d).astype(np.float64)


def write_metadata(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            row = {"id": s.sample_id, "label": -1 if s.oracle_label is None else s.oracle_label}
            if s.image_ref is not None:
                row["image"] = s.image_ref
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_metadata(path) -> list[SampleRecord]:
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if "id" not in row or "label" not in row:
                raise IngestionError(f"{path}:{lineno}: missing 'id' or 'label'")
            sid = str(row["id"])
            if sid in seen:
                raise IngestionError(f"{path}:{lineno}: duplicate sample id {sid!r}")
            seen.add(sid)
            label = int(row["label"])
            records.append(
                SampleRecord(
                    sample_id=sid,
                    embedding_index=len(records),
                    oracle_label=None if label < 0 else label,
                    image_ref=row.get("image"),
                )
            )
    return records


def load_dataset(embedding_file, metadata_file) -> Dataset:
    """Load and cross-validate the embedding/metadata pair."""
    embeddings = read_embeddings(embedding_file)
    samples = read_metadata(metadata_file)
    if len(samples) != embeddings.shape[0]:
        raise IngestionError(
            f"row-count mismatch: {metadata_file} has {len(samples)} rows, "
            f"{embedding_file} header says {embeddings.shape[0]}"
        )
    return Dataset(embeddings=embeddings, samples=tuple(samples))


# --- plain-text key-value config -----------------------------------------

_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_kv_file(path) -> dict[str, str]:
    pairs = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in pairs:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            pairs[key] = value.strip()
    return pairs


def _names(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


_CONFIG_PARSERS = {
    "budget_L": int,
    "rounds_R": int,
    "percentile_M": float,
    "batches_B": int,
    "tau": float,
    "seed": int,
    "training.epochs": int,
    "training.lr": float,
    "training.lr_decay_factor": float,
    "training.lr_decay_every": int,
    "training.weight_decay": float,
    "training.hidden_dim": int,
    "training.batch_size": int,
    "feature_space_for_prototypes": str,
    "warmup_strategy": str,
}
_CONFIG_BOOLS = ("use_ood_centroid_in_pis", "train_with_ood_class", "refine_clusters")
_CATALOG_KEYS = ("id_class_names", "ood_class_names", "task_description")


def load_config(path) -> tuple[ExperimentConfig, ClassCatalog]:
    """Parse the plain-text config file into config + class catalog.

    Every recognized key is named exactly as the ExperimentConfig field
    (training sub-fields use a ``training.`` prefix). All offending keys are
    reported at once.
    """
    pairs = _parse_kv_file(path)
    problems = []
    values: dict[str, object] = {}
    for key, raw in pairs.items():
        if key in _CONFIG_PARSERS:
            try:
                values[key] = _CONFIG_PARSERS[key](raw)
            except ValueError:
                problems.append(f"{key}: cannot parse {raw!r}")
        elif key in _CONFIG_BOOLS:
            if raw.lower() in _BOOL_VALUES:
                values[key] = _BOOL_VALUES[raw.lower()]
            else:
                problems.append(f"{key}: expected a boolean, got {raw!r}")
        elif key in _CATALOG_KEYS:
            values[key] = _names(raw) if key != "task_description" else raw
        else:
            problems.append(f"{key}: unknown key")
    if "id_class_names" not in values:
        problems.append("id_class_names: required")
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(sorted(problems)))

    training_kwargs = {
        k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("training.")
    }
    config_kwargs = {
        k: v
        for k, v in values.items()
        if not k.startswith("training.") and k not in _CATALOG_KEYS
    }
    config = ExperimentConfig(training=TrainingConfig(**training_kwargs), **config_kwargs)
    config.validate()
    catalog = ClassCatalog(
        id_class_names=tuple(values.get("id_class_names", ())),
        ood_class_names=tuple(values.get("ood_class_names", ())),
        task_description=str(values.get("task_description", "")),
    )
    return config, catalog


def config_to_text(config: ExperimentConfig, catalog: ClassCatalog) -> str:
    """Serialize config + catalog back to the key-value format."""
    lines = [
        f"budget_L = {config.budget_L}",
        f"rounds_R = {config.rounds_R}",
        f"percentile_M = {config.percentile_M}",
        f"batches_B = {config.batches_B}",
        f"tau = {config.tau}",
        f"seed = {config.seed}",
        f"training.epochs = {config.training.epochs}",
        f"training.lr = {config.training.lr}",
        f"training.lr_decay_factor = {config.training.lr_decay_factor}",
        f"training.lr_decay_every = {config.training.lr_decay_every}",
        f"training.weight_decay = {config.training.weight_decay}",
        f"training.hidden_dim = {config.training.hidden_dim}",
        f"training.batch_size = {config.training.batch_size}",
        f"feature_space_for_prototypes = {config.feature_space_for_prototypes}",
        f"use_ood_centroid_in_pis = {str(config.use_ood_centroid_in_pis).lower()}",
        f"warmup_strategy = {config.warmup_strategy}",
        f"train_with_ood_class = {str(config.train_with_ood_class).lower()}",
        f"refine_clusters = {str(config.refine_clusters).lower()}",
        f"id_class_names = {', '.join(catalog.id_class_names)}",
        f"ood_class_names = {', '.join(catalog.ood_class_names)}",
        f"task_description = {catalog.task_description}",
    ]
    return "\n".join(lines) + "\n"
