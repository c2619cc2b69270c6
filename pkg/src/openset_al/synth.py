"""Synthetic open-set embedding benchmark generator.

Geometry: every class is an isotropic Gaussian cluster (total intra-cluster
std 1) around a centroid on a sphere of radius ``cluster_separation``. OOD
centroids keep at least that full separation from every other centroid,
while ID centroids are placed mutually close (a fixed fraction of the
separation) so the target classes overlap enough for accuracy to keep
improving with more labels. Class "text prompt" embeddings are the true
centroids plus small noise, emulating an aligned text/image space.

Everything is deterministic given the seed: same spec, same bytes.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    ClassCatalog,
    ExperimentConfig,
    SampleRecord,
    TrainingConfig,
    config_to_text,
    write_embeddings,
    write_metadata,
)
from .errors import ConfigError, ParameterError

# pairwise unit-direction distance enforced for OOD-vs-anything pairs
MIN_DIRECTION_DISTANCE = 1.0
# relative size of the ID-ID centroid spread (fraction of the separation);
# keeps the target classes overlapping enough that accuracy is still rising
# at a few hundred labels while the OOD clusters stay far away
ID_SPREAD_FACTOR = 0.15
# prompt noise is this fraction of the separation, floored for tiny setups
PROMPT_NOISE_FACTOR = 0.05
PROMPT_NOISE_FLOOR = 0.05

# probe recipe that actually converges at benchmark scale; the stock
# TrainingConfig defaults target much larger datasets and underfit here
BENCH_TRAINING = TrainingConfig(
    epochs=100,
    lr=0.5,
    lr_decay_factor=0.1,
    lr_decay_every=60,
    weight_decay=8e-4,
    hidden_dim=256,
    batch_size=64,
)


@dataclass(frozen=True)
class SynthSpec:
    id_classes: int = 3
    ood_classes: int = 6
    samples_per_class: int = 500
    dim: int = 32
    cluster_separation: float = 4.0
    seed: int = 0
    test_per_class: int = 100

    def validate(self) -> None:
        problems = []
        if self.id_classes < 2:
            problems.append("id_classes: must be >= 2")
        if self.ood_classes < 0:
            problems.append("ood_classes: must be >= 0")
        if self.dim < 2:
            problems.append("dim: must be >= 2")
        if self.cluster_separation < 0:
            problems.append("cluster_separation: must be >= 0")
        if self.samples_per_class < 1 or self.test_per_class < 1:
            problems.append("samples_per_class/test_per_class: must be >= 1")
        if problems:
            raise ConfigError("invalid synth spec: " + "; ".join(problems))


_SPEC_PARSERS = {
    "id_classes": int,
    "ood_classes": int,
    "samples_per_class": int,
    "dim": int,
    "cluster_separation": float,
    "seed": int,
    "test_per_class": int,
}


def load_synth_spec(path) -> SynthSpec:
    from .data import _parse_kv_file  # same key-value syntax as configs

    pairs = _parse_kv_file(path)
    problems = []
    values = {}
    for key, raw in pairs.items():
        if key not in _SPEC_PARSERS:
            problems.append(f"{key}: unknown key")
            continue
        try:
            values[key] = _SPEC_PARSERS[key](raw)
        except ValueError:
            problems.append(f"{key}: cannot parse {raw!r}")
    if problems:
        raise ConfigError("invalid synth spec: " + "; ".join(sorted(problems)))
    spec = SynthSpec(**values)
    spec.validate()
    return spec


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _class_directions(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit directions for all C + K classes.

    ID directions cluster around a random anchor at ID_SPREAD_FACTOR of the
    global scale; OOD directions are rejection-sampled to stay at least
    MIN_DIRECTION_DISTANCE from every other direction.
    """
    dim = spec.dim
    anchor = _unit(rng, dim)
    directions = []
    offsets = []
    for _ in range(spec.id_classes):
        for _ in range(10_000):
            w = _unit(rng, dim)
            w = w - (w @ anchor) * anchor
            w /= np.linalg.norm(w)
            if all(np.linalg.norm(w - o) >= MIN_DIRECTION_DISTANCE for o in offsets):
                offsets.append(w)
                break
        else:
            raise ParameterError("could not place ID directions; dim too small")
        scale = ID_SPREAD_FACTOR / np.sqrt(2.0)
        directions.append((anchor + scale * offsets[-1]) / np.linalg.norm(anchor + scale * offsets[-1]))
    for _ in range(spec.ood_classes):
        for _ in range(10_000):
            u = _unit(rng, dim)
            if all(np.linalg.norm(u - d) >= MIN_DIRECTION_DISTANCE for d in directions):
                directions.append(u)
                break
        else:
            raise ParameterError("could not place OOD directions; dim too small")
    return np.vstack(directions)


@dataclass(frozen=True)
class SynthOutput:
    train_embeddings: Path
    train_metadata: Path
    test_embeddings: Path
    test_metadata: Path
    prompt_embeddings: Path
    prompt_metadata: Path
    config: Path
    catalog: ClassCatalog


def default_file_names(out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    return {
        "train_embeddings": out / "train_embeddings.bin",
        "train_metadata": out / "train_metadata.jsonl",
        "test_embeddings": out / "test_embeddings.bin",
        "test_metadata": out / "test_metadata.jsonl",
        "prompt_embeddings": out / "prompt_embeddings.bin",
        "prompt_metadata": out / "prompt_metadata.jsonl",
        "config": out / "config.txt",
    }


def generate(spec: SynthSpec, out_dir) -> SynthOutput:
    """Write the train pool, ID-only test split, prompt embeddings, and a
    ready-to-run config into ``out_dir``."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    total_classes = spec.id_classes + spec.ood_classes
    directions = _class_directions(spec, rng)
    centroids = spec.cluster_separation * directions
    coord_std = 1.0 / np.sqrt(spec.dim)  # total intra-cluster std 1

    def sample_cluster(class_index: int, count: int, stream: np.random.Generator):
        return centroids[class_index] + stream.normal(
            scale=coord_std, size=(count, spec.dim)
        )

    # train pool: every class, rows shuffled so classes interleave
    train_rows = []
    train_labels = []
    for c in range(total_classes):
        stream = np.random.default_rng([spec.seed, 1, c])
        train_rows.append(sample_cluster(c, spec.samples_per_class, stream))
        train_labels.extend([c] * spec.samples_per_class)
    train_matrix = np.vstack(train_rows)
    train_labels = np.array(train_labels)
    order = np.random.default_rng([spec.seed, 2]).permutation(train_matrix.shape[0])
    train_matrix = train_matrix[order]
    train_labels = train_labels[order]

    # ID-only test split
    test_rows = []
    test_labels = []
    for c in range(spec.id_classes):
        stream = np.random.default_rng([spec.seed, 3, c])
        test_rows.append(sample_cluster(c, spec.test_per_class, stream))
        test_labels.extend([c] * spec.test_per_class)
    test_matrix = np.vstack(test_rows)
    test_labels = np.array(test_labels)

    # prompt embeddings: true centroid + small noise, one row per class
    prompt_noise = max(
        PROMPT_NOISE_FACTOR * spec.cluster_separation, PROMPT_NOISE_FLOOR
    )
    prompt_stream = np.random.default_rng([spec.seed, 4])
    prompt_matrix = centroids + prompt_stream.normal(
        scale=prompt_noise / np.sqrt(spec.dim), size=centroids.shape
    )

    catalog = ClassCatalog(
        id_class_names=tuple(f"id_{c}" for c in range(spec.id_classes)),
        ood_class_names=tuple(f"ood_{k}" for k in range(spec.ood_classes)),
        task_description="synthetic open-set benchmark",
    )

    paths = default_file_names(out)
    write_embeddings(paths["train_embeddings"], train_matrix)
    write_metadata(
        paths["train_metadata"],
        [
            SampleRecord(sample_id=f"tr_{i:05d}", embedding_index=i, oracle_label=int(y))
            for i, y in enumerate(train_labels)
        ],
    )
    write_embeddings(paths["test_embeddings"], test_matrix)
    write_metadata(
        paths["test_metadata"],
        [
            SampleRecord(sample_id=f"te_{i:05d}", embedding_index=i, oracle_label=int(y))
            for i, y in enumerate(test_labels)
        ],
    )
    write_embeddings(paths["prompt_embeddings"], prompt_matrix)
    write_metadata(
        paths["prompt_metadata"],
        [
            SampleRecord(sample_id=name, embedding_index=i, oracle_label=i)
            for i, name in enumerate(catalog.all_names)
        ],
    )
    config = ExperimentConfig(seed=spec.seed, training=BENCH_TRAINING)
    paths["config"].write_text(config_to_text(config, catalog), encoding="utf-8")
    return SynthOutput(catalog=catalog, **paths)
