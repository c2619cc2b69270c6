"""Loading a runnable experiment: config + data directory -> engine inputs.

A data directory follows the file layout emitted by the synthetic generator
(train/test/prompt embedding+metadata pairs). The test split is optional;
without it, accuracy metrics are reported as unavailable.
"""

from dataclasses import dataclass
from pathlib import Path

from .data import ClassCatalog, Dataset, ExperimentConfig, load_config, load_dataset
from .errors import IngestionError
from .synth import default_file_names
from .zeroshot import PromptSet


@dataclass(frozen=True)
class ExperimentBundle:
    config: ExperimentConfig
    catalog: ClassCatalog
    train: Dataset
    prompts: PromptSet
    test: Dataset | None


def load_bundle(config_path, data_dir) -> ExperimentBundle:
    config, catalog = load_config(config_path)
    paths = default_file_names(Path(data_dir))
    for key in ("train_embeddings", "train_metadata", "prompt_embeddings", "prompt_metadata"):
        if not paths[key].exists():
            raise IngestionError(f"missing data file: {paths[key]}")
    train = load_dataset(paths["train_embeddings"], paths["train_metadata"])
    prompt_data = load_dataset(paths["prompt_embeddings"], paths["prompt_metadata"])
    prompt_names = tuple(s.sample_id for s in prompt_data.samples)
    if prompt_names != catalog.all_names:
        raise IngestionError(
            "prompt metadata does not match the catalog: "
            f"{prompt_names} vs {catalog.all_names}"
        )
    prompts = PromptSet(
        prompts=prompt_names,
        prompt_embeddings=prompt_data.embeddings,
        id_count=catalog.id_count,
    )
    test = None
    if paths["test_embeddings"].exists() and paths["test_metadata"].exists():
        test = load_dataset(paths["test_embeddings"], paths["test_metadata"])
    return ExperimentBundle(
        config=config, catalog=catalog, train=train, prompts=prompts, test=test
    )
