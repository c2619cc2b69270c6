import numpy as np
import pytest

from openset_al import synth
from openset_al.data import ExperimentConfig, TrainingConfig, load_dataset
from openset_al.synth import SynthSpec
from openset_al.zeroshot import PromptSet

FAST_TRAINING = TrainingConfig(
    epochs=30, lr=0.5, lr_decay_factor=0.1, lr_decay_every=20, hidden_dim=32, batch_size=64
)


def make_bench(out_dir, seed=0, config_kwargs=None, **spec_kwargs):
    """Generate a small synthetic benchmark and load everything for an engine."""
    spec_defaults = dict(
        id_classes=3,
        ood_classes=4,
        samples_per_class=40,
        dim=16,
        cluster_separation=4.0,
        seed=seed,
        test_per_class=15,
    )
    spec_defaults.update(spec_kwargs)
    out = synth.generate(SynthSpec(**spec_defaults), out_dir)
    train = load_dataset(out.train_embeddings, out.train_metadata)
    test = load_dataset(out.test_embeddings, out.test_metadata)
    prompt_data = load_dataset(out.prompt_embeddings, out.prompt_metadata)
    prompts = PromptSet(
        prompts=tuple(s.sample_id for s in prompt_data.samples),
        prompt_embeddings=prompt_data.embeddings,
        id_count=out.catalog.id_count,
    )
    kwargs = dict(
        budget_L=12, rounds_R=3, percentile_M=25.0, batches_B=4, seed=seed,
        training=FAST_TRAINING,
    )
    if config_kwargs:
        kwargs.update(config_kwargs)
    config = ExperimentConfig(**kwargs)
    return config, out.catalog, train, prompts, test


@pytest.fixture
def small_bench(tmp_path):
    return make_bench(tmp_path)
