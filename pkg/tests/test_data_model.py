import numpy as np
import pytest

from openset_al import data
from openset_al.data import (
    ClassCatalog,
    ExperimentConfig,
    LabelState,
    PoolState,
    SampleRecord,
    TrainingConfig,
)
from openset_al.errors import ConfigError, ConsistencyError, IngestionError


def _write_pair(tmp_path, matrix, records, name="ds"):
    emb = tmp_path / f"{name}.bin"
    meta = tmp_path / f"{name}.jsonl"
    data.write_embeddings(emb, matrix)
    data.write_metadata(meta, records)
    return emb, meta


def _records(n, **kwargs):
    return [SampleRecord(sample_id=f"s{i}", embedding_index=i, **kwargs) for i in range(n)]


class TestEmbeddingIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(42)
        matrix = rng.normal(size=(3, 4)).astype(np.float32)
        emb, meta = _write_pair(tmp_path, matrix, _records(3))
        ds = data.load_dataset(emb, meta)
        assert ds.size == 3 and ds.dim == 4
        np.testing.assert_array_equal(ds.embeddings.astype(np.float32), matrix)
        assert ds.embeddings.dtype == np.float64

    def test_write_read_bytes_stable(self, tmp_path):
        rng = np.random.default_rng(7)
        matrix = rng.normal(size=(5, 3))
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        data.write_embeddings(p1, matrix)
        data.write_embeddings(p2, matrix)
        assert p1.read_bytes() == p2.read_bytes()

    def test_count_mismatch(self, tmp_path):
        matrix = np.zeros((3, 4))
        emb, meta = _write_pair(tmp_path, matrix, _records(2))
        with pytest.raises(IngestionError, match="row-count mismatch"):
            data.load_dataset(emb, meta)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(IngestionError, match="magic"):
            data.read_embeddings(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.bin"
        data.write_embeddings(p, np.zeros((2, 2)))
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(IngestionError, match="payload"):
            data.read_embeddings(p)

    def test_duplicate_ids(self, tmp_path):
        meta = tmp_path / "m.jsonl"
        meta.write_text('{"id": "a", "label": 0}\n{"id": "a", "label": 1}\n')
        with pytest.raises(IngestionError, match="duplicate"):
            data.read_metadata(meta)

    def test_metadata_line_number_in_error(self, tmp_path):
        meta = tmp_path / "m.jsonl"
        meta.write_text('{"id": "a", "label": 0}\nnot json\n')
        with pytest.raises(IngestionError, match=":2"):
            data.read_metadata(meta)

    def test_unknown_label_becomes_none(self, tmp_path):
        meta = tmp_path / "m.jsonl"
        meta.write_text('{"id": "a", "label": -1}\n')
        (rec,) = data.read_metadata(meta)
        assert rec.oracle_label is None
        assert rec.is_oracle_id(3) is None


class TestPoolState:
    def test_empty_commit_bumps_round_only(self):
        pool = PoolState.initial(["a", "b"])
        after = pool.commit_labels({})
        assert after.round == 1
        assert after.unlabeled_ids == pool.unlabeled_ids
        assert after.labeled == {}

    def test_exhaustion(self):
        pool = PoolState.initial(["a", "b", "c"])
        labels = {sid: LabelState.id_class(0) for sid in ("a", "b", "c")}
        after = pool.commit_labels(labels)
        assert after.unlabeled_ids == ()
        assert len(after.labeled) == 3

    def test_mixed_commit_grows_by_query_size(self):
        # 39 ID + 11 non-target in one round of 50, as in a 78% purity query
        ids = [f"s{i}" for i in range(200)]
        pool = PoolState.initial(ids)
        labels = {}
        for i in range(39):
            labels[f"s{i}"] = LabelState.id_class(i % 3)
        for i in range(39, 50):
            labels[f"s{i}"] = LabelState.non_target()
        after = pool.commit_labels(labels)
        assert len(after.labeled) == 50
        assert len(after.unlabeled_ids) == 150
        after.check_partition(total=200)

    def test_relabeling_always_rejected(self):
        rng = np.random.default_rng(0)
        ids = [f"s{i}" for i in range(30)]
        pool = PoolState.initial(ids)
        pool = pool.commit_labels({f"s{i}": LabelState.id_class(0) for i in range(10)})
        for _ in range(50):
            sid = f"s{rng.integers(0, 10)}"
            with pytest.raises(ConsistencyError):
                pool.commit_labels({sid: LabelState.non_target()})

    def test_unknown_id_rejected(self):
        pool = PoolState.initial(["a"])
        with pytest.raises(ConsistencyError):
            pool.commit_labels({"zz": LabelState.id_class(0)})

    def test_round_strictly_increases(self):
        pool = PoolState.initial([f"s{i}" for i in range(10)])
        for t in range(1, 6):
            pool = pool.commit_labels({f"s{t}": LabelState.id_class(0)})
            assert pool.round == t
            pool.check_partition(total=10)

    def test_partition_fuzz(self):
        rng = np.random.default_rng(13)
        for trial in range(20):
            n = int(rng.integers(5, 60))
            pool = PoolState.initial([f"x{i}" for i in range(n)])
            while pool.unlabeled_ids:
                take = min(len(pool.unlabeled_ids), int(rng.integers(1, 8)))
                picked = rng.choice(len(pool.unlabeled_ids), size=take, replace=False)
                labels = {}
                for j in picked:
                    sid = pool.unlabeled_ids[j]
                    if rng.random() < 0.3:
                        labels[sid] = LabelState.non_target()
                    else:
                        labels[sid] = LabelState.id_class(int(rng.integers(0, 3)))
                pool = pool.commit_labels(labels)
                pool.check_partition(total=n)


class TestLabelState:
    def test_id_vs_non_target(self):
        assert LabelState.id_class(2).is_id
        assert not LabelState.non_target().is_id

    def test_negative_class_rejected(self):
        with pytest.raises(ValueError):
            LabelState.id_class(-1)


class TestConfig:
    def test_round_trip(self, tmp_path):
        config = ExperimentConfig(
            budget_L=50,
            rounds_R=5,
            percentile_M=25.0,
            batches_B=10,
            tau=0.01,
            seed=7,
            training=TrainingConfig(epochs=30, lr=1e-3, hidden_dim=64),
            warmup_strategy="vids_only",
            use_ood_centroid_in_pis=True,
        )
        catalog = ClassCatalog(
            id_class_names=("LYM", "NORM", "TUM"),
            ood_class_names=("ADI", "BACK"),
            task_description="colorectal tissue",
        )
        p = tmp_path / "config.txt"
        p.write_text(data.config_to_text(config, catalog))
        loaded_config, loaded_catalog = data.load_config(p)
        assert loaded_config == config
        assert loaded_catalog == catalog

    def test_unknown_and_bad_keys_all_listed(self, tmp_path):
        p = tmp_path / "config.txt"
        p.write_text(
            "budget_L = many\n"
            "mystery_key = 1\n"
            "tau = 0.01\n"
            "id_class_names = a, b\n"
        )
        with pytest.raises(ConfigError) as err:
            data.load_config(p)
        message = str(err.value)
        assert "budget_L" in message and "mystery_key" in message

    def test_missing_id_classes(self, tmp_path):
        p = tmp_path / "config.txt"
        p.write_text("budget_L = 10\n")
        with pytest.raises(ConfigError, match="id_class_names"):
            data.load_config(p)

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "config.txt"
        p.write_text("# comment\n\nbudget_L = 10  # inline\nid_class_names = a, b\n")
        config, catalog = data.load_config(p)
        assert config.budget_L == 10
        assert catalog.id_class_names == ("a", "b")

    def test_validate_rejects_bad_budget(self):
        config = ExperimentConfig(budget_L=5, batches_B=10)
        with pytest.raises(ConfigError, match="budget_L"):
            config.validate()

    def test_catalog_invariants(self):
        with pytest.raises(ConfigError):
            ClassCatalog(id_class_names=("only",), ood_class_names=())
        with pytest.raises(ConfigError):
            ClassCatalog(id_class_names=("a", "b"), ood_class_names=("a",))
