"""The round loop: warm-up query, per-round labeling, probe retraining, and
query metrics.

The engine is stepwise (propose a query, commit its labels) so that both the
oracle-labeled simulation and the interactive annotation service drive the
exact same code path; a full run is just the loop with a labeler plugged in.
All randomness derives from the experiment seed, per purpose and round, so
runs are bit-reproducible.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import clustering, probe, sampling, zeroshot
from .data import ClassCatalog, Dataset, ExperimentConfig, LabelState, PoolState
from .errors import (
    ConsistencyError,
    MissingClassError,
    ParameterError,
    ShapeError,
    TrainingError,
)
from .numerics import l2_normalize_rows, renormalized_id_entropy_rows
from .zeroshot import PromptSet

logger = logging.getLogger(__name__)

# rng stream purposes, combined with the seed and round into stream keys
_RNG_WARMUP = 1
_RNG_QUERY = 2
_RNG_TRAIN = 3
_RNG_UPPER = 4
_RNG_INIT = 5

STRATEGY_NAMES = (
    "openpath",
    "random",
    "entropy",
    "margin",
    "least_confidence",
    "kmeanspp",
)


@dataclass(frozen=True)
class QueryRoundRecord:
    round: int
    query_ids: tuple[str, ...]
    id_hits: int
    ood_hits: int
    qp: float
    aqr: float | None
    macc: float | None
    loss_trace: tuple[float, ...] = ()
    wall_time: float = 0.0

    def __post_init__(self):
        if self.id_hits + self.ood_hits != len(self.query_ids):
            raise ConsistencyError("id_hits + ood_hits must equal the query size")

    def to_json_dict(self) -> dict:
        """Deterministic serialization; wall_time is intentionally omitted so
        reports from identical seeds are byte-identical."""
        return {
            "type": "round",
            "round": self.round,
            "query_ids": list(self.query_ids),
            "id_hits": self.id_hits,
            "ood_hits": self.ood_hits,
            "qp": self.qp,
            "aqr": self.aqr,
            "macc": self.macc,
            "loss_trace": list(self.loss_trace),
        }

    @staticmethod
    def from_json_dict(row: Mapping) -> "QueryRoundRecord":
        return QueryRoundRecord(
            round=int(row["round"]),
            query_ids=tuple(row["query_ids"]),
            id_hits=int(row["id_hits"]),
            ood_hits=int(row["ood_hits"]),
            qp=row["qp"],
            aqr=row["aqr"],
            macc=row["macc"],
            loss_trace=tuple(row.get("loss_trace", ())),
        )


def compute_qp(id_hits: int, ood_hits: int) -> float:
    """Purity of one query: ID labels over all labels."""
    total = id_hits + ood_hits
    if total <= 0:
        raise ParameterError("query precision of an empty query is undefined")
    return id_hits / total


def compute_aqr(id_hits_per_round: Sequence[int], total_id_in_pool: int) -> float:
    """Cumulative ID hits over all rounds so far, relative to the pool's
    total ID count."""
    if total_id_in_pool <= 0:
        raise ParameterError("total ID count must be positive")
    return sum(id_hits_per_round) / total_id_in_pool


Labeler = Callable[[Sequence[str]], dict[str, LabelState]]


class OracleLabeler:
    """Labels straight from metadata ground truth."""

    def __init__(self, dataset: Dataset, id_count: int):
        self._dataset = dataset
        self._id_count = id_count

    def __call__(self, sample_ids: Sequence[str]) -> dict[str, LabelState]:
        labels = {}
        for sid in sample_ids:
            record = self._dataset.record(sid)
            if record.oracle_label is None:
                raise ConsistencyError(f"sample {sid!r} has no ground-truth label")
            if record.oracle_label < self._id_count:
                labels[sid] = LabelState.id_class(record.oracle_label)
            else:
                labels[sid] = LabelState.non_target()
        return labels


def _stream_seed(seed: int, purpose: int, round_index: int) -> int:
    return int(np.random.SeedSequence([seed, purpose, round_index]).generate_state(1)[0])


def _top_k_by_score(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """k ids with the highest score; ties broken by the smaller id."""
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return np.asarray([ids[i] for i in order[:k]], dtype=ids.dtype)


class ActiveLearningEngine:
    """Drives one experiment: warm-up round, then prototype-filtered rounds.

    Usage: repeatedly take ``pending_query`` and feed labels to ``commit``
    until ``is_done``.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        catalog: ClassCatalog,
        dataset: Dataset,
        prompts: PromptSet,
        strategy: str = "openpath",
        test_dataset: Dataset | None = None,
    ):
        config.validate()
        if strategy not in STRATEGY_NAMES:
            raise ParameterError(
                f"unknown strategy {strategy!r}; expected one of {STRATEGY_NAMES}"
            )
        if prompts.prompt_embeddings.shape[1] != dataset.dim:
            raise ShapeError("prompt dimension does not match dataset dimension")
        if prompts.id_count != catalog.id_count:
            raise ShapeError("prompt id_count does not match catalog")
        if test_dataset is not None and test_dataset.dim != dataset.dim:
            raise ShapeError("test dimension does not match dataset dimension")

        self.config = config
        self.catalog = catalog
        self.dataset = dataset
        self.strategy = strategy
        self.test_dataset = test_dataset
        self.embeddings = l2_normalize_rows(dataset.embeddings)
        self.prompts = prompts.normalized()
        self.test_embeddings = (
            l2_normalize_rows(test_dataset.embeddings) if test_dataset is not None else None
        )
        self.test_labels = (
            np.array([s.oracle_label for s in test_dataset.samples])
            if test_dataset is not None
            else None
        )

        self.pool = PoolState.initial(s.sample_id for s in dataset.samples)
        self.head: probe.ProbeHead | None = None
        self.records: list[QueryRoundRecord] = []
        self._pending: tuple[str, ...] | None = None
        self._zero_shot_probs: np.ndarray | None = None
        self._total_id = self._count_pool_id()

    # -- bookkeeping helpers ------------------------------------------------

    @property
    def id_count(self) -> int:
        return self.catalog.id_count

    @property
    def out_dim(self) -> int:
        return self.id_count + (1 if self.config.train_with_ood_class else 0)

    def _count_pool_id(self) -> int | None:
        labels = [s.oracle_label for s in self.dataset.samples]
        if any(label is None for label in labels):
            return None
        return sum(1 for label in labels if label < self.id_count)

    def _rng(self, purpose: int, round_index: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, purpose, round_index])

    def _unlabeled_indices(self) -> np.ndarray:
        return np.array(
            [self.dataset.index_of(sid) for sid in self.pool.unlabeled_ids], dtype=np.int64
        )

    def zero_shot_probs(self) -> np.ndarray:
        if self._zero_shot_probs is None:
            self._zero_shot_probs = zeroshot.zero_shot_probabilities(
                self.embeddings, self.prompts, self.config.tau
            )
        return self._zero_shot_probs

    @property
    def is_done(self) -> bool:
        return self.pool.round >= self.config.rounds_R or not self.pool.unlabeled_ids

    @property
    def next_round(self) -> int:
        return self.pool.round + 1

    # -- query proposal ------------------------------------------------------

    def pending_query(self) -> tuple[str, ...]:
        """The query for the upcoming round, computing it on first access."""
        if self.is_done:
            raise ConsistencyError("experiment already finished")
        if self._pending is None:
            t = self.next_round
            budget = min(self.config.budget_L, len(self.pool.unlabeled_ids))
            if budget < self.config.budget_L:
                logger.warning(
                    "round %d: budget %d exceeds pool, truncating to %d",
                    t,
                    self.config.budget_L,
                    budget,
                )
            if t == 1:
                indices = self._cold_start(budget)
            else:
                indices = self._query_round(t, budget)
            ids = tuple(self.dataset.samples[i].sample_id for i in indices)
            if len(set(ids)) != len(ids):
                raise ConsistencyError("strategy produced duplicate query ids")
            self._pending = ids
        return self._pending

    def _cold_start(self, budget: int) -> np.ndarray:
        rng = self._rng(_RNG_WARMUP, 1)
        unlabeled = self._unlabeled_indices()
        if self.strategy != "openpath" or self.config.warmup_strategy == "random":
            return rng.choice(unlabeled, size=budget, replace=False)
        probs = self.zero_shot_probs()[unlabeled]
        candidate_rows = zeroshot.select_id_candidates_round1(probs, self.id_count)
        candidates = unlabeled[candidate_rows]
        if candidates.size < budget:
            # fill the deficit with the most ID-looking of the rest
            rest_rows = np.setdiff1d(np.arange(unlabeled.size), candidate_rows)
            rest = unlabeled[rest_rows]
            id_peak = np.max(probs[rest_rows, : self.id_count], axis=1)
            extra = _top_k_by_score(rest, id_peak, budget - candidates.size)
            logger.warning(
                "round 1: only %d ID candidates for budget %d; filling %d",
                candidates.size,
                budget,
                extra.size,
            )
            candidates = np.concatenate([candidates, extra])
        if self.config.warmup_strategy == "vids_only":
            return rng.choice(candidates, size=budget, replace=False)
        picks = clustering.cluster_select(
            self.embeddings[candidates],
            budget,
            rng,
            refine=self.config.refine_clusters,
        )
        return candidates[picks]

    def _features(self, indices: np.ndarray) -> np.ndarray:
        if self.config.feature_space_for_prototypes == "raw_embedding" or self.head is None:
            return self.embeddings[indices]
        return probe.hidden_features(self.head, self.embeddings[indices])

    def _labeled_split(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ID sample indices, their class labels, non-target indices)."""
        id_indices, id_classes, ood_indices = [], [], []
        for sid, state in self.pool.labeled.items():
            idx = self.dataset.index_of(sid)
            if state.is_id:
                id_indices.append(idx)
                id_classes.append(state.class_index)
            else:
                ood_indices.append(idx)
        return (
            np.array(id_indices, dtype=np.int64),
            np.array(id_classes, dtype=np.int64),
            np.array(ood_indices, dtype=np.int64),
        )

    def _prototypes(self) -> sampling.PrototypeSet:
        id_indices, id_classes, ood_indices = self._labeled_split()
        features = self._features(id_indices) if id_indices.size else np.zeros((0, 1))
        ood_features = None
        if self.config.use_ood_centroid_in_pis and ood_indices.size:
            ood_features = self._features(ood_indices)
        try:
            return sampling.compute_prototypes(
                features, id_classes, self.id_count, ood_features=ood_features
            )
        except MissingClassError as err:
            return self._prototypes_with_fallback(err.missing, ood_features)

    def _prototypes_with_fallback(
        self, missing: list[int], ood_features: np.ndarray | None
    ) -> sampling.PrototypeSet:
        """Stand in zero-shot pseudo-label means for classes not labeled yet."""
        logger.warning("falling back to pseudo-label prototypes for classes %s", missing)
        id_indices, id_classes, _ = self._labeled_split()
        unlabeled = self._unlabeled_indices()
        pseudo = zeroshot.pseudo_labels(self.zero_shot_probs()[unlabeled])
        rows = []
        for c in range(self.id_count):
            if c in missing:
                members = unlabeled[pseudo == c]
                if members.size == 0:
                    members = unlabeled  # degenerate: nothing looks like c
                rows.append(self._features(members).mean(axis=0))
            else:
                mine = id_indices[id_classes == c]
                rows.append(self._features(mine).mean(axis=0))
        return sampling.PrototypeSet(
            prototypes=np.vstack(rows),
            ood_centroid=(
                np.asarray(ood_features).mean(axis=0) if ood_features is not None else None
            ),
        )

    def _id_probs(self, indices: np.ndarray) -> np.ndarray:
        """Probe probabilities over the ID classes for the given samples."""
        probs = probe.predict_proba_batch(self.head, self.embeddings[indices])
        if self.out_dim > self.id_count:
            id_part = probs[:, : self.id_count]
            return id_part / id_part.sum(axis=1, keepdims=True)
        return probs

    def _query_round(self, t: int, budget: int) -> np.ndarray:
        rng = self._rng(_RNG_QUERY, t)
        unlabeled = self._unlabeled_indices()
        if self.strategy == "random":
            return rng.choice(unlabeled, size=budget, replace=False)
        if self.strategy == "kmeanspp":
            picks = clustering.cluster_select(
                self.embeddings[unlabeled], budget, rng, refine=self.config.refine_clusters
            )
            return unlabeled[picks]
        if self.head is None:
            # no ID labels ever committed; uncertainty is undefined, stay random
            logger.warning("round %d: probe was never trained, falling back to random", t)
            return rng.choice(unlabeled, size=budget, replace=False)

        if self.strategy == "openpath":
            protos = self._prototypes()
            distances = sampling.ood_distances(self._features(unlabeled), protos)
            candidate_rows = sampling.pis_select(distances, self.config.percentile_M)
            candidates = unlabeled[candidate_rows]
            probs = probe.predict_proba_batch(self.head, self.embeddings[candidates])
            entropies = renormalized_id_entropy_rows(probs, self.id_count)
            by_index = dict(zip(candidates.tolist(), entropies.tolist()))
            return sampling.egss_select(
                candidates, by_index, self.config.batches_B, budget, rng
            )

        probs = self._id_probs(unlabeled)
        if self.strategy == "entropy":
            scores = renormalized_id_entropy_rows(probs, self.id_count)
        elif self.strategy == "margin":
            top2 = np.sort(probs, axis=1)[:, -2:]
            scores = -(top2[:, 1] - top2[:, 0])  # smaller margin = higher score
        elif self.strategy == "least_confidence":
            scores = -np.max(probs, axis=1)
        else:  # pragma: no cover - guarded by STRATEGY_NAMES
            raise ParameterError(f"unhandled strategy {self.strategy!r}")
        return _top_k_by_score(unlabeled, scores, budget)

    # -- labeling and training ------------------------------------------------

    def commit(self, labels: dict[str, LabelState]) -> QueryRoundRecord:
        """Apply one round of labels for the pending query, retrain, record."""
        started = time.perf_counter()
        pending = self.pending_query()
        if set(labels) != set(pending):
            raise ConsistencyError("labels must cover exactly the pending query")
        t = self.next_round
        self.pool = self.pool.commit_labels(labels)
        self.pool.check_partition(total=self.dataset.size)
        self._pending = None

        loss_trace = self._train_probe(t)
        id_hits = sum(1 for state in labels.values() if state.is_id)
        ood_hits = len(labels) - id_hits
        aqr = None
        if self._total_id:
            history = [r.id_hits for r in self.records] + [id_hits]
            aqr = compute_aqr(history, self._total_id)
        macc = None
        if self.test_embeddings is not None and self.head is not None:
            macc = probe.evaluate_macc(self.head, self.test_embeddings, self.test_labels)
        record = QueryRoundRecord(
            round=t,
            query_ids=pending,
            id_hits=id_hits,
            ood_hits=ood_hits,
            qp=compute_qp(id_hits, ood_hits),
            aqr=aqr,
            macc=macc,
            loss_trace=tuple(loss_trace),
            wall_time=time.perf_counter() - started,
        )
        self.records.append(record)
        return record

    def _training_set(self) -> tuple[np.ndarray, np.ndarray]:
        id_indices, id_classes, ood_indices = self._labeled_split()
        if self.config.train_with_ood_class and ood_indices.size:
            X = self.embeddings[np.concatenate([id_indices, ood_indices])]
            y = np.concatenate(
                [id_classes, np.full(ood_indices.size, self.id_count, dtype=np.int64)]
            )
            return X, y
        return self.embeddings[id_indices], id_classes

    def _train_probe(self, t: int) -> list[float]:
        X, y = self._training_set()
        if X.shape[0] == 0:
            logger.warning("round %d: no trainable labels yet; keeping fresh head", t)
            self.head = probe.init_head(
                self.dataset.dim,
                self.config.training.hidden_dim,
                self.out_dim,
                np.random.default_rng(_stream_seed(self.config.seed, _RNG_INIT, t)),
            )
            return []
        head = probe.init_head(
            self.dataset.dim,
            self.config.training.hidden_dim,
            self.out_dim,
            np.random.default_rng(_stream_seed(self.config.seed, _RNG_INIT, t)),
        )
        schedule = probe.TrainSchedule(
            epochs=self.config.training.epochs,
            lr0=self.config.training.lr,
            decay_factor=self.config.training.lr_decay_factor,
            decay_every=self.config.training.lr_decay_every,
            weight_decay=self.config.training.weight_decay,
            batch_size=self.config.training.batch_size,
            seed=_stream_seed(self.config.seed, _RNG_TRAIN, t),
        )
        result = probe.train(head, X, y, schedule)
        self.head = head
        return result.epoch_losses

    # -- whole-run helpers ------------------------------------------------------

    def run(self, labeler: Labeler) -> list[QueryRoundRecord]:
        while not self.is_done:
            query = self.pending_query()
            self.commit(labeler(query))
        return self.records


def run_experiment(
    config: ExperimentConfig,
    catalog: ClassCatalog,
    dataset: Dataset,
    prompts: PromptSet,
    labeler: Labeler,
    strategy: str,
    test_dataset: Dataset | None = None,
) -> list[QueryRoundRecord]:
    engine = ActiveLearningEngine(
        config, catalog, dataset, prompts, strategy=strategy, test_dataset=test_dataset
    )
    return engine.run(labeler)


def run_upper_bound(
    config: ExperimentConfig,
    catalog: ClassCatalog,
    dataset: Dataset,
    test_dataset: Dataset,
) -> float:
    """Accuracy of a probe trained on every ID sample in the pool."""
    id_count = catalog.id_count
    labels = [s.oracle_label for s in dataset.samples]
    if any(label is None for label in labels):
        raise ConsistencyError("upper bound requires ground truth for every sample")
    embeddings = l2_normalize_rows(dataset.embeddings)
    mask = np.array([label < id_count for label in labels])
    if not np.any(mask):
        raise TrainingError("pool contains no ID samples")
    X = embeddings[mask]
    y = np.array([label for label in labels if label < id_count])
    head = probe.init_head(
        dataset.dim,
        config.training.hidden_dim,
        id_count,
        np.random.default_rng(_stream_seed(config.seed, _RNG_UPPER, 0)),
    )
    schedule = probe.TrainSchedule(
        epochs=config.training.epochs,
        lr0=config.training.lr,
        decay_factor=config.training.lr_decay_factor,
        decay_every=config.training.lr_decay_every,
        weight_decay=config.training.weight_decay,
        batch_size=config.training.batch_size,
        seed=_stream_seed(config.seed, _RNG_UPPER, 1),
    )
    probe.train(head, X, y, schedule)
    test_embeddings = l2_normalize_rows(test_dataset.embeddings)
    test_labels = np.array([s.oracle_label for s in test_dataset.samples])
    return probe.evaluate_macc(head, test_embeddings, test_labels)
