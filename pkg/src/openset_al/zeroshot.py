"""Cold-start selection support: prompt construction, zero-shot
pseudo-labeling over class prompt embeddings, and the round-1 ID candidate
filter.

All decisions here are argmax-based, so they are invariant to the softmax
temperature; tau only shapes downstream probabilities.
"""

from dataclasses import dataclass

import numpy as np

from .data import ClassCatalog
from .errors import ShapeError, TemplateError
from .numerics import l2_normalize_rows, softmax_temperature_rows

DEFAULT_PROMPT_TEMPLATE = "An H&E image of {}"

OOD_SUGGESTION_QUESTION = (
    "The task is {task}, focusing on target classes including {id_classes}. "
    "Please provide {k} other tissue categories that may be present in this task"
)


@dataclass(frozen=True)
class PromptSet:
    """Per-class prompt strings and their embedding vectors.

    The first ``id_count`` rows are the ID classes, in catalog order.
    """

    prompts: tuple[str, ...]
    prompt_embeddings: np.ndarray  # C' x D
    id_count: int

    def __post_init__(self):
        if self.prompt_embeddings.shape[0] != len(self.prompts):
            raise ShapeError(
                f"{len(self.prompts)} prompts but "
                f"{self.prompt_embeddings.shape[0]} embedding rows"
            )
        if not (0 < self.id_count <= len(self.prompts)):
            raise ShapeError("id_count must be within the prompt list")

    @property
    def total_count(self) -> int:
        return len(self.prompts)

    def normalized(self) -> "PromptSet":
        return PromptSet(
            prompts=self.prompts,
            prompt_embeddings=l2_normalize_rows(self.prompt_embeddings),
            id_count=self.id_count,
        )


def build_prompt_texts(
    catalog: ClassCatalog, template: str = DEFAULT_PROMPT_TEMPLATE, k: int | None = None
) -> tuple[tuple[str, ...], str]:
    """Fill the per-class template for every ID and OOD class name.

    Also returns the suggestion question for obtaining candidate non-target
    class names from an external assistant; it is only emitted, never sent
    anywhere.
    """
    if "{}" not in template:
        raise TemplateError(f"template {template!r} has no {{}} placeholder")
    prompts = tuple(template.format(name) for name in catalog.all_names)
    if k is None:
        k = catalog.ood_count if catalog.ood_count > 0 else 6
    question = OOD_SUGGESTION_QUESTION.format(
        task=catalog.task_description or "tissue classification",
        id_classes=", ".join(catalog.id_class_names),
        k=k,
    )
    return prompts, question


def zero_shot_probabilities(
    embeddings: np.ndarray, prompts: PromptSet, tau: float
) -> np.ndarray:
    """Row-wise class probabilities: softmax over cosine similarities.

    Both inputs are expected L2-normalized, so dot products are cosines.
    """
    if embeddings.shape[1] != prompts.prompt_embeddings.shape[1]:
        raise ShapeError(
            f"embedding dim {embeddings.shape[1]} != prompt dim "
            f"{prompts.prompt_embeddings.shape[1]}"
        )
    sims = embeddings @ prompts.prompt_embeddings.T
    return softmax_temperature_rows(sims, tau)


def pseudo_labels(prob_matrix: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolved to the lowest class index."""
    return np.argmax(prob_matrix, axis=1)


def select_id_candidates_round1(prob_matrix: np.ndarray, id_count: int) -> np.ndarray:
    """Indices of samples whose pseudo-label falls in the ID range."""
    labels = pseudo_labels(prob_matrix)
    return np.nonzero(labels < id_count)[0]
