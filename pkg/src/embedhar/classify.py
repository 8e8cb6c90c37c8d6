"""Similarity-argmax classification over embedded anchors.

An AnchorSet holds one embedding per activity descriptor plus any number
of exemplar embeddings (the few-shot extension: labeled example summaries
act as extra class anchors, individually, not averaged). Classification
scores a query against every anchor and takes the best one's label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DataError, DimensionMismatchError
from .embedding import Embedding, EmbeddingProvider

METRICS = ("cosine", "l2")

KIND_DESCRIPTOR = "descriptor"
KIND_EXEMPLAR = "exemplar"


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity; equals the plain dot product for unit vectors."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"cosine over dims {a.dim} and {b.dim}")
    av = a.vector.astype(np.float64)
    bv = b.vector.astype(np.float64)
    na, nb = float(np.linalg.norm(av)), float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine of a zero-norm vector is undefined")
    return float(np.dot(av, bv) / (na * nb))


def l2_distance(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"distance over dims {a.dim} and {b.dim}")
    return float(
        np.linalg.norm(a.vector.astype(np.float64) - b.vector.astype(np.float64))
    )


@dataclass(frozen=True)
class Anchor:
    label: str
    embedding: Embedding
    kind: str
    anchor_id: str


@dataclass(frozen=True)
class AnchorSet:
    """Ordered, fixed-dim collection of anchors.

    Order is canonical and load-bearing for tie-breaking: descriptor
    anchors sorted by label come first, exemplars follow in insertion
    order. The float64 score matrix is precomputed once.
    """

    anchors: tuple[Anchor, ...]

    def __post_init__(self):
        if not self.anchors:
            raise DataError("anchor set must not be empty")
        dims = {a.embedding.dim for a in self.anchors}
        if len(dims) != 1:
            raise DimensionMismatchError(f"anchors mix dims {sorted(dims)}")
        ids = [a.anchor_id for a in self.anchors]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate anchor ids: {dupes}")
        kinds = [a.kind for a in self.anchors]
        for kind in kinds:
            if kind not in (KIND_DESCRIPTOR, KIND_EXEMPLAR):
                raise DataError(f"unknown anchor kind {kind!r}")
        first_exemplar = next(
            (i for i, k in enumerate(kinds) if k == KIND_EXEMPLAR), len(kinds)
        )
        if any(k == KIND_DESCRIPTOR for k in kinds[first_exemplar:]):
            raise DataError("descriptor anchors must precede all exemplar anchors")
        descriptor_labels = [a.label for a in self.anchors[:first_exemplar]]
        if descriptor_labels != sorted(descriptor_labels):
            raise DataError("descriptor anchors must be in canonical label order")
        if len(descriptor_labels) != len(set(descriptor_labels)):
            raise DataError("duplicate descriptor label in anchor set")
        matrix = np.stack(
            [a.embedding.vector.astype(np.float64) for a in self.anchors]
        )
        matrix.flags.writeable = False
        object.__setattr__(self, "_matrix", matrix)
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            raise DataError("anchor set contains a zero-norm embedding")
        norms.flags.writeable = False
        object.__setattr__(self, "_norms", norms)

    @property
    def dim(self) -> int:
        return self.anchors[0].embedding.dim

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix  # type: ignore[attr-defined]

    def label_set(self) -> tuple[str, ...]:
        return tuple(sorted({a.label for a in self.anchors}))

    def exemplar_count(self) -> int:
        return sum(1 for a in self.anchors if a.kind == KIND_EXEMPLAR)

    @classmethod
    def from_descriptors(
        cls, texts: Mapping[str, str], provider: EmbeddingProvider
    ) -> "AnchorSet":
        """Embed one descriptor text per label, in canonical label order."""
        if not texts:
            raise DataError("no descriptors to build anchors from")
        labels = sorted(texts)
        embeddings = provider.embed_batch([texts[lb] for lb in labels])
        return cls(
            anchors=tuple(
                Anchor(
                    label=lb,
                    embedding=emb,
                    kind=KIND_DESCRIPTOR,
                    anchor_id=f"descriptor:{lb}",
                )
                for lb, emb in zip(labels, embeddings)
            )
        )


@dataclass(frozen=True)
class Prediction:
    window_id: str
    predicted_label: str
    winning_anchor_id: str
    scores: tuple[float, ...]
    metric: str


def classify(
    query: Embedding,
    anchors: AnchorSet,
    metric: str = "cosine",
    window_id: str = "",
) -> Prediction:
    """Score the query against every anchor and take the best label.

    Best means highest cosine similarity or smallest L2 distance; exact
    ties go to the anchor earlier in canonical order, so results are
    deterministic. For unit-norm embeddings the two metrics rank anchors
    identically (d^2 = 2 - 2 cos), which is property-tested.
    """
    if metric not in METRICS:
        raise DataError(f"unknown metric {metric!r} (expected one of {METRICS})")
    if query.dim != anchors.dim:
        raise DimensionMismatchError(
            f"query dim {query.dim} does not match anchor dim {anchors.dim}"
        )
    q = query.vector.astype(np.float64)
    if metric == "cosine":
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise DataError("cannot classify a zero-norm query")
        scores = (anchors.matrix @ (q / qn)) / anchors._norms  # type: ignore[attr-defined]
        best = int(np.argmax(scores))
    else:
        scores = np.linalg.norm(anchors.matrix - q, axis=1)
        best = int(np.argmin(scores))
    winner = anchors.anchors[best]
    return Prediction(
        window_id=window_id,
        predicted_label=winner.label,
        winning_anchor_id=winner.anchor_id,
        scores=tuple(float(s) for s in scores),
        metric=metric,
    )


def top_anchors(
    prediction: Prediction, anchors: AnchorSet, n: int = 3
) -> list[tuple[str, float]]:
    """The n best (anchor_id, score) pairs under the prediction's metric."""
    indexed = list(enumerate(prediction.scores))
    reverse = prediction.metric == "cosine"
    indexed.sort(key=lambda pair: (-pair[1], pair[0]) if reverse else (pair[1], pair[0]))
    return [(anchors.anchors[i].anchor_id, score) for i, score in indexed[:n]]


def build_fewshot_anchors(
    base: AnchorSet,
    exemplars: Sequence[tuple[str, str]],
    provider: EmbeddingProvider,
) -> AnchorSet:
    """Extend an anchor set with labeled exemplar summaries.

    Each (summary text, label) pair becomes one exemplar anchor; the base
    set is unchanged and zero exemplars return it as-is. Labels must
    already exist in the base set.
    """
    if not exemplars:
        return base
    known = set(base.label_set())
    for _, label in exemplars:
        if label not in known:
            raise DataError(f"exemplar label {label!r} not in anchor label set")
    embeddings = provider.embed_batch([text for text, _ in exemplars])
    start = base.exemplar_count()
    extra = tuple(
        Anchor(
            label=label,
            embedding=emb,
            kind=KIND_EXEMPLAR,
            anchor_id=f"exemplar:{start + i:04d}",
        )
        for i, ((_, label), emb) in enumerate(zip(exemplars, embeddings))
    )
    return AnchorSet(anchors=base.anchors + extra)
