"""Nearest-explanation retrieval over the frozen catalog.

The index holds one embedding per catalog concept set, rendered with a
canonical action prefix (Connect 4 uses the center column; lander templates
carry their own bound action phrase).  Retrieval is exact L2 with ties
broken by catalog order, so it is a pure function of (index, query).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import concepts
from .concepts import ConceptSet, Explanation
from .core import DomainId, Transition
from .errors import BadK, DomainMismatch, EmptyTestSet

# action-neutral: a concrete column would bias the index toward or away
# from center-dominance sets, since CD membership is itself decided by the
# played column; "n" reads as a placeholder and tokenizes identically to
# every rendered column number
C4_CANONICAL_PREFIX = "Play column n"


@dataclass(frozen=True)
class CatalogIndex:
    domain: DomainId
    sets: tuple[ConceptSet, ...]
    explanations: tuple[Explanation, ...]
    embeddings: np.ndarray  # (n_sets, dim)


@dataclass(frozen=True)
class RetrievalResult:
    transition: Transition
    ranked: tuple[tuple[ConceptSet, float], ...]


def canonical_explanations(domain: DomainId) -> list[Explanation]:
    cat = concepts.template_catalog(domain)
    out = []
    for cs in cat.sets:
        body = cat.body(cs)
        if domain is DomainId.CONNECT4:
            prefix = C4_CANONICAL_PREFIX
        else:
            prefix = cat.bound_action_phrase(cs)
        out.append(Explanation(prefix, body, f"{prefix} {body}", cs))
    return out


def build_index(model) -> CatalogIndex:
    exps = canonical_explanations(model.domain)
    emb = np.stack([model.encode_explanation(e) for e in exps])
    return CatalogIndex(
        domain=model.domain,
        sets=tuple(e.concept_set for e in exps),
        explanations=tuple(exps),
        embeddings=emb,
    )


def _rank(index: CatalogIndex, s_embed: np.ndarray) -> list[tuple[int, float]]:
    diff = index.embeddings - s_embed[None, :]
    d = np.sqrt((diff * diff).sum(axis=1))
    # stable sort keeps catalog order on exact ties
    order = np.argsort(d, kind="stable")
    return [(int(i), float(d[int(i)])) for i in order]


def retrieve(index: CatalogIndex, model, t: Transition, k: int) -> RetrievalResult:
    if t.domain is not index.domain:
        raise DomainMismatch(f"query domain {t.domain} != index domain {index.domain}")
    if not (1 <= k <= len(index.sets)):
        raise BadK(f"k must be in [1, {len(index.sets)}]")
    s_embed = model.encode_state(t.s_prev, t.s_curr, t.ctx)
    ranked = _rank(index, s_embed)[:k]
    return RetrievalResult(
        transition=t,
        ranked=tuple((index.sets[i], dist) for i, dist in ranked),
    )


def _true_and_top(index: CatalogIndex, model, sample) -> tuple[int, list[int]]:
    s_embed = model.encode_state(sample.s_prev, sample.s_curr, sample.ctx)
    ranked = _rank(index, s_embed)
    cat = concepts.template_catalog(index.domain)
    return cat.index_of(sample.explanation.concept_set), [i for i, _ in ranked]


def recall_at_k(index: CatalogIndex, model, samples, k: int) -> float:
    if not samples:
        raise EmptyTestSet("no test samples")
    if not (1 <= k <= len(index.sets)):
        raise BadK(f"k must be in [1, {len(index.sets)}]")
    hits = 0
    for s in samples:
        true_idx, order = _true_and_top(index, model, s)
        if true_idx in order[:k]:
            hits += 1
    return hits / len(samples)


def confusion_matrix(index: CatalogIndex, model, samples) -> np.ndarray:
    if not samples:
        raise EmptyTestSet("no test samples")
    n = len(index.sets)
    mat = np.zeros((n, n), dtype=np.int64)
    for s in samples:
        true_idx, order = _true_and_top(index, model, s)
        mat[true_idx, order[0]] += 1
    return mat


class InWildMonitor:
    """Streaming recall@1 against the labeler during a live RL run."""

    def __init__(self, index: CatalogIndex, model, window: int = 100):
        self.index = index
        self.model = model
        self.window = window
        self._recent: list[int] = []
        self.hits = 0
        self.total = 0

    def observe(self, t: Transition, true_set: ConceptSet) -> bool:
        s_embed = self.model.encode_state(t.s_prev, t.s_curr, t.ctx)
        top = _rank(self.index, s_embed)[0][0]
        hit = self.index.sets[top] == true_set
        self.total += 1
        self.hits += int(hit)
        self._recent.append(int(hit))
        if len(self._recent) > self.window:
            self._recent.pop(0)
        return hit

    @property
    def cumulative(self) -> float:
        return self.hits / self.total if self.total else 0.0

    @property
    def windowed(self) -> float:
        return sum(self._recent) / len(self._recent) if self._recent else 0.0


class OracleEncoder:
    """One-hot stand-in for a trained model, keyed by the labeler.

    Perfect by construction: the state embedding equals the one-hot of the
    ground-truth concept set, so rank-1 retrieval always matches the labeler.
    Used to test shaping-source equivalence independently of training.
    """

    def __init__(self, domain: DomainId):
        self.domain = domain
        self._cat = concepts.template_catalog(domain)
        self.dim = len(self._cat.sets)

    def _one_hot(self, idx: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[idx] = 1.0
        return v

    def encode_state(self, s_prev, s_curr, ctx) -> np.ndarray:
        if self.domain is DomainId.CONNECT4:
            t = Transition(self.domain, s_prev, None, s_curr, ctx)
            cs = concepts.label_connect4(t)
        else:
            from . import lander
            # the state records which engine fired; outcome is recomputable
            if s_curr.main_fired:
                action = lander.LanderAction.FIRE_MAIN
            elif s_curr.side_fired:
                action = lander.LanderAction.FIRE_LEFT
            else:
                action = lander.LanderAction.NOOP
            t = Transition(self.domain, s_prev, action, s_curr, ctx)
            cs = concepts.label_lander(t, lander._outcome(s_curr, lander.DEFAULT_CONFIG))
        return self._one_hot(self._cat.index_of(cs))

    def encode_explanation(self, e) -> np.ndarray:
        cs = e.concept_set if isinstance(e, Explanation) else e
        return self._one_hot(self._cat.index_of(cs))


def evaluation_report(index: CatalogIndex, model, samples, ks=(1, 2, 3)) -> dict:
    """Per-k recall, confusion counts, and per-class precision/recall."""
    mat = confusion_matrix(index, model, samples)
    n = len(index.sets)
    per_class = []
    for i in range(n):
        tp = int(mat[i, i])
        support = int(mat[i].sum())
        predicted = int(mat[:, i].sum())
        per_class.append(
            {
                "set": index.sets[i].label(),
                "support": support,
                "precision": tp / predicted if predicted else None,
                "recall": tp / support if support else None,
            }
        )
    return {
        "domain": index.domain.value,
        "n_samples": int(mat.sum()),
        "recall_at_k": {
            str(k): recall_at_k(index, model, samples, k) for k in ks
        },
        "confusion": mat.tolist(),
        "classes": per_class,
    }


def export_embeddings_csv(model, samples, path: str) -> None:
    """State embeddings plus true labels, for external projection plots."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        dim = model.dim if hasattr(model, "dim") else len(samples)
        w.writerow([f"e{i}" for i in range(dim)] + ["label"])
        for s in samples:
            vec = model.encode_state(s.s_prev, s.s_curr, s.ctx)
            w.writerow([f"{v:.8g}" for v in vec] + [s.explanation.concept_set.label()])


def save_report(report: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
