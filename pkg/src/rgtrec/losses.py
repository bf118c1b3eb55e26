"""All training objectives and their weighted combination.

Every term is a mean over its index set so the weights keep their meaning
regardless of batch size.  Log-sigmoid terms are computed through softplus
(-log sigmoid(x) = softplus(-x)) so nothing saturates, and the contrastive
term uses a shifted log-sum-exp.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .data import BipartiteGraph

log = logging.getLogger(__name__)

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0        # recommendation cross-entropy
    mae: float = 1.0        # masked-edge reconstruction
    distill: float = 0.1    # teacher/student embedding matching
    ranking: float = 1.0    # pairwise ranking on the rationale pathway
    contrast: float = 0.005  # rationale/complement separation
    reg: float = 1e-4       # Frobenius norm of all parameters
    temperature: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "temperature":
                if value <= 0:
                    raise ValueError("temperature must be positive")
            elif value < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0, got {value}")


@dataclass
class LossReport:
    """Per-term scalar values for one step; total is the weighted sum."""

    rec: float = 0.0
    mae: float = 0.0
    distill: float = 0.0
    ranking: float = 0.0
    contrast: float = 0.0
    reg: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def sample_non_neighbors(g: BipartiteGraph, user_node: int, count: int,
                         rng: np.random.Generator, max_tries: int = 200) -> np.ndarray:
    """Item nodes the user has no train edge to, by rejection sampling."""
    positives = set(int(x) for x in g.neighbors(user_node))
    lo, hi = g.num_users, g.num_users + g.num_items
    out = np.empty(count, dtype=np.int64)
    for j in range(count):
        for _ in range(max_tries):
            cand = int(rng.integers(lo, hi))
            if cand not in positives:
                out[j] = cand
                break
        else:
            raise ValueError(f"user node {user_node} interacts with every item")
    return out


def _pair_scores(s: T.Tensor, left: np.ndarray, right: np.ndarray) -> T.Tensor:
    return T.tsum(T.mul(T.take(s, left), T.take(s, right)), axis=1)


def loss_mae(s: T.Tensor, masked_out_edges: np.ndarray, g: BipartiteGraph,
             rng: np.random.Generator, negatives_per_edge: int = 1,
             literal: bool = False) -> T.Tensor:
    """Reconstruction of masked-out edges against sampled non-edges.

    Mean over masked-out edges of -log sigmoid(score) for the edge plus
    -log sigmoid(-score) for each negative.  ``literal`` switches to the
    unbounded mean of raw negative scores (for comparison runs only).
    """
    if len(masked_out_edges) == 0:
        log.warning("masked-out edge set is empty; reconstruction loss is 0")
        return T.Tensor(0.0)
    users = masked_out_edges[:, 0]
    items = masked_out_edges[:, 1]
    pos = _pair_scores(s, users, items)
    if literal:
        return T.neg(T.tmean(pos))

    loss = T.softplus(T.neg(pos))
    for _ in range(negatives_per_edge):
        negs = np.array([sample_non_neighbors(g, int(u), 1, rng)[0] for u in users])
        loss = T.add(loss, T.softplus(_pair_scores(s, users, negs)))
    return T.tmean(loss)


def _row_cosines(emb_a: T.Tensor, emb_b: T.Tensor) -> T.Tensor:
    for emb in (emb_a, emb_b):
        norms = np.linalg.norm(emb.values, axis=1)
        if (norms < 1e-9).any():
            log.warning("%d zero-norm embeddings in cosine; treated as 0",
                        int((norms < 1e-9).sum()))
    dot = T.tsum(T.mul(emb_a, emb_b), axis=1)
    na = T.sqrt(T.add(T.tsum(T.square(emb_a), axis=1), _NORM_EPS))
    nb = T.sqrt(T.add(T.tsum(T.square(emb_b), axis=1), _NORM_EPS))
    return T.div(dot, T.mul(na, nb))


def loss_cir(emb_rationale: T.Tensor, emb_complement: T.Tensor,
             temperature: float) -> T.Tensor:
    """log-sum-exp over nodes of the temperature-scaled cosine between the
    rationale-view and complement-view embeddings; minimizing pushes the two
    views apart."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if emb_rationale.shape != emb_complement.shape:
        raise T.ShapeMismatchError(
            f"embedding tables differ: {emb_rationale.shape} vs {emb_complement.shape}")
    scaled = T.div(_row_cosines(emb_rationale, emb_complement), float(temperature))
    shift = float(scaled.values.max())
    return T.add(T.log(T.tsum(T.exp(T.sub(scaled, shift)))), shift)


def loss_rec(s: T.Tensor, batch_pairs: np.ndarray,
             candidate_item_nodes: np.ndarray) -> T.Tensor:
    """Softmax cross-entropy of each (user, positive item) pair against the
    candidate item set (the full item set by default upstream)."""
    if len(batch_pairs) == 0:
        raise ValueError("recommendation loss needs a non-empty batch")
    users = batch_pairs[:, 0]
    positives = batch_pairs[:, 1]
    missing = np.setdiff1d(positives, candidate_item_nodes)
    if missing.size:
        raise ValueError(f"positive items missing from candidate set: {missing[:5]}")

    u = T.take(s, users)
    cands = T.take(s, candidate_item_nodes)
    scores = T.matmul(u, T.transpose(cands))
    row_max = scores.values.max(axis=1, keepdims=True)
    lse = T.add(T.log(T.tsum(T.exp(T.sub(scores, T.Tensor(row_max, dtype=s.dtype))), axis=1)),
                T.Tensor(row_max[:, 0], dtype=s.dtype))
    pos_scores = _pair_scores(s, users, positives)
    return T.tmean(T.sub(lse, pos_scores))


def loss_bpr(s_pathway: T.Tensor, triples: np.ndarray) -> T.Tensor:
    """Mean -log sigmoid(score(u, p+) - score(u, p-)) over sampled triples."""
    if len(triples) == 0:
        raise ValueError("ranking loss needs a non-empty triple batch")
    pos = _pair_scores(s_pathway, triples[:, 0], triples[:, 1])
    neg = _pair_scores(s_pathway, triples[:, 0], triples[:, 2])
    return T.tmean(T.softplus(T.neg(T.sub(pos, neg))))


@dataclass
class EmbeddingBundle:
    """The four embedding groups matched between teacher and student."""

    user: T.Tensor
    item: T.Tensor
    contrast: T.Tensor
    subgraph: T.Tensor

    def detached(self) -> "EmbeddingBundle":
        return EmbeddingBundle(self.user.detach(), self.item.detach(),
                               self.contrast.detach(), self.subgraph.detach())


def loss_distill(student: EmbeddingBundle, teacher: EmbeddingBundle) -> T.Tensor:
    """Sum of slot-wise mean squared errors; the teacher side is frozen."""
    total = None
    for slot in ("user", "item", "contrast", "subgraph"):
        s_emb = getattr(student, slot)
        t_emb = getattr(teacher, slot).detach()
        if s_emb.shape != t_emb.shape:
            raise T.ShapeMismatchError(
                f"distillation slot {slot!r}: student {s_emb.shape} vs teacher {t_emb.shape}")
        mse = T.tmean(T.square(T.sub(s_emb, t_emb)))
        total = mse if total is None else T.add(total, mse)
    return total


def frobenius_penalty(params: dict[str, T.Tensor]) -> T.Tensor:
    total = None
    for p in params.values():
        term = T.tsum(T.square(p))
        total = term if total is None else T.add(total, term)
    return total if total is not None else T.Tensor(0.0)


def total_loss(rec: T.Tensor, mae: T.Tensor, distill: T.Tensor, ranking: T.Tensor,
               contrast: T.Tensor, weights: LossWeights,
               params: dict[str, T.Tensor]) -> tuple[T.Tensor, LossReport]:
    """Weighted combination of all terms plus the Frobenius penalty."""
    reg = frobenius_penalty(params)
    terms = {"rec": rec, "mae": mae, "distill": distill,
             "ranking": ranking, "contrast": contrast, "reg": reg}
    for name, term in terms.items():
        if not np.isfinite(term.values).all():
            raise FloatingPointError(f"loss term {name!r} is non-finite")

    total = T.mul(rec, weights.rec)
    total = T.add(total, T.mul(mae, weights.mae))
    total = T.add(total, T.mul(distill, weights.distill))
    total = T.add(total, T.mul(ranking, weights.ranking))
    total = T.add(total, T.mul(contrast, weights.contrast))
    total = T.add(total, T.mul(reg, weights.reg))

    report = LossReport(
        rec=float(rec.values), mae=float(mae.values), distill=float(distill.values),
        ranking=float(ranking.values), contrast=float(contrast.values),
        reg=float(reg.values), total=float(total.values),
    )
    return total, report
