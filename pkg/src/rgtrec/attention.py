"""Multi-head attention over graph edges and edge-level rationale scores.

Attention is evaluated on graph neighbors only: for each directed edge
(k -> k') the raw score is a scaled query/key dot product, normalized by a
softmax over k's neighborhood.  Head-averaged directed scores are symmetrized
per undirected edge and normalized over the whole edge set to produce a
probability distribution used for rationale sampling.

The propagation block is a light self-attention: per-head linear value
transforms aggregated with the attention weights, concatenated and passed
through an output projection; no feed-forward sublayer, no layer norm.
Stacked blocks share one parameter set and combine through residual links.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import BipartiteGraph
from .seeding import substream

log = logging.getLogger(__name__)


class AttentionParams:
    """Per-head query/key/value transforms plus a shared output projection."""

    def __init__(self, latdim: int, heads: int, seed: int, prefix: str = "attn"):
        if latdim % heads != 0:
            raise ValueError(f"latdim {latdim} not divisible by {heads} heads")
        self.latdim = latdim
        self.heads = heads
        self.head_dim = latdim // heads
        rng = substream(seed, "attn-init", prefix)
        scale = 1.0 / np.sqrt(latdim)

        def mk(name, shape):
            return T.parameter(rng.uniform(-scale, scale, size=shape), name=f"{prefix}.{name}")

        self.wq = [mk(f"wq.{h}", (self.head_dim, latdim)) for h in range(heads)]
        self.wk = [mk(f"wk.{h}", (self.head_dim, latdim)) for h in range(heads)]
        self.wv = [mk(f"wv.{h}", (self.head_dim, latdim)) for h in range(heads)]
        self.wo = mk("wo", (latdim, latdim))

    def parameters(self) -> dict[str, T.Tensor]:
        out = {}
        for mats in (self.wq, self.wk, self.wv):
            for w in mats:
                out[w.name] = w
        out[self.wo.name] = self.wo
        return out


@dataclass
class EdgeScoreTable:
    """Rationale probabilities per undirected edge plus raw per-head scores."""

    probs: np.ndarray        # (num_edges,) summing to 1
    head_scores: np.ndarray  # (heads, num_directed) softmax-normalized per source


def _log_isolated(g: BipartiteGraph) -> None:
    isolated = int((g.degree == 0).sum())
    if isolated:
        log.debug("attention skipping %d isolated nodes", isolated)


def attention_scores(h_bar: T.Tensor, g: BipartiteGraph, params: AttentionParams) -> list[T.Tensor]:
    """Per-head neighbor-normalized attention over directed CSR slots."""
    _log_isolated(g)
    src = g.directed_src
    dst = g.csr_neighbors
    inv_sqrt = 1.0 / np.sqrt(params.head_dim)
    out = []
    for h in range(params.heads):
        q = T.matmul(h_bar, T.transpose(params.wq[h]))
        k = T.matmul(h_bar, T.transpose(params.wk[h]))
        raw = T.mul(T.tsum(T.mul(T.take(q, src), T.take(k, dst)), axis=1), inv_sqrt)
        out.append(T.segment_softmax(raw, src, g.num_nodes))
    return out


def edge_rationale_probs(head_scores: list[T.Tensor], g: BipartiteGraph) -> EdgeScoreTable:
    """Probability of each undirected edge being a rationale.

    Head scores are averaged, the two directions of every edge are averaged,
    and the result is normalized over the edge set so it sums to one.
    """
    if g.num_edges == 0:
        raise ValueError("rationale probabilities need a non-empty edge set")
    mean = head_scores[0]
    for hs in head_scores[1:]:
        mean = T.add(mean, hs)
    mean = T.div(mean, float(len(head_scores)))

    per_edge = T.div(T.segment_sum(mean, g.csr_edge_ids, g.num_edges), 2.0)
    total = float(per_edge.values.sum())
    if total <= 0.0:
        raise ValueError("degenerate attention: edge scores sum to zero")
    probs = T.div(per_edge, total)
    stacked = np.stack([hs.values for hs in head_scores], axis=0)
    return EdgeScoreTable(probs=probs.values.copy(), head_scores=stacked)


def light_self_attention(h_in: T.Tensor, g: BipartiteGraph, params: AttentionParams) -> T.Tensor:
    """Attention-weighted value aggregation with an output projection.

    Isolated nodes receive a zero row (their neighborhood is empty).
    """
    alphas = attention_scores(h_in, g, params)
    src = g.directed_src
    dst = g.csr_neighbors
    head_outputs = []
    for h in range(params.heads):
        v = T.matmul(h_in, T.transpose(params.wv[h]))
        weighted = T.mul(T.take(v, dst), T.reshape(alphas[h], (-1, 1)))
        head_outputs.append(T.segment_sum(weighted, src, g.num_nodes))
    stacked = T.concat(head_outputs, axis=1) if len(head_outputs) > 1 else head_outputs[0]
    return T.matmul(stacked, T.transpose(params.wo))


def residual_gt(h_in: T.Tensor, g: BipartiteGraph, params: AttentionParams,
                n_layers: int, residual: bool = True) -> T.Tensor:
    """n_layers of light self-attention with residual links (shared weights)."""
    if n_layers < 1:
        raise ValueError(f"need at least one transformer layer, got {n_layers}")
    h = h_in
    for _ in range(n_layers):
        out = light_self_attention(h, g, params)
        h = T.add(out, h) if residual else out
    return h
