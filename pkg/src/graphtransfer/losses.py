"""Training objectives expressed as differentiable ``Value`` graphs.

Box arguments may carry ``Value`` or float components; ground truth is
usually plain floats.  Every cross-entropy clamps probabilities to
``[EPS, 1 - EPS]`` so losses stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .autograd import Mlp, Value, as_value, grl, vmax, vmin, vsum
from .graph import Box
from .matcher import Matching
from .sampling import EdgeSampleSet, Pair

EPS = 1e-7


@dataclass
class LossWeights:
    reg: float = 5.0
    giou: float = 2.0
    cls: float = 3.0
    reslt: float = 5.0
    da: float = 1.0

    def __post_init__(self):
        for name, val in self.as_dict().items():
            if val < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {val}")

    def as_dict(self) -> dict:
        return {"reg": self.reg, "giou": self.giou, "cls": self.cls,
                "reslt": self.reslt, "da": self.da}

    @classmethod
    def for_dims(cls, dims: int, da: float = 1.0) -> "LossWeights":
        if dims == 3:
            return cls(reg=2.0, giou=3.0, cls=4.0, reslt=6.0, da=da)
        return cls(reg=5.0, giou=2.0, cls=3.0, reslt=5.0, da=da)


@dataclass
class DaBatchViews:
    """Inputs to the domain-adversarial terms for one sample.

    ``patch_features`` are the per-patch image features, ``graph_tokens`` the
    ``(#o + #r) x d`` token matrix.  Both pass through a gradient reversal
    with coefficient ``alpha`` before reaching their classifiers.
    """

    patch_features: Sequence[Sequence[Value]]
    graph_tokens: Sequence[Sequence[Value]]
    domain: int
    img_classifier: Mlp
    graph_classifier: Mlp
    alpha: float = 1.0

    def __post_init__(self):
        if self.domain not in (0, 1):
            raise ValueError(f"domain label must be 0 or 1, got {self.domain}")


def binary_ce(label: float, prob) -> Value:
    p = as_value(prob).clamp(EPS, 1.0 - EPS)
    if label == 1:
        return -p.log()
    if label == 0:
        return -(1.0 - p).log()
    return -(label * p.log() + (1.0 - label) * (1.0 - p).log())


def l1_box(pred: Box, gt: Box) -> Value:
    if pred.dims != gt.dims:
        raise ValueError("box dimensionality mismatch")
    terms = [(as_value(p) - g).abs() for p, g in zip(pred.center + pred.extent, gt.center + gt.extent)]
    return vsum(terms)


def giou_loss(pred: Box, gt: Box) -> Value:
    """``1 - gIoU`` for axis-aligned boxes in 2D or 3D; range ``[0, 2]``."""
    if pred.dims != gt.dims:
        raise ValueError("box dimensionality mismatch")
    inter = None
    hull = None
    vol_a = None
    vol_b = None
    for pc, pe, gc, ge in zip(pred.center, pred.extent, gt.center, gt.extent):
        pc, pe = as_value(pc), as_value(pe)
        a_lo, a_hi = pc - pe, pc + pe
        b_lo, b_hi = gc - ge, gc + ge
        overlap = (vmin(a_hi, b_hi) - vmax(a_lo, b_lo)).relu()
        span = vmax(a_hi, b_hi) - vmin(a_lo, b_lo)
        inter = overlap if inter is None else inter * overlap
        hull = span if hull is None else hull * span
        vol_a = 2 * pe if vol_a is None else vol_a * (2 * pe)
        vol_b = 2 * ge if vol_b is None else vol_b * (2 * ge)
    union = vol_a + vol_b - inter
    # 1 - gIoU written as two terms that are each non-negative in floating point
    return ((vol_a + vol_b - 2 * inter) / union).relu() + ((hull - union) / hull).relu()


def reslt_loss(rel_prob: Mapping[Pair, Value | float], sample_set: EdgeSampleSet,
               normalize: bool = False) -> Value:
    """Cross-entropy summed over the sampled multiset, duplicates included."""
    terms = []
    for pair, label in sample_set.labeled():
        if pair not in rel_prob:
            raise KeyError(f"no relation probability for sampled pair {pair}")
        terms.append(binary_ce(label, rel_prob[pair]))
    if not terms:
        return Value(0.0)
    total = vsum(terms)
    return total / len(terms) if normalize else total


def cls_loss(cls_prob: Sequence, matched: Sequence[bool]) -> Value:
    if len(cls_prob) != len(matched):
        raise ValueError("one matched flag per token is required")
    if not cls_prob:
        return Value(0.0)
    return vsum(binary_ce(1 if m else 0, p) for p, m in zip(cls_prob, matched))


def da_image_loss(patch_probs: Sequence, domain: int) -> Value:
    return vsum(binary_ce(domain, p) for p in patch_probs)


def graph_domain_prob(tokens: Sequence[Sequence[Value]], classifier: Mlp) -> Value:
    """Mean-pool the token matrix, then classify with a sigmoid output."""
    if not tokens:
        raise ValueError("empty token matrix")
    d = len(tokens[0])
    if any(len(t) != d for t in tokens):
        raise ValueError("ragged token matrix")
    if classifier.sizes[0] != d:
        raise ValueError(f"shape mismatch: classifier expects {classifier.sizes[0]} inputs, tokens have {d}")
    n = len(tokens)
    pooled = [vsum(t[k] for t in tokens) * (1.0 / n) for k in range(d)]
    out = classifier(pooled)[0]
    return out if classifier.head == "sigmoid" else out.sigmoid()


def da_graph_loss(tokens: Sequence[Sequence[Value]], classifier: Mlp, domain: int) -> Value:
    return binary_ce(domain, graph_domain_prob(tokens, classifier))


def da_consistency_loss(patch_probs: Sequence, graph_prob) -> Value:
    if not patch_probs:
        raise ValueError("consistency loss needs at least one patch")
    mean = vsum(patch_probs) * (1.0 / len(patch_probs))
    return (mean - graph_prob).abs()


def patch_domain_probs(features: Sequence[Sequence[Value]], classifier: Mlp) -> list[Value]:
    out = []
    for f in features:
        p = classifier(f)[0]
        out.append(p if classifier.head == "sigmoid" else p.sigmoid())
    return out


def da_losses(views: DaBatchViews) -> tuple[Value, Value, Value]:
    """Image, graph and consistency terms, each classifier behind a reversal layer."""
    feats = [[grl(v, views.alpha) for v in f] for f in views.patch_features]
    toks = [[grl(v, views.alpha) for v in t] for t in views.graph_tokens]
    patch_probs = patch_domain_probs(feats, views.img_classifier)
    graph_prob = graph_domain_prob(toks, views.graph_classifier)
    return (da_image_loss(patch_probs, views.domain),
            binary_ce(views.domain, graph_prob),
            da_consistency_loss(patch_probs, graph_prob))


@dataclass
class LossBreakdown:
    total: Value
    components: dict[str, Value] = field(default_factory=dict)

    def as_floats(self) -> dict[str, float]:
        out = {k: v.data for k, v in self.components.items()}
        out["total"] = self.total.data
        return out


def combined_loss(pred_boxes: Sequence[Box], cls_prob: Sequence, gt_boxes: Sequence[Box],
                  matching: Matching, rel_prob: Mapping[Pair, Value | float] | None,
                  sample_set: EdgeSampleSet | None, weights: LossWeights,
                  da_views: Sequence[DaBatchViews] | DaBatchViews | None = None,
                  normalize_reslt: bool = False) -> LossBreakdown:
    """Weighted sum of box, class, relation and (optional) domain-adversarial terms.

    ``rel_prob`` keys are ``(sample, i, j)`` in the same index space as
    ``sample_set``.  The domain block is added only when ``da_views`` is given.
    """
    n = len(pred_boxes)
    if len(cls_prob) != n:
        raise ValueError("one class probability per predicted box is required")
    reg_terms, giou_terms = [], []
    matched = [False] * n
    for p, g in matching.pairs:
        if not (0 <= p < n and 0 <= g < len(gt_boxes)):
            raise IndexError(f"matching pair ({p}, {g}) is out of range")
        matched[p] = True
        reg_terms.append(l1_box(pred_boxes[p], gt_boxes[g]))
        giou_terms.append(giou_loss(pred_boxes[p], gt_boxes[g]))
    comps = {
        "reg": vsum(reg_terms) if reg_terms else Value(0.0),
        "giou": vsum(giou_terms) if giou_terms else Value(0.0),
        "cls": cls_loss(list(cls_prob), matched),
    }
    if sample_set is not None and rel_prob is not None:
        comps["reslt"] = reslt_loss(rel_prob, sample_set, normalize=normalize_reslt)
    else:
        comps["reslt"] = Value(0.0)
    terms = [weights.reg * comps["reg"], weights.giou * comps["giou"],
             weights.cls * comps["cls"], weights.reslt * comps["reslt"]]
    if da_views is not None:
        views = [da_views] if isinstance(da_views, DaBatchViews) else list(da_views)
        parts = [da_losses(v) for v in views]
        comps["img"] = vsum(p[0] for p in parts)
        comps["graph"] = vsum(p[1] for p in parts)
        comps["cst"] = vsum(p[2] for p in parts)
        terms.append(weights.da * (comps["img"] + comps["graph"] + comps["cst"]))
    return LossBreakdown(vsum(terms), comps)


def loss_is_finite(x: Value) -> bool:
    return math.isfinite(x.data)
