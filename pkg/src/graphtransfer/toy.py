"""Desk-scale image-to-graph model trained with the combined set-prediction loss.

The image is average-pooled and cut into a ``grid x grid`` array of patches.
A shared encoder turns each patch into a feature vector; one object token
is anchored at each patch center and regresses a small offset plus an
existence logit.  A relation token summarises the whole image and feeds a
pairwise relation head.  During joint pretraining two adversaries, one on
patch features and one on the token matrix, sit behind gradient reversal.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .autograd import Adam, Mlp, Value, alpha_schedule, vsum
from .data import Domain, Sample
from .graph import Box, SpatialGraph
from .losses import DaBatchViews, LossWeights, combined_loss
from .matcher import Matching, cost_matrix_arrays, hungarian
from .metrics import (DEFAULT_NODE_BOX_HALF, MetricConfig, MetricReport, ScoredGraph,
                      evaluate_graphs)
from .projection import project2d
from .sampling import EdgeSampleSet, enumerate_edges, fixed_m_sample, regularized_sample
from .synthetic import RenderParams, Style, SynthConfig, gen_synthetic

R_SWEEP = (0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


@dataclass
class ModelSpec:
    image_size: int = 64
    grid: int = 4               # patches (and object tokens) per axis
    patch_pixels: int = 8       # pooled pixels per patch side
    feat: int = 8
    enc_hidden: int = 16
    token: int = 8
    rel_hidden: int = 8
    adv_hidden: int = 8
    offset_scale: float = 0.125
    node_box_half: float = DEFAULT_NODE_BOX_HALF

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid


@dataclass
class TrainConfig:
    """Training settings; defaults are desk-sized, not paper-sized."""

    seed: int = 0
    pretrain_epochs: int = 2
    finetune_epochs: int = 3
    batch_size: int = 8
    lr: float = 0.01
    pretrain_lr: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)
    sampler: str = "regularized"      # or "fixed_m"
    r: float = 0.8                    # validation-best at desk scale
    m: int = 20
    da: bool = True
    alpha_max: float = 1.0
    gamma: float = 10.0
    normalize_reslt: bool = True
    cosine_lr: bool = False           # anneal the finetuning rate to zero
    decode_threshold: float = 0.5
    model: ModelSpec = field(default_factory=ModelSpec)

    def __post_init__(self):
        if self.finetune_epochs < 1 and self.pretrain_epochs < 1:
            raise ValueError("at least one training epoch is required")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.sampler not in ("regularized", "fixed_m"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "weights" in obj:
            obj["weights"] = LossWeights(**obj["weights"])
        if "model" in obj:
            obj["model"] = ModelSpec(**obj["model"])
        return cls(**obj)


# ---------------------------------------------------------------- model

def _np_layers(net: Mlp) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.array([[w.data for w in row] for row in W]), np.array([b.data for b in B]))
            for W, B in zip(net.weights, net.biases)]


def _np_forward(layers, x: np.ndarray, relu_last: bool = False) -> np.ndarray:
    for k, (W, b) in enumerate(layers):
        x = x @ W.T + b
        if k < len(layers) - 1 or relu_last:
            x = np.maximum(x, 0.0)
    return x


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class ToyModel:
    """Encoder, token/relation heads and the two domain adversaries."""

    PARTS = ("encoder", "head", "rel_token", "rel_a", "rel_b", "rel_geo", "rel_out",
             "img_adversary", "graph_adversary")

    def __init__(self, spec: ModelSpec | None = None, seed: int = 0):
        self.spec = spec = spec or ModelSpec()
        if spec.image_size % (spec.grid * spec.patch_pixels):
            raise ValueError("image_size must be a multiple of grid * patch_pixels")
        p = spec.patch_pixels ** 2
        self.encoder = Mlp([p, spec.enc_hidden, spec.feat], seed=seed)
        self.head = Mlp([spec.feat, spec.token, 3], seed=seed + 1)
        self.rel_token = Mlp([spec.feat, spec.token], seed=seed + 2)
        self.rel_a = Mlp([spec.token, spec.rel_hidden], seed=seed + 3)
        self.rel_b = Mlp([spec.token, spec.rel_hidden], seed=seed + 4)
        self.rel_geo = Mlp([3 + spec.token, spec.rel_hidden], seed=seed + 5)
        self.rel_out = Mlp([spec.rel_hidden, 1], seed=seed + 6)
        self.img_adversary = Mlp([spec.feat, spec.adv_hidden, 1], head="sigmoid", seed=seed + 7)
        self.graph_adversary = Mlp([spec.token, spec.adv_hidden, 1], head="sigmoid", seed=seed + 8)
        g = spec.grid
        self.anchors = np.array([[(r + 0.5) / g, (c + 0.5) / g] for r in range(g) for c in range(g)])

    def nets(self) -> dict[str, Mlp]:
        return {name: getattr(self, name) for name in self.PARTS}

    def predictor_parameters(self) -> list[Value]:
        return [p for name, net in self.nets().items() if "adversary" not in name
                for p in net.parameters()]

    def adversary_parameters(self) -> list[Value]:
        return self.img_adversary.parameters() + self.graph_adversary.parameters()

    def parameters(self) -> list[Value]:
        return self.predictor_parameters() + self.adversary_parameters()

    # -- input
    def patches(self, image: np.ndarray) -> np.ndarray:
        """``(n_tokens, patch_pixels**2)`` array of pooled patch intensities."""
        s = self.spec
        if image.shape != (s.image_size, s.image_size):
            raise ValueError(f"expected a {s.image_size}x{s.image_size} image, got {image.shape}")
        pooled_size = s.grid * s.patch_pixels
        f = s.image_size // pooled_size
        pooled = image.reshape(pooled_size, f, pooled_size, f).mean(axis=(1, 3))
        p = s.patch_pixels
        blocks = pooled.reshape(s.grid, p, s.grid, p).transpose(0, 2, 1, 3)
        return blocks.reshape(s.n_tokens, p * p).astype(float)

    def _geometry(self, i: int, j: int) -> list[float]:
        d = (self.anchors[j] - self.anchors[i]) * self.spec.grid
        return [float(d[0]), float(d[1]), float(np.hypot(*d))]

    # -- differentiable forward
    def forward(self, image: np.ndarray) -> "ToyForward":
        s = self.spec
        feats = []
        for x in self.patches(image):
            feats.append([v.relu() for v in self.encoder.trace(list(x))[-1]])
        tokens, centers, cls_prob = [], [], []
        for a, f in zip(self.anchors, feats):
            hidden, out = self.head.trace(f)
            tokens.append(hidden)
            centers.append([float(a[k]) + s.offset_scale * out[k].tanh() for k in range(2)])
            cls_prob.append(out[2].sigmoid())
        n = len(feats)
        pooled = [vsum(f[k] for f in feats) * (1.0 / n) for k in range(s.feat)]
        rel_tok = [v.relu() for v in self.rel_token.trace(pooled)[-1]]
        return ToyForward(self, feats, tokens, centers, cls_prob, rel_tok)

    # -- numpy inference
    def infer(self, image: np.ndarray) -> dict:
        s = self.spec
        feats = _np_forward(_np_layers(self.encoder), self.patches(image), relu_last=True)
        head = _np_layers(self.head)
        tokens = np.maximum(feats @ head[0][0].T + head[0][1], 0.0)
        out = tokens @ head[1][0].T + head[1][1]
        centers = self.anchors + s.offset_scale * np.tanh(out[:, :2])
        cls_prob = _sigmoid(out[:, 2])
        rel_tok = _np_forward(_np_layers(self.rel_token), feats.mean(0), relu_last=True)
        (Wa, ba), = _np_layers(self.rel_a)
        (Wb, bb), = _np_layers(self.rel_b)
        (Wg, bg), = _np_layers(self.rel_geo)
        (Wo, bo), = _np_layers(self.rel_out)
        ha = tokens @ Wa.T + ba
        hb = tokens @ Wb.T + bb
        n = len(tokens)
        rel = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                geo = np.concatenate((self._geometry(i, j), rel_tok)) @ Wg.T + bg
                h = np.maximum(ha[i] + hb[j] + geo, 0.0)
                rel[i, j] = rel[j, i] = _sigmoid(h @ Wo[0] + bo[0])
        return {"centers": centers, "cls_prob": cls_prob, "rel_prob": rel}

    # -- checkpoints
    def state(self) -> dict:
        return {"spec": asdict(self.spec), "nets": {k: v.state() for k, v in self.nets().items()}}

    @classmethod
    def from_state(cls, state: dict) -> "ToyModel":
        model = cls(ModelSpec(**state["spec"]))
        for name, st in state["nets"].items():
            setattr(model, name, Mlp.from_state(st))
        return model


@dataclass
class ToyForward:
    """Differentiable outputs for one image; relation probabilities are built on demand."""

    model: ToyModel
    feats: list[list[Value]]
    tokens: list[list[Value]]
    centers: list[list[Value]]
    cls_prob: list[Value]
    rel_token: list[Value]
    _ha: list | None = None
    _hb: list | None = None
    _geo: dict = field(default_factory=dict)

    def rel_prob(self, i: int, j: int) -> Value:
        m = self.model
        if self._ha is None:
            self._ha = [m.rel_a.trace(t)[-1] for t in self.tokens]
            self._hb = [m.rel_b.trace(t)[-1] for t in self.tokens]
        key = tuple(np.round((m.anchors[j] - m.anchors[i]) * m.spec.grid).astype(int))
        if key not in self._geo:
            self._geo[key] = m.rel_geo.trace(m._geometry(i, j) + list(self.rel_token))[-1]
        geo = self._geo[key]
        h = [vsum((a, b, g)).relu() for a, b, g in zip(self._ha[i], self._hb[j], geo)]
        return m.rel_out.trace(h)[-1][0].sigmoid()

    def boxes(self) -> list[Box]:
        half = self.model.spec.node_box_half
        return [Box(tuple(c), (half, half)) for c in self.centers]

    def graph_tokens(self) -> list[list[Value]]:
        return self.tokens + [self.rel_token]


# ---------------------------------------------------------------- one training step

def _gt_boxes(g: SpatialGraph, half: float) -> list[Box]:
    return [Box(tuple(v), (half,) * g.dims) for v in g.nodes]


def match_tokens(fwd: ToyForward, g: SpatialGraph, weights: LossWeights) -> Matching:
    half = fwd.model.spec.node_box_half
    pc = np.array([[c.data for c in cs] for cs in fwd.centers])
    probs = np.array([p.data for p in fwd.cls_prob])
    if g.num_nodes == 0:
        return Matching([], list(range(len(pc))))
    gc = g.coords()
    C = cost_matrix_arrays(pc, np.full_like(pc, half), probs, gc, np.full_like(gc, half),
                           weights.reg, weights.giou, weights.cls)
    return hungarian(C)


def token_sample_set(g: SpatialGraph, matching: Matching, cfg: TrainConfig,
                     rng_seed: int) -> EdgeSampleSet:
    """Sample ground-truth pairs, then rename nodes to their matched tokens."""
    active, background = enumerate_edges([g])
    if cfg.sampler == "regularized":
        if not active and not background:
            return EdgeSampleSet([], [], cfg.r)
        sset = regularized_sample(active, background, cfg.r, rng_seed)
    else:
        sset = fixed_m_sample(active, background, max(cfg.m, len(active)), rng_seed)
    tok = {gi: pi for pi, gi in matching.pairs}

    def rename(pairs):
        out = []
        for s, i, j in pairs:
            a, b = tok[i], tok[j]
            out.append((s, min(a, b), max(a, b)))
        return out

    return EdgeSampleSet(rename(sset.active), rename(sset.background), sset.ratio_target)


def sample_loss(model: ToyModel, sample: Sample, cfg: TrainConfig, rng_seed: int,
                alpha: float | None = None):
    """Combined loss for one sample; ``alpha`` switches the adversarial block on."""
    fwd = model.forward(sample.image.data)
    g = sample.graph
    matching = match_tokens(fwd, g, cfg.weights)
    sset = token_sample_set(g, matching, cfg, rng_seed)
    needed = {(s, i, j) for s, i, j in sset.active + sset.background}
    rel = {key: fwd.rel_prob(key[1], key[2]) for key in sorted(needed)}
    views = None
    if alpha is not None:
        views = DaBatchViews(fwd.feats, fwd.graph_tokens(), sample.domain.label,
                             model.img_adversary, model.graph_adversary, alpha)
    half = model.spec.node_box_half
    return combined_loss(fwd.boxes(), fwd.cls_prob, _gt_boxes(g, half), matching, rel, sset,
                         cfg.weights, views, normalize_reslt=cfg.normalize_reslt)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainResult:
    model: ToyModel
    log: list[dict]

    def log_csv(self) -> str:
        buf = io.StringIO()
        cols = ["phase", "epoch", "step", "alpha", "loss"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.log:
            w.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k]) for k in cols})
        return buf.getvalue()


def _batches(order: Sequence[int], size: int) -> list[list[int]]:
    return [list(order[k:k + size]) for k in range(0, len(order), size)]


def _run_batch(model: ToyModel, opt: Adam, samples: Sequence[Sample], cfg: TrainConfig,
               seed_base: int, alpha: float | None) -> float:
    total = 0.0
    for k, s in enumerate(samples):
        loss = sample_loss(model, s, cfg, seed_base + k, alpha).total
        if not math.isfinite(loss.data):
            raise FloatingPointError(f"non-finite loss {loss.data} at sample seed {seed_base + k}")
        (loss * (1.0 / len(samples))).backward()
        total += loss.data
    opt.step()
    return total / len(samples)


def train(cfg: TrainConfig, source: Sequence[Sample], target: Sequence[Sample],
          model: ToyModel | None = None) -> TrainResult:
    """Optional joint pretraining on source and target, then target-only finetuning.

    Pretraining alternates source and target batches.  With ``cfg.da`` the
    adversarial terms are active there, alpha ramping with the schedule over
    the pretraining steps.  Finetuning never uses the adversaries.
    """
    if cfg.finetune_epochs and not target:
        raise ValueError("finetuning needs a non-empty target set")
    if cfg.pretrain_epochs and not (source and target):
        raise ValueError("joint pretraining needs non-empty source and target sets")
    model = model or ToyModel(cfg.model, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    step = 0

    if cfg.pretrain_epochs:
        opt = Adam(model.parameters(), lr=cfg.pretrain_lr)
        per_epoch = 2 * math.ceil(len(source) / cfg.batch_size)
        total_steps = cfg.pretrain_epochs * per_epoch
        for epoch in range(cfg.pretrain_epochs):
            src_b = _batches(rng.permutation(len(source)), cfg.batch_size)
            tgt_order = rng.permutation(len(target))
            tgt_cycle = [tgt_order[k % len(target)] for k in range(len(src_b) * cfg.batch_size)]
            tgt_b = _batches(tgt_cycle, cfg.batch_size)
            losses = []
            for sb, tb in zip(src_b, tgt_b):
                for batch, pool in ((sb, source), (tb, target)):
                    alpha = alpha_schedule(min(step / max(total_steps - 1, 1), 1.0),
                                           cfg.alpha_max, cfg.gamma) if cfg.da else None
                    losses.append(_run_batch(model, opt, [pool[i] for i in batch], cfg,
                                             cfg.seed * 1_000_003 + step * 997, alpha))
                    step += 1
            log.append({"phase": "pretrain", "epoch": epoch, "step": step,
                        "alpha": alpha if cfg.da else 0.0, "loss": float(np.mean(losses))})

    if cfg.finetune_epochs:
        opt = Adam(model.predictor_parameters(), lr=cfg.lr)
        total_steps = cfg.finetune_epochs * math.ceil(len(target) / cfg.batch_size)
        ft_step = 0
        for epoch in range(cfg.finetune_epochs):
            losses = []
            for batch in _batches(rng.permutation(len(target)), cfg.batch_size):
                if cfg.cosine_lr:
                    opt.lr = 0.5 * cfg.lr * (1 + math.cos(math.pi * ft_step / total_steps))
                ft_step += 1
                losses.append(_run_batch(model, opt, [target[i] for i in batch], cfg,
                                         cfg.seed * 1_000_003 + step * 997, None))
                step += 1
            log.append({"phase": "finetune", "epoch": epoch, "step": step, "alpha": 0.0,
                        "loss": float(np.mean(losses))})
    return TrainResult(model, log)


# ---------------------------------------------------------------- evaluation

def decode(out: dict, threshold: float = 0.5, rel_threshold: float | None = None) -> ScoredGraph:
    """Keep tokens with ``cls_prob > threshold`` and relations above ``rel_threshold``."""
    rel_threshold = threshold if rel_threshold is None else rel_threshold
    keep = np.flatnonzero(out["cls_prob"] > threshold)
    nodes = tuple(tuple(float(c) for c in np.clip(out["centers"][i], 0.0, 1.0)) for i in keep)
    edges, scores = [], []
    for a in range(len(keep)):
        for b in range(a + 1, len(keep)):
            p = float(out["rel_prob"][keep[a], keep[b]])
            if p > rel_threshold:
                edges.append((a, b))
                scores.append(p)
    g = SpatialGraph(2, nodes, tuple(edges))
    return ScoredGraph(g, [float(out["cls_prob"][i]) for i in keep], scores)


Predictor = Callable[[Sample], ScoredGraph]


def model_predictor(model: ToyModel, threshold: float = 0.5) -> Predictor:
    return lambda s: decode(model.infer(s.image.data), threshold)


def oracle_predictor(sample: Sample) -> ScoredGraph:
    """Returns the ground truth with full confidence (test hook)."""
    return ScoredGraph(sample.graph)


def evaluate(model: ToyModel | None, dataset: Sequence[Sample], metric_cfg: MetricConfig | None = None,
             predictor: Predictor | None = None, threshold: float = 0.5) -> MetricReport:
    if predictor is None:
        if model is None:
            raise ValueError("need a model or a predictor")
        predictor = model_predictor(model, threshold)
    preds = [predictor(s) for s in dataset]
    report, _ = evaluate_graphs(preds, [s.graph for s in dataset], metric_cfg)
    return report


# ---------------------------------------------------------------- data and ablations

@dataclass
class ToyData:
    source: list[Sample]
    target: list[Sample]
    test: list[Sample]


SOURCE_RENDER = RenderParams(line_width=3.0, brightness=1.0, background=0.05, noise=0.03,
                             node_radius=4.0)


def make_toy_data(seed: int = 0, n_source: int = 200, n_target: int = 200, n_test: int = 100,
                  size: int = 64) -> ToyData:
    """Road-like source rendered at twice the size and resized; vessel-like target."""
    src_cfg = SynthConfig(size=2 * size, render=SOURCE_RENDER)
    tgt_cfg = SynthConfig(size=size)
    source = [project2d(s, (size, size))
              for s in gen_synthetic(seed * 3 + 1, n_source, 2, Style.GRID, src_cfg, Domain.SOURCE)]
    target = gen_synthetic(seed * 3 + 2, n_target, 2, Style.TREE, tgt_cfg)
    test = gen_synthetic(seed * 3 + 3, n_test, 2, Style.TREE, tgt_cfg)
    return ToyData(source, target, test)


ABLATION_FIELDS = ("config", "seed") + MetricReport.FIELDS

PAPER_GRID = (
    {"name": "full", "sampler": "regularized", "da": True, "pretrain": True},
    {"name": "no_reslt", "sampler": "fixed_m", "da": True, "pretrain": True},
    {"name": "no_da", "sampler": "regularized", "da": False, "pretrain": True},
    {"name": "no_pretrain", "sampler": "regularized", "da": False, "pretrain": False},
    {"name": "baseline", "sampler": "fixed_m", "da": False, "pretrain": False},
)


def config_for(base: TrainConfig, entry: dict, pretrain_epochs: int, seed: int) -> TrainConfig:
    extra = {k: v for k, v in entry.items() if k not in ("name", "sampler", "da", "pretrain")}
    return replace(base, seed=seed, sampler=entry.get("sampler", base.sampler),
                   da=bool(entry.get("da", base.da)),
                   pretrain_epochs=pretrain_epochs if entry.get("pretrain", True) else 0,
                   **extra)


def ablate(grid: Sequence[dict], base: TrainConfig, seeds: Sequence[int], data_for_seed: Callable[[int], ToyData],
           metric_cfg: MetricConfig | None = None) -> list[dict]:
    """One row per configuration and seed with MetricReport fields as columns."""
    pretrain_epochs = base.pretrain_epochs
    rows = []
    for seed in seeds:
        data = data_for_seed(seed)
        for entry in grid:
            cfg = config_for(base, entry, pretrain_epochs, seed)
            res = train(cfg, data.source, data.target)
            report = evaluate(res.model, data.test, metric_cfg, threshold=cfg.decode_threshold)
            row = {"config": entry.get("name", "config"), "seed": seed}
            row.update(zip(MetricReport.FIELDS, report.row()))
            rows.append(row)
    return rows


def r_sweep_grid(values: Sequence[float] = R_SWEEP) -> list[dict]:
    return [{"name": f"r={r:g}", "sampler": "regularized", "da": True, "pretrain": True, "r": r}
            for r in values]


def rows_to_csv(rows: Sequence[dict], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_FIELDS)
    for row in rows:
        w.writerow(["" if row.get(k) is None else (f"{row[k]:.6f}" if isinstance(row[k], float) else row[k])
                    for k in ABLATION_FIELDS])
    return buf.getvalue()


def checkpoint_json(result: TrainResult, cfg: TrainConfig) -> str:
    return json.dumps({"config": cfg.to_json(), "model": result.model.state()},
                      indent=2, sort_keys=True) + "\n"
