"""Training and evaluation loops for the four tasks.

Every run is seeded: the model is initialised from ``cfg.seed`` and the
shuffling, augmentation, dropout and pair-sampling streams are spawned from
it, so a fixed seed on one thread reproduces the trajectory bit for bit.
Batches hold one mesh; ``cfg.accumulate`` averages gradients over several
meshes before each optimizer step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import DataError
from ..mesh import farthest_point_sample, random_rotation
from ..optim import Adam, cross_entropy_smoothed, twin_loss
from . import metrics
from .checkpoint import Checkpoint
from .config import NetConfig
from .data import Pair, Sample, load_dataset, load_template
from .models import FCNet, build_model

log = logging.getLogger(__name__)

MATCH_RADIUS = 0.05
ERROR_THRESHOLDS = np.round(np.linspace(0.0, 0.2, 21), 3)


@dataclass
class Streams:
    shuffle: np.random.Generator
    augment: np.random.Generator
    dropout: np.random.Generator
    pairs: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence([seed, 1]).spawn(4)))

    def state(self) -> dict:
        return {k: getattr(self, k).bit_generator.state for k in ("shuffle", "augment", "dropout", "pairs")}

    def restore(self, state: dict) -> None:
        for k, v in state.items():
            getattr(self, k).bit_generator.state = v


@dataclass
class TrainResult:
    model: FCNet
    optimizer: Adam
    streams: Streams
    history: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def checkpoint_meta(self) -> dict:
        return {"rng": self.streams.state(), "history": self.history, "metrics": self.metrics, **self.extra}


def _split(items, name):
    return [s for s in items if s.split == name]


def _rotation(cfg, streams):
    return random_rotation(streams.augment) if cfg.rotate else None


def _fit(cfg: NetConfig, model: FCNet, opt: Adam, streams: Streams, train_items, loss_of, evaluate, start_epoch=0):
    """Shared epoch loop; ``loss_of(item)`` returns ``(loss, stats dict)``."""
    params = model.parameters()
    history = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        order = streams.shuffle.permutation(len(train_items))
        pending, acc, losses, stats = 0, None, [], {}
        for idx in order:
            with ad.Tape() as tape:
                loss, st = loss_of(train_items[idx])
            grads = ad.backward(tape, loss, list(params.values()))
            losses.append(float(loss.value))
            for k, v in st.items():
                stats.setdefault(k, []).append(v)
            acc = grads if acc is None else {p: acc[p] + grads[p] for p in acc}
            pending += 1
            if pending == cfg.accumulate:
                opt.step({p: g / pending for p, g in acc.items()})
                pending, acc = 0, None
        if pending:
            opt.step({p: g / pending for p, g in acc.items()})
        row = {"epoch": epoch + 1, "loss": float(np.mean(losses)) if losses else float("nan")}
        for k, v in stats.items():
            row[k] = float(np.sum([a for a, _ in v]) / max(1, np.sum([b for _, b in v])))
        row.update(evaluate())
        history.append(row)
        log.info(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return history


def _setup(cfg, in_channels, n_out, resume: Checkpoint | None):
    if resume is not None:
        model, opt = resume.model, resume.optimizer
        if opt is None:
            opt = Adam(model.parameters(), lr=cfg.lr)
        streams = Streams.from_seed(cfg.seed)
        if "rng" in resume.meta:
            streams.restore(resume.meta["rng"])
        start = len(resume.meta.get("history", []))
        return model, opt, streams, start, list(resume.meta.get("history", []))
    model = build_model(cfg, in_channels, n_out)
    return model, Adam(model.parameters(), lr=cfg.lr), Streams.from_seed(cfg.seed), 0, []


# ---------------------------------------------------------------------------
# Classification

def predict_class(model: FCNet, sample: Sample, rotation=None) -> np.ndarray:
    return model(sample.features(model.cfg.input, rotation), sample.cache).value


def train_classification(cfg: NetConfig, data_dir, resume=None, expand_isolated=False) -> TrainResult:
    manifest, items = load_dataset(data_dir, cfg.epsilon, expand_isolated)
    n_classes = len(manifest.get("classes", [])) or 1 + max(s.label for s in items)
    train, test = _split(items, "train"), _split(items, "test")
    model, opt, streams, start, history = _setup(cfg, 3, n_classes, resume)

    def loss_of(s):
        logits = model(s.features(cfg.input, _rotation(cfg, streams)), s.cache)
        hit = int(np.argmax(logits.value) == s.label)
        return cross_entropy_smoothed(logits, s.label, cfg.smoothing), {"train_acc": (hit, 1)}

    def evaluate():
        return {"test_acc": evaluate_classification(model, test)["accuracy"]} if test else {}

    history += _fit(cfg, model, opt, streams, train, loss_of, evaluate, start)
    final = {"train": evaluate_classification(model, train), "test": evaluate_classification(model, test)}
    return TrainResult(model, opt, streams, history, final)


def evaluate_classification(model: FCNet, samples) -> dict:
    if not samples:
        return {"accuracy": float("nan"), "n": 0}
    logits = [predict_class(model, s) for s in samples]
    pred = [int(np.argmax(z)) for z in logits]
    return {"accuracy": metrics.accuracy(pred, [s.label for s in samples]), "n": len(samples),
            "predictions": pred}


# ---------------------------------------------------------------------------
# Segmentation

def train_segmentation(cfg: NetConfig, data_dir, resume=None, expand_isolated=False) -> TrainResult:
    manifest, items = load_dataset(data_dir, cfg.epsilon, expand_isolated)
    n_classes = len(manifest.get("classes", [])) or 1 + max(int(s.labels.max()) for s in items)
    train, test = _split(items, "train"), _split(items, "test")
    model, opt, streams, start, history = _setup(cfg, 3, n_classes, resume)

    def loss_of(s):
        logits = model(s.features(cfg.input, _rotation(cfg, streams)), s.cache)
        hits = int(np.sum(np.argmax(logits.value, axis=1) == s.labels))
        return cross_entropy_smoothed(logits, s.labels, cfg.smoothing), {"train_acc": (hits, len(s.labels))}

    def evaluate():
        return {"test_acc": evaluate_segmentation(model, test)["accuracy"]} if test else {}

    history += _fit(cfg, model, opt, streams, train, loss_of, evaluate, start)
    final = {"train": evaluate_segmentation(model, train), "test": evaluate_segmentation(model, test)}
    return TrainResult(model, opt, streams, history, final)


def evaluate_segmentation(model: FCNet, samples) -> dict:
    """Vertex accuracy pooled over all vertices of ``samples``."""
    hits = total = 0
    for s in samples:
        pred = np.argmax(model(s.features(model.cfg.input), s.cache).value, axis=1)
        hits += int(np.sum(pred == s.labels))
        total += len(s.labels)
    return {"accuracy": hits / total if total else float("nan"), "vertices": total}


# ---------------------------------------------------------------------------
# Correspondence to a template

def train_correspondence(cfg: NetConfig, data_dir, resume=None, expand_isolated=False) -> TrainResult:
    manifest, items = load_dataset(data_dir, cfg.epsilon, expand_isolated)
    template = load_template(data_dir, manifest)
    for s in items:
        if s.corr is None or s.corr.max() >= template.n_vertices:
            raise DataError(f"{s.name}: correspondences do not index the {template.n_vertices}-vertex template")
    train, test = _split(items, "train"), _split(items, "test")
    model, opt, streams, start, history = _setup(cfg, 3, template.n_vertices, resume)

    def loss_of(s):
        logits = model(s.features(cfg.input, _rotation(cfg, streams)), s.cache, training=True, rng=streams.dropout)
        hits = int(np.sum(np.argmax(logits.value, axis=1) == s.corr))
        return cross_entropy_smoothed(logits, s.corr, cfg.smoothing), {"train_acc": (hits, len(s.corr))}

    def evaluate():
        return {"test_acc": evaluate_correspondence(model, test, template)["accuracy"]} if test else {}

    history += _fit(cfg, model, opt, streams, train, loss_of, evaluate, start)
    final = {"train": evaluate_correspondence(model, train, template),
             "test": evaluate_correspondence(model, test, template)}
    return TrainResult(model, opt, streams, history, final)


def evaluate_correspondence(model: FCNet, samples, template) -> dict:
    preds, truth = [], []
    for s in samples:
        preds.append(np.argmax(model(s.features(model.cfg.input), s.cache).value, axis=1))
        truth.append(s.corr)
    if not preds:
        return {"accuracy": float("nan"), "thresholds": [], "curve": []}
    pred, true = np.concatenate(preds), np.concatenate(truth)
    curve = metrics.geodesic_error_curve(template, pred, true, ERROR_THRESHOLDS)
    return {"accuracy": metrics.accuracy(pred, true), "thresholds": ERROR_THRESHOLDS.tolist(),
            "curve": curve.tolist()}


# ---------------------------------------------------------------------------
# Feature matching with a twin network

@dataclass
class MatchData:
    scene_samples: np.ndarray
    model_samples: np.ndarray
    matched: np.ndarray  # index into model_samples for every scene sample
    mask: np.ndarray     # (S, K) valid matches within MATCH_RADIUS


def match_data(pair: Pair, k: int, seed: int) -> MatchData:
    """Farthest-point samples on both meshes, correspondences to the
    geodesically nearest model sample and match sets."""
    k_s = min(k, pair.scene.mesh.n_vertices)
    k_m = min(k, pair.model.mesh.n_vertices)
    ss = np.array(farthest_point_sample(pair.scene.mesh, k_s, seed))
    ms = np.array(farthest_point_sample(pair.model.mesh, k_m, seed))
    D = metrics.geodesic_from(pair.model.mesh, ms)  # (K, V_model)
    truth = pair.corr[ss]
    matched = np.argmin(D[:, truth], axis=0)
    return MatchData(ss, ms, matched, metrics.match_sets(D, truth, MATCH_RADIUS))


def sample_pairs(md: MatchData, n: int, rng) -> list:
    """``n`` correspondences and ``n`` non-correspondences as
    ``(scene vertex, model vertex, is_correspondence)``."""
    S, K = len(md.scene_samples), len(md.model_samples)
    pos = rng.integers(0, S, n)
    neg_s = rng.integers(0, S, n)
    neg_m = rng.integers(0, K - 1, n)
    neg_m = neg_m + (neg_m >= md.matched[neg_s])  # skip the true match
    out = [(md.scene_samples[i], md.model_samples[md.matched[i]], True) for i in pos]
    out += [(md.scene_samples[i], md.model_samples[j], False) for i, j in zip(neg_s, neg_m)]
    return out


def descriptors(model: FCNet, sample: Sample, rotation=None):
    return model(sample.features(model.cfg.input, rotation), sample.cache)


def train_matching(cfg: NetConfig, data_dir, resume=None, expand_isolated=False) -> TrainResult:
    _, pairs = load_dataset(data_dir, cfg.epsilon, expand_isolated)
    if not pairs or not all(isinstance(p, Pair) for p in pairs):
        raise DataError("matching needs scene/model pairs with correspondence files")
    mdata = {p.name: match_data(p, cfg.samples, cfg.seed) for p in pairs}
    train, test = _split(pairs, "train"), _split(pairs, "test")
    model, opt, streams, start, history = _setup(cfg, 3, cfg.descriptor_dim, resume)

    def loss_of(pair):
        FS = descriptors(model, pair.scene, _rotation(cfg, streams))
        FM = descriptors(model, pair.model, _rotation(cfg, streams))
        batch = sample_pairs(mdata[pair.name], cfg.pairs, streams.pairs)
        return twin_loss(FS, FM, batch, streams.pairs), {}

    def evaluate():
        return {"test_mp50": evaluate_matching(model, test, mdata, cfg.seed)["mean_precision"]} if test else {}

    history += _fit(cfg, model, opt, streams, train, loss_of, evaluate, start)
    final = {"train": evaluate_matching(model, train, mdata, cfg.seed),
             "test": evaluate_matching(model, test, mdata, cfg.seed, baseline=True, curves=True)}
    return TrainResult(model, opt, streams, history, final)


def evaluate_matching(model: FCNet, pairs, mdata, seed: int, baseline: bool = False, curves: bool = False) -> dict:
    """Mean precision at recall 0.5, averaged over pairs; optionally the
    random-ranking baseline on the same match sets and a mean PR curve."""
    vals, base, rows = [], [], []
    levels = None
    for pair in pairs:
        md = mdata[pair.name]
        FS = descriptors(model, pair.scene).value[md.scene_samples]
        FM = descriptors(model, pair.model).value[md.model_samples]
        dist = ((FS[:, None, :] - FM[None, :, :]) ** 2).sum(axis=2)
        vals.append(metrics.mean_precision_at_recall(dist, md.mask))
        if baseline:
            base.append(metrics.random_baseline(md.mask, seed=seed))
        if curves:
            levels, prec = metrics.mean_pr_curve(dist, md.mask)
            rows.append(prec)
    out = {"mean_precision": float(np.mean(vals)) if vals else float("nan"), "pairs": len(vals)}
    if baseline:
        out["baseline"] = float(np.mean(base)) if base else float("nan")
    if curves and rows:
        out["recall_levels"] = levels.tolist()
        out["precision_curve"] = np.mean(rows, axis=0).tolist()
    return out


TRAINERS = {
    "classification": train_classification,
    "segmentation": train_segmentation,
    "correspondence": train_correspondence,
    "matching": train_matching,
}


def train(cfg: NetConfig, data_dir, resume=None, expand_isolated=False) -> TrainResult:
    return TRAINERS[cfg.task](cfg, data_dir, resume, expand_isolated)


def evaluate(model: FCNet, data_dir, expand_isolated=False) -> dict:
    """Metrics of a trained model on every split of ``data_dir``."""
    cfg = model.cfg
    manifest, items = load_dataset(data_dir, cfg.epsilon, expand_isolated)
    splits = sorted({s.split for s in items})
    out = {}
    for name in splits:
        part = _split(items, name)
        if cfg.task == "classification":
            out[name] = evaluate_classification(model, part)
        elif cfg.task == "segmentation":
            out[name] = evaluate_segmentation(model, part)
        elif cfg.task == "correspondence":
            out[name] = evaluate_correspondence(model, part, load_template(data_dir, manifest))
        else:
            md = {p.name: match_data(p, cfg.samples, cfg.seed) for p in part}
            out[name] = evaluate_matching(model, part, md, cfg.seed, baseline=True, curves=True)
    return out
