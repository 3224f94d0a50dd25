"""Training loop: losses over batches, Adam with step decay, early stopping."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .network import AdamState, NetworkSpec, adam_step, backward, forward, init_xavier
from .parallel import ordered_map
from .pointcloud import chamfer_distance, loss_and_gradient

LOSSES = ("mse", "chamfer", "chamfer-emd")
# Above this many points the EMD term in training switches to the entropic solver.
TRAIN_EXACT_EMD_CAP = 128


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 100
    batch_size: int = 32
    patience: int = 50
    max_epochs: int = 500
    lam: float = 1.0
    loss: str = "chamfer-emd"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    # Optional number of optimizer steps; see ``budgeted``.
    step_budget: int | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise InvalidInputError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        for name in ("lr", "lr_decay_factor", "lr_decay_every", "batch_size", "patience",
                     "max_epochs", "beta1", "beta2", "eps_adam", "bn_momentum", "bn_eps"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.lam < 0:
            raise InvalidInputError("lam must be nonnegative")
        if self.step_budget is not None and self.step_budget <= 0:
            raise InvalidInputError("step_budget must be positive")

    def lr_at(self, epoch):
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def batches_per_epoch(n_train, batch_size):
    """Optimizer steps per epoch; a trailing batch of one row is skipped."""
    return n_train // batch_size + (1 if n_train % batch_size >= 2 else 0)


def budgeted(cfg, n_train):
    """Stretch or shrink the epoch schedule to spend ``cfg.step_budget`` steps.

    ``max_epochs`` becomes the epoch count that spends the budget on
    ``n_train`` records, and ``lr_decay_every`` and ``patience`` keep their
    proportion of it. Without a budget ``cfg`` is returned unchanged.
    """
    if cfg.step_budget is None:
        return cfg
    per_epoch = batches_per_epoch(n_train, cfg.batch_size)
    if per_epoch == 0:
        raise InvalidInputError("training split too small for one batch")
    epochs = -(-cfg.step_budget // per_epoch)
    scale = epochs / cfg.max_epochs
    return replace(cfg, max_epochs=epochs,
                   lr_decay_every=max(1, round(cfg.lr_decay_every * scale)),
                   patience=max(1, round(cfg.patience * scale)), step_budget=None)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stop_epoch: int = -1
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    # Effective configuration after any step-budget rescaling.
    config: dict = field(default_factory=dict)
    epoch_seconds: list = field(default_factory=list, compare=False)

    def to_dict(self):
        return asdict(self)


def record_loss(pred, truth, loss, lam):
    """Loss value and (M, 3) gradient for one predicted cloud."""
    if loss == "mse":
        diff = pred - truth
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    weight = lam if loss == "chamfer-emd" else 0.0
    return loss_and_gradient(pred, truth, weight, cap=TRAIN_EXACT_EMD_CAP)


def batch_loss(pred, truth, loss, lam, with_grad=True):
    """Mean loss over the batch and its gradient w.r.t. ``pred``.

    Per-record terms are computed independently (possibly on worker threads)
    and summed in record order.
    """
    results = ordered_map(lambda i: record_loss(pred[i], truth[i], loss, lam), range(len(pred)))
    n = len(pred)
    value = sum(r[0] for r in results) / n
    if not with_grad:
        return value
    return value, np.stack([r[1] for r in results]) / n


def model_inputs(records, input_dim, tendon_count):
    """Stacked network inputs: full hysteresis configuration or current config only."""
    if input_dim == 2 * tendon_count:
        return np.stack([r.eta.as_vector() for r in records])
    if input_dim == tendon_count:
        return np.stack([r.eta.q_current for r in records])
    raise InvalidInputError(f"input width {input_dim} fits neither {2 * tendon_count} nor {tendon_count}")


def predict(w, inputs):
    return forward(w, inputs, training=False)


def evaluate_loss(w, inputs, truths, loss, lam):
    return batch_loss(predict(w, inputs), truths, loss, lam, with_grad=False)


def _gather(manifests, record_filter):
    out = {"train": ([], []), "val": ([], [])}
    spec_m = None
    for man in manifests:
        for split in ("train", "val"):
            recs = [r for r in man.split(split) if record_filter is None or record_filter(man, r)]
            out[split][0].extend(recs)
            out[split][1].append(man.clouds(recs))
        if spec_m is None:
            spec_m = man.M
        elif man.M != spec_m:
            raise InvalidInputError("manifests disagree on the point count M")
    return {k: (v[0], np.concatenate(v[1])) for k, v in out.items()}, spec_m


def train(spec, manifest, cfg, record_filter=None, log=None):
    """Train a decoder; returns the best-validation weights and a report.

    ``manifest`` may be a single dataset or a list whose train and val splits
    are pooled. ``record_filter(manifest, record)`` can drop records.
    """
    manifests = manifest if isinstance(manifest, (list, tuple)) else [manifest]
    for man in manifests:
        if man.M != spec.M:
            raise InvalidInputError(f"dataset has M={man.M} points per cloud but the network outputs M={spec.M}")
    tendon_count = manifests[0].robot.tendon_count
    data, _ = _gather(manifests, record_filter)
    train_recs, train_y = data["train"]
    val_recs, val_y = data["val"]
    if not train_recs or not val_recs:
        raise InvalidInputError("training needs nonempty train and val splits")
    train_x = model_inputs(train_recs, spec.input_dim, tendon_count)
    val_x = model_inputs(val_recs, spec.input_dim, tendon_count)
    cfg = budgeted(cfg, len(train_recs))

    w = init_xavier(spec, cfg.seed)
    w.bn_momentum, w.bn_eps = cfg.bn_momentum, cfg.bn_eps
    state = AdamState()
    rng = np.random.default_rng(cfg.seed + 1)
    report = TrainReport(config=cfg.to_dict())
    best = None
    stale = 0
    n = len(train_x)
    for epoch in range(cfg.max_epochs):
        start = time.perf_counter()
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if len(idx) < 2:
                continue
            pred, cache = forward(w, train_x[idx], training=True, return_cache=True)
            value, grad = batch_loss(pred, train_y[idx], cfg.loss, cfg.lam)
            adam_step(w, backward(w, cache, grad), state, lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
            losses.append(value)
        val = evaluate_loss(w, val_x, val_y, cfg.loss, cfg.lam)
        report.train_loss.append(float(np.mean(losses)))
        report.val_loss.append(float(val))
        report.lr.append(lr)
        report.epoch_seconds.append(time.perf_counter() - start)
        if val < report.best_val_loss:
            report.best_val_loss = float(val)
            report.best_epoch = epoch
            best = w.copy()
            stale = 0
        else:
            stale += 1
        if log is not None:
            log(epoch, report)
        if stale >= cfg.patience:
            break
    report.stop_epoch = epoch
    return best.eval(), report


def is_home_prior_or_augmentation(manifest, record):
    return manifest.recipe != "standard" or not np.any(record.eta.q_prior)


def train_no_hysteresis(spec, manifest, cfg, log=None):
    """Same pipeline fed only the current configuration.

    From standard-recipe datasets only home-prior records are used; every
    record of other datasets (e.g. trajectory augmentation) is kept.
    """
    manifests = manifest if isinstance(manifest, (list, tuple)) else [manifest]
    n_tendons = manifests[0].robot.tendon_count
    if spec.input_dim != n_tendons:
        spec = replace(spec, input_dim=n_tendons)
    return train(spec, manifests, cfg, record_filter=is_home_prior_or_augmentation, log=log)


def chamfer_per_record(w, manifest, records=None):
    """Exact Chamfer distance per test record."""
    records = manifest.split("test") if records is None else records
    x = model_inputs(records, w.spec.input_dim, manifest.robot.tendon_count)
    pred = predict(w, x)
    truths = manifest.clouds(records)
    return np.array([chamfer_distance(p, t) for p, t in zip(pred, truths)])
