"""Two-layer projection head, contrastive loss, exact gradients, training.

The head maps frozen encoder embeddings into a shared 768-d latent space:
z = W2 . dropout(relu(W1 x + b1)) + b2. The per-entry loss contrasts the
anchor against one positive per modality and that modality's negative pool
with an InfoNCE softmax at temperature tau, averaged over the M modalities:

    L = -(1/M) sum_m log[ exp(c(a,p_m)/tau)
                          / (exp(c(a,p_m)/tau) + sum_n exp(c(a,n_mn)/tau)) ]

Gradients are derived by hand and validated against central finite
differences in the test suite. Dropout uses inverted scaling; the mask is
fixed per forward pass so the analytic gradient matches exactly.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .embedstore import EmbeddingRecord, EmbeddingStore
from .errors import ConfigError, NumericalError, ValidationError
from .seeding import derive_seed
from .triplets import TripletEntry, TripletSet

OUT_DIM = 768
DEFAULT_HIDDEN = 1024

# full experiment grid: 2 * 3 * 3 * 3 * 3 = 162 configurations
GRID_AXES = {
    "batch_size": (16, 32),
    "learning_rate": (1e-3, 1e-4, 1e-5),
    "k_soft": (10, 30, 49),
    "tau": (0.08, 0.09, 0.1),
    "dropout_rate": (0.1, 0.3, 0.5),
}


@dataclass
class HeadParams:
    w1: np.ndarray      # [hidden, in_dim]
    b1: np.ndarray      # [hidden]
    w2: np.ndarray      # [out, hidden]
    b2: np.ndarray      # [out]
    tau: float
    dropout_rate: float

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "HeadParams":
        return HeadParams(
            w1=self.w1.copy(), b1=self.b1.copy(),
            w2=self.w2.copy(), b2=self.b2.copy(),
            tau=self.tau, dropout_rate=self.dropout_rate,
        )


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-5
    k_soft: int = 49
    tau: float = 0.1
    dropout_rate: float = 0.1
    hidden: int = DEFAULT_HIDDEN
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    test_accuracies: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopping_reason: str = ""


def init_params(in_dim: int, hidden: int = DEFAULT_HIDDEN, tau: float = 0.1,
                dropout_rate: float = 0.1, seed: int = 0) -> HeadParams:
    """He-style uniform init (bound sqrt(6/fan_in)), zero biases, seeded."""
    rng = np.random.default_rng(seed)
    bound1 = math.sqrt(6.0 / in_dim)
    bound2 = math.sqrt(6.0 / hidden)
    return HeadParams(
        w1=rng.uniform(-bound1, bound1, size=(hidden, in_dim)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-bound2, bound2, size=(OUT_DIM, hidden)),
        b2=np.zeros(OUT_DIM),
        tau=tau,
        dropout_rate=dropout_rate,
    )


def forward_batch(params: HeadParams, x: np.ndarray,
                  rng: Optional[np.random.Generator] = None):
    """Project a [n, in_dim] batch; rng=None means eval mode (no dropout).

    Returns (z, cache) where cache holds the intermediates needed for the
    backward pass, including the dropout mask drawn on this call.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValidationError(
            f"expected input shape [n, {params.in_dim}], got {x.shape}"
        )
    h = x @ params.w1.T + params.b1
    r = np.maximum(h, 0.0)
    p = params.dropout_rate
    if rng is not None and p > 0.0:
        mask = (rng.random(r.shape) >= p).astype(np.float64) / (1.0 - p)
    else:
        mask = None
    d = r * mask if mask is not None else r
    z = d @ params.w2.T + params.b2
    cache = {"x": x, "h": h, "d": d, "mask": mask}
    return z, cache


def forward(params: HeadParams, x: np.ndarray,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Project a single vector."""
    z, _ = forward_batch(params, np.asarray(x, dtype=np.float64)[None, :], rng)
    return z[0]


def backward_batch(params: HeadParams, cache: dict, g_z: np.ndarray) -> Gradients:
    """Backprop dL/dz through the head; returns parameter gradients."""
    d = cache["d"]
    g_b2 = g_z.sum(axis=0)
    g_w2 = g_z.T @ d
    g_d = g_z @ params.w2
    g_r = g_d * cache["mask"] if cache["mask"] is not None else g_d
    g_h = g_r * (cache["h"] > 0.0)
    g_w1 = g_h.T @ cache["x"]
    g_b1 = g_h.sum(axis=0)
    return Gradients(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2)


def _entry_inputs(entry: TripletEntry, modalities: Sequence[str]) -> np.ndarray:
    """Stack anchor, positives, and negatives into one input matrix.

    Row 0 is the anchor; rows 1..M the positives (modality order); the rest
    are negatives, grouped per modality.
    """
    rows = [entry.anchor]
    rows.extend(entry.positives[m] for m in modalities)
    for m in modalities:
        rows.extend(entry.negatives[m])
    return np.stack(rows).astype(np.float64)


def _cos_rows(za: np.ndarray, z: np.ndarray):
    """Cosines of za against each row of z, plus terms reused in backward."""
    na = math.sqrt(float(za @ za))
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    if na == 0.0 or np.any(norms == 0.0):
        raise NumericalError("zero-norm projected vector in loss computation")
    dots = z @ za
    cosines = dots / (na * norms)
    return cosines, na, norms


def _entry_loss_grads(params: HeadParams, entry: TripletEntry,
                      modalities: Sequence[str],
                      rng: Optional[np.random.Generator],
                      want_grads: bool):
    """Loss (and optionally dL/dz rows and the forward cache) for one entry."""
    m_count = len(modalities)
    n_counts = [len(entry.negatives[m]) for m in modalities]
    x = _entry_inputs(entry, modalities)
    z, cache = forward_batch(params, x, rng)

    za = z[0]
    cosines, na, norms = _cos_rows(za, z[1:])
    tau = params.tau

    loss = 0.0
    g_cos = np.zeros_like(cosines) if want_grads else None
    neg_offset = m_count
    for mi in range(m_count):
        n = n_counts[mi]
        idx = [mi] + list(range(neg_offset, neg_offset + n))
        logits = cosines[idx] / tau
        mx = logits.max()
        lse = mx + math.log(np.exp(logits - mx).sum())
        loss += -(logits[0] - lse)
        if want_grads:
            soft = np.exp(logits - lse)
            g = soft / tau
            g[0] -= 1.0 / tau
            g /= m_count
            for j, row in enumerate(idx):
                g_cos[row] += g[j]
        neg_offset += n
    loss /= m_count

    if not want_grads:
        return loss, None, None

    # d cos(a, y) / dy = a/(|a||y|) - cos * y/|y|^2 ; symmetric for a
    g_z = np.zeros_like(z)
    zb = z[1:]
    coeff_a = (g_cos / (na * norms))[:, None]
    g_z[1:] = coeff_a * za - ((g_cos * cosines / norms**2)[:, None]) * zb
    g_z[0] = (coeff_a * zb).sum(axis=0) - (g_cos * cosines).sum() / na**2 * za
    return loss, g_z, cache


def infonce_loss(params: HeadParams, entry: TripletEntry,
                 modalities: Optional[Sequence[str]] = None,
                 rng: Optional[np.random.Generator] = None) -> float:
    """Per-entry contrastive loss on projected vectors (eval mode by default)."""
    if params.tau <= 0:
        raise ConfigError(f"tau must be > 0, got {params.tau}")
    mods = modalities if modalities is not None else sorted(entry.positives)
    loss, _, _ = _entry_loss_grads(params, entry, mods, rng, want_grads=False)
    return loss


def loss_and_grads(params: HeadParams, batch: Sequence[TripletEntry],
                   modalities: Optional[Sequence[str]] = None,
                   rng: Optional[np.random.Generator] = None):
    """Batch-mean loss and its exact parameter gradients.

    Dropout masks (when rng is given) are drawn once per entry forward and
    reused in the backward pass.
    """
    if not batch:
        raise ValidationError("empty batch")
    if params.tau <= 0:
        raise ConfigError(f"tau must be > 0, got {params.tau}")
    total = Gradients(
        w1=np.zeros_like(params.w1), b1=np.zeros_like(params.b1),
        w2=np.zeros_like(params.w2), b2=np.zeros_like(params.b2),
    )
    loss_sum = 0.0
    scale = 1.0 / len(batch)
    for entry in batch:
        mods = modalities if modalities is not None else sorted(entry.positives)
        loss, g_z, cache = _entry_loss_grads(params, entry, mods, rng, want_grads=True)
        loss_sum += loss
        g = backward_batch(params, cache, g_z * scale)
        total.w1 += g.w1
        total.b1 += g.b1
        total.w2 += g.w2
        total.b2 += g.b2
    return loss_sum * scale, total


def mean_loss(params: HeadParams, entries: Sequence[TripletEntry],
              modalities: Optional[Sequence[str]] = None) -> float:
    """Eval-mode mean loss over a set of entries."""
    return sum(infonce_loss(params, e, modalities) for e in entries) / len(entries)


def top1_accuracy(params: HeadParams, entries: Sequence[TripletEntry],
                  modality: str = "image") -> float:
    """Fraction of entries whose positive outranks every negative
    (projected cosine, single modality)."""
    correct = 0
    for e in entries:
        mod = modality if modality in e.positives else sorted(e.positives)[0]
        x = np.stack([e.anchor, e.positives[mod]] + list(e.negatives[mod]))
        z, _ = forward_batch(params, x.astype(np.float64), None)
        cosines, _, _ = _cos_rows(z[0], z[1:])
        if cosines[0] > cosines[1:].max(initial=-np.inf):
            correct += 1
    return correct / len(entries)


class AdamState:
    """Adam with the standard beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params: HeadParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(getattr(params, k)) for k in ("w1", "b1", "w2", "b2")}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in ("w1", "b1", "w2", "b2")}

    def step(self, params: HeadParams, grads: Gradients) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in ("w1", "b1", "w2", "b2"):
            g = getattr(grads, k)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            getattr(params, k)[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(train_set: TripletSet, val_set: TripletSet, config: TrainConfig,
          test_set: Optional[TripletSet] = None,
          params: Optional[HeadParams] = None) -> tuple[HeadParams, TrainReport]:
    """Adam training with validation-loss early stopping.

    Returns the parameters from the best validation epoch and a per-epoch
    report. Batch order and dropout draw from seeds derived off config.seed.
    """
    config.validate()
    if not train_set.entries or not val_set.entries:
        raise ValidationError("train and validation sets must be non-empty")
    mods = train_set.modalities
    in_dim = train_set.entries[0].anchor.shape[0]
    if params is None:
        params = init_params(
            in_dim, hidden=config.hidden, tau=config.tau,
            dropout_rate=config.dropout_rate,
            seed=derive_seed(config.seed, "init"),
        )
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(config.seed, "dropout"))
    adam = AdamState(params, lr=config.learning_rate)

    report = TrainReport()
    best_val = math.inf
    best_params = params.copy()
    entries = list(train_set.entries)

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(entries))
        epoch_loss = 0.0
        for start in range(0, len(entries), config.batch_size):
            batch = [entries[i] for i in order[start:start + config.batch_size]]
            loss, grads = loss_and_grads(params, batch, mods, dropout_rng)
            if not math.isfinite(loss):
                raise NumericalError(f"training diverged (loss={loss}) at epoch {epoch}")
            epoch_loss += loss * len(batch)
            adam.step(params, grads)
        report.train_losses.append(epoch_loss / len(entries))
        val_loss = mean_loss(params, val_set.entries, mods)
        report.val_losses.append(val_loss)
        if test_set is not None:
            report.test_accuracies.append(top1_accuracy(params, test_set.entries))
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            report.best_epoch = epoch
        elif epoch - report.best_epoch > config.patience:
            report.stopping_reason = (
                f"early stop: no validation improvement for {config.patience + 1} epochs"
            )
            break
    if not report.stopping_reason:
        report.stopping_reason = f"reached max_epochs={config.max_epochs}"
    return best_params, report


def enumerate_grid(axes: Optional[dict] = None, base: Optional[TrainConfig] = None
                   ) -> list[TrainConfig]:
    """Cartesian product of hyperparameter axes as TrainConfigs."""
    axes = dict(GRID_AXES if axes is None else axes)
    base = base or TrainConfig()
    names = list(axes)
    configs = []
    for combo in itertools.product(*(axes[n] for n in names)):
        configs.append(replace(base, **dict(zip(names, combo))))
    return configs


def grid_search(build_sets: Callable[[int], tuple[TripletSet, TripletSet, Optional[TripletSet]]],
                axes: Optional[dict] = None, base: Optional[TrainConfig] = None
                ) -> list[dict]:
    """Train one model per grid point, ranked by best validation loss.

    build_sets(k_soft) supplies (train, val, test) triplet sets, since the
    soft-negative count changes the training data itself.
    """
    results = []
    for config in enumerate_grid(axes, base):
        train_set, val_set, test_set = build_sets(config.k_soft)
        params, report = train(train_set, val_set, config, test_set)
        results.append({
            "config": config,
            "best_val_loss": report.val_losses[report.best_epoch],
            "best_epoch": report.best_epoch,
            "test_accuracy": (
                report.test_accuracies[report.best_epoch]
                if report.test_accuracies else None
            ),
            "report": report,
        })
    results.sort(key=lambda r: r["best_val_loss"])
    return results


def sensitivity_sweep(axis: str, values: Sequence,
                      build_sets: Callable[[int], tuple],
                      optimal: TrainConfig) -> dict:
    """Vary one hyperparameter with the others held at their optimal values;
    returns the per-epoch test-accuracy curve for each value."""
    curves = {}
    for v in values:
        config = replace(optimal, **{axis: v})
        train_set, val_set, test_set = build_sets(config.k_soft)
        _, report = train(train_set, val_set, config, test_set)
        curves[v] = {
            "test_accuracy": list(report.test_accuracies),
            "val_loss": list(report.val_losses),
            "train_loss": list(report.train_losses),
        }
    return curves


def project_store(params: HeadParams, store: EmbeddingStore) -> EmbeddingStore:
    """Project every record through the head (eval mode); output dim 768."""
    if store.dim != params.in_dim:
        raise ValidationError(
            f"store dim {store.dim} does not match head input dim {params.in_dim}"
        )
    out = EmbeddingStore(
        dim=params.out_dim,
        encoder=store.encoder,
        meta={**store.meta, "projected": True, "dim": params.out_dim},
    )
    for key in sorted(store.records):
        rec = store.records[key]
        z = forward(params, rec.vector)
        z.setflags(write=False)
        out.add(EmbeddingRecord(key=rec.key, role=rec.role, vector=z,
                                truncated=rec.truncated))
    return out


def save_checkpoint(params: HeadParams, path: str | Path) -> None:
    """JSON checkpoint: header plus row-major weight arrays, exact decimals."""
    doc = {
        "in_dim": params.in_dim,
        "hidden": params.hidden,
        "out_dim": params.out_dim,
        "tau": params.tau,
        "dropout_rate": params.dropout_rate,
        "w1": [[float(v) for v in row] for row in params.w1],
        "b1": [float(v) for v in params.b1],
        "w2": [[float(v) for v in row] for row in params.w2],
        "b2": [float(v) for v in params.b2],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> HeadParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    params = HeadParams(
        w1=np.asarray(doc["w1"], dtype=np.float64),
        b1=np.asarray(doc["b1"], dtype=np.float64),
        w2=np.asarray(doc["w2"], dtype=np.float64),
        b2=np.asarray(doc["b2"], dtype=np.float64),
        tau=doc["tau"],
        dropout_rate=doc["dropout_rate"],
    )
    if params.hidden != doc["hidden"] or params.out_dim != doc["out_dim"]:
        raise ValidationError(f"checkpoint {path} header does not match arrays")
    return params


def export_curves_csv(report: TrainReport, path: str | Path) -> None:
    """Per-epoch loss/accuracy curves for external plotting."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "test_accuracy"])
        for i in range(len(report.train_losses)):
            acc = report.test_accuracies[i] if i < len(report.test_accuracies) else ""
            writer.writerow([i, report.train_losses[i], report.val_losses[i], acc])
