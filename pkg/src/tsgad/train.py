"""Joint training, anomaly scoring, thresholding, and checkpointing.

The training loss per batch is the mean per-window fused alignment distance
minus the mean flow log-likelihood; minimizing it tightens the alignment of
normal windows against their batch reference while raising their density.
Anomaly scores add the (unscaled) alignment distance to the mean negative
log-likelihood per channel, and the decision threshold is the Tukey fence
over training-split scores.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .align import batch_alignment
from .autodiff import Tensor
from .dataio import normalize_with, window_table
from .encoder import encode_batch, init_encoder
from .errors import CheckpointError, ConfigError, DivergenceError, MetricUndefinedError
from .flow import batch_log_likelihood, init_flow, log_prob
from .graph import AttentionParams, attention_adjacency, init_attention

CHECKPOINT_FORMAT = "tsgad-checkpoint"
CHECKPOINT_VERSION = 1

ABLATIONS = {
    "full": ("wd", "gwd"),
    "no_wd": ("gwd",),
    "no_gwd": ("wd",),
    "no_ga": (),
}

# paper-scale experiment defaults; desk-scale values are the dataclass defaults
PAPER_SCALE = {"window": 80, "batch_size": 256, "epochs": 60}


@dataclass
class TrainConfig:
    window: int = 40
    stride: int = 10
    batch_size: int = 16
    epochs: int = 60
    learning_rate: float = 0.002
    lam: float = 0.1
    beta: float = 0.05
    dropout: float = 0.2
    seed: int = 0
    ablation: str = "full"
    omega_mode: str = "mean"
    attention_key_index: str = "j"
    embedding_reduce: str = "concat"
    hidden: int = 32
    d_step: int = 8
    flow_layers: int = 2
    flow_init_scale: float = 0.0
    flow_cond_init_scale: float = 0.0
    encoder_out_scale: float = 1.0
    grad_clip: float = 0.0  # 0 disables clipping
    score_lambda_scaled: bool = False
    score_passes: int = 3  # alignment-term averaging over scoring batch compositions
    split_fraction: float = 0.6

    def __post_init__(self):
        for name in ("window", "stride", "batch_size", "epochs", "hidden", "d_step", "flow_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (alignment needs a reference)")
        for name in ("learning_rate", "beta"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be > 0")
        if self.lam < 0.0:
            raise ConfigError("lam must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {sorted(ABLATIONS)}, got {self.ablation!r}")
        if self.omega_mode not in ("mean", "concat"):
            raise ConfigError(f"omega_mode must be 'mean' or 'concat', got {self.omega_mode!r}")
        if self.attention_key_index not in ("i", "j"):
            raise ConfigError("attention_key_index must be 'i' or 'j'")
        if self.embedding_reduce not in ("concat", "mean"):
            raise ConfigError("embedding_reduce must be 'concat' or 'mean'")

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class DetectionModel:
    config: TrainConfig
    n_channels: int
    attention: AttentionParams
    encoder_params: object
    flow: object

    def named_parameters(self):
        out = {
            "attention.w_query": self.attention.w_query,
            "attention.w_key": self.attention.w_key,
        }
        out.update(self.encoder_params.tensors())
        out.update(self.flow.tensors())
        return out

    @property
    def embedding_dim(self):
        if self.config.embedding_reduce == "concat":
            return self.config.window * self.config.d_step
        return self.config.d_step


def build_model(config, n_channels, seed=None):
    seed = config.seed if seed is None else seed
    streams = np.random.SeedSequence(seed).spawn(3)
    att_rng, enc_rng, flow_rng = (np.random.default_rng(s) for s in streams)
    attention = init_attention(config.window, att_rng)
    encoder_params = init_encoder(config.hidden, config.d_step, enc_rng,
                                  out_scale=config.encoder_out_scale)
    cond_dim = config.window * config.d_step if config.embedding_reduce == "concat" else config.d_step
    flow = init_flow(config.window, cond_dim, n_layers=config.flow_layers,
                     rng=flow_rng, scale=config.flow_init_scale,
                     cond_scale=config.flow_cond_init_scale or None)
    return DetectionModel(config=config, n_channels=n_channels,
                          attention=attention, encoder_params=encoder_params, flow=flow)


class Adam:
    """Standard Adam over named parameter tensors."""

    def __init__(self, params, learning_rate, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        correct1 = 1.0 - self.beta1**self.step_count
        correct2 = 1.0 - self.beta2**self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * p.grad
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * p.grad**2
            m_hat = self._m[i] / correct1
            v_hat = self._v[i] / correct2
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(params, max_norm):
    total = np.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


def _forward_batch(model, windows, training, dropout_rng):
    """Adjacency, embeddings, and mean log-likelihood for one window batch."""
    cfg = model.config
    windows = np.asarray(windows, dtype=np.float64)
    feats = np.swapaxes(windows, 1, 2).copy()  # (B, N, T)
    adjacency = attention_adjacency(
        feats,
        model.attention,
        key_index=cfg.attention_key_index,
        dropout=cfg.dropout if training else 0.0,
        rng=dropout_rng,
    )
    embeddings = encode_batch(windows, adjacency, model.encoder_params, reduce=cfg.embedding_reduce)
    n_batch, _, n_chan = windows.shape
    x_rows = Tensor(feats.reshape(n_batch * n_chan, cfg.window))
    cond_rows = ad.reshape(embeddings, (n_batch * n_chan, model.embedding_dim))
    mean_ll = batch_log_likelihood(x_rows, cond_rows, model.flow)
    return adjacency, embeddings, mean_ll


@dataclass
class TrainResult:
    checkpoint: dict
    loss_curve: list  # rows (epoch, batch, loss)
    epoch_means: list


def train(train_ds, config):
    """Train on a normalized training split; returns checkpoint + loss curve.

    Deterministic given the seed: parameter init, per-epoch shuffling, and
    dropout all draw from seed-derived streams.
    """
    if train_ds.norm_mean is None:
        raise ConfigError("train expects a normalized dataset (use load_csv/split_normalize)")
    cfg = config
    windows, starts, _ = window_table(train_ds, cfg.window, cfg.stride)
    if len(windows) < cfg.batch_size:
        raise ConfigError(
            f"training split yields {len(windows)} windows, need at least one full batch of {cfg.batch_size}"
        )
    model = build_model(cfg, train_ds.n_channels)
    params = model.named_parameters()
    optimizer = Adam(params, cfg.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    terms = ABLATIONS[cfg.ablation]

    loss_curve = []
    epoch_means = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(windows))
        epoch_losses = []
        for batch_index, lo in enumerate(range(0, len(order), cfg.batch_size)):
            take = order[lo : lo + cfg.batch_size]
            if len(take) < cfg.batch_size:
                break  # alignment reference needs full batches during training
            batch = windows[take]
            adjacency, embeddings, mean_ll = _forward_batch(model, batch, True, dropout_rng)
            if terms:
                align = batch_alignment(
                    embeddings,
                    adjacency,
                    lam=cfg.lam,
                    beta=cfg.beta,
                    terms=terms,
                    omega_mode=cfg.omega_mode,
                )
                loss = align.loss_term - mean_ll
            else:
                loss = -mean_ll
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
            optimizer.zero_grad()
            ad.backward(loss)
            if cfg.grad_clip > 0.0:
                clip_gradients(optimizer.params, cfg.grad_clip)
            optimizer.step()
            loss_curve.append((epoch, batch_index, value))
            epoch_losses.append(value)
        epoch_means.append(float(np.mean(epoch_losses)))

    train_scores = _score_windows(model, windows)["score"]
    q1, q3 = quartiles(train_scores)
    checkpoint = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "channel_names": list(train_ds.channel_names),
        "normalization": {
            "mean": _encode_array(train_ds.norm_mean),
            "std": _encode_array(train_ds.norm_std),
        },
        "parameters": {name: _encode_array(t.data) for name, t in params.items()},
        "quartiles": {"q1": q1, "q3": q3, "threshold": iqr_threshold_from(q1, q3)},
    }
    return TrainResult(checkpoint=checkpoint, loss_curve=loss_curve, epoch_means=epoch_means)


def quartiles(values):
    """25th/75th percentiles with linear interpolation between order statistics."""
    q1, q3 = np.percentile(np.asarray(values, dtype=np.float64), [25.0, 75.0])
    return float(q1), float(q3)


def iqr_threshold_from(q1, q3):
    return q3 + 1.5 * (q3 - q1)


def iqr_threshold(values):
    q1, q3 = quartiles(values)
    return iqr_threshold_from(q1, q3)


def auc_roc(scores, labels):
    """Probability a random positive outscores a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"AUC-ROC needs both classes, got {n_pos} positive / {n_neg} negative"
        )
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    u_stat = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


@dataclass
class ScoreReport:
    window_starts: np.ndarray
    labels: np.ndarray
    d_ga: np.ndarray
    nll: np.ndarray
    scores: np.ndarray
    threshold: float
    predicted: np.ndarray
    auc: float | None
    counts: dict = field(default_factory=dict)


def _score_windows(model, windows):
    """Raw per-window alignment distance and mean NLL.

    Windows enter alignment batches by seeded permutations, matching how
    instances are sampled during training: a batch's reference graph then
    aggregates windows from across the split instead of a contiguous run, so
    a long anomalous stretch cannot dominate its own reference. The
    alignment terms are averaged over ``score_passes`` independent batch
    compositions to damp the sampling noise of the reference (the NLL term
    does not depend on the batching and is computed once).
    """
    cfg = model.config
    batch_size = cfg.batch_size
    n_total = len(windows)
    terms = ABLATIONS[cfg.ablation]
    wd = np.zeros(n_total)
    gwd = np.zeros(n_total)
    nll = np.zeros(n_total)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    passes = max(1, cfg.score_passes)
    with ad.no_grad():
        for pass_index in range(passes):
            order = rng.permutation(n_total)
            lo = 0
            while lo < n_total:
                hi = min(lo + batch_size, n_total)
                borrow = 0
                if hi - lo == 1 and lo > 0:
                    borrow = 1  # a lone trailing window borrows a batchmate for the reference
                take = order[lo - borrow : hi]
                batch = windows[take]
                adjacency, embeddings, _ = _forward_batch(model, batch, False, None)
                n_batch, n_chan = batch.shape[0], batch.shape[2]
                out = take[borrow:]
                if pass_index == 0:
                    feats = np.swapaxes(batch, 1, 2).reshape(n_batch * n_chan, cfg.window)
                    conds = embeddings.data.reshape(n_batch * n_chan, model.embedding_dim)
                    ll_rows = log_prob(feats, conds, model.flow).data.reshape(n_batch, n_chan)
                    nll[out] = -ll_rows[borrow:].mean(axis=1)
                if terms:
                    align = batch_alignment(
                        embeddings, adjacency,
                        lam=cfg.lam, beta=cfg.beta, terms=terms, omega_mode=cfg.omega_mode,
                    )
                    wd[out] += align.wd[borrow:] / passes
                    gwd[out] += align.gwd[borrow:] / passes
                lo = hi
            if not terms:
                break
    scale = cfg.lam if cfg.score_lambda_scaled else 1.0
    d_ga = scale * (wd + gwd)
    return {"d_ga": d_ga, "wd": wd, "gwd": gwd, "nll": nll, "score": d_ga + nll}


def score(ds, checkpoint):
    """Score a dataset with a trained checkpoint; higher scores = more anomalous.

    The dataset may be raw (it is then normalized with the checkpoint's
    statistics) or already normalized with those same statistics.
    """
    cfg = TrainConfig.from_dict(checkpoint["config"])
    names = checkpoint["channel_names"]
    if list(ds.channel_names) != list(names):
        raise ConfigError(
            f"channel mismatch: checkpoint has {names}, dataset has {list(ds.channel_names)}"
        )
    mean = _decode_array(checkpoint["normalization"]["mean"])
    std = _decode_array(checkpoint["normalization"]["std"])
    if ds.norm_mean is None:
        ds = normalize_with(ds, mean, std)
    elif not (np.allclose(ds.norm_mean, mean) and np.allclose(ds.norm_std, std)):
        raise ConfigError("dataset was normalized with different statistics than the checkpoint")

    model = model_from_checkpoint(checkpoint)
    windows, starts, labels = window_table(ds, cfg.window, cfg.stride)
    parts = _score_windows(model, windows)
    threshold = float(checkpoint["quartiles"]["threshold"])
    scores = parts["score"]
    predicted = (scores > threshold).astype(np.int64)
    auc = None
    if labels.min() == 0 and labels.max() == 1:
        auc = auc_roc(scores, labels)
    counts = {
        "tp": int(((predicted == 1) & (labels == 1)).sum()),
        "fp": int(((predicted == 1) & (labels == 0)).sum()),
        "tn": int(((predicted == 0) & (labels == 0)).sum()),
        "fn": int(((predicted == 0) & (labels == 1)).sum()),
    }
    return ScoreReport(
        window_starts=starts,
        labels=labels,
        d_ga=parts["d_ga"],
        nll=parts["nll"],
        scores=scores,
        threshold=threshold,
        predicted=predicted,
        auc=auc,
        counts=counts,
    )


# ---------------------------------------------------------------------------
# checkpoint serialization (versioned JSON with base64 float64 blobs)


def _encode_array(arr):
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    return {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(blob):
    arr = np.frombuffer(base64.b64decode(blob["data"]), dtype="<f8").astype(np.float64)
    return arr.reshape(blob["shape"]).copy()


decode_array = _decode_array  # public name for checkpoint consumers


def save_checkpoint(checkpoint, path):
    body = json.dumps(checkpoint, sort_keys=True, indent=2)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(body + "\n")


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint file ({exc})") from None
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {data.get('version')!r}, expected {CHECKPOINT_VERSION}"
        )
    required = {"config", "channel_names", "normalization", "parameters", "quartiles"}
    missing = required - set(data)
    if missing:
        raise CheckpointError(f"{path}: checkpoint missing sections {sorted(missing)}")
    return data


def model_from_checkpoint(checkpoint):
    cfg = TrainConfig.from_dict(checkpoint["config"])
    n_channels = len(checkpoint["channel_names"])
    model = build_model(cfg, n_channels)
    params = model.named_parameters()
    stored = checkpoint["parameters"]
    if set(stored) != set(params):
        raise CheckpointError(
            f"parameter names disagree: missing {sorted(set(params) - set(stored))}, "
            f"unexpected {sorted(set(stored) - set(params))}"
        )
    for name, tensor in params.items():
        arr = _decode_array(stored[name])
        if arr.shape != tensor.data.shape:
            raise CheckpointError(f"parameter {name} has shape {arr.shape}, expected {tensor.data.shape}")
        tensor.data = arr
    return model
