"""The quality head: BLSTM -> FC+ReLU -> multi-head attention -> frame sigmoid -> mean pooling."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .features.encoder import MultiHeadSelfAttention

log = logging.getLogger(__name__)

N_THRESHOLDS = 8


@dataclass(frozen=True)
class PredictorConfig:
    feature_dim: int = 257
    n_thresholds: int = N_THRESHOLDS
    lstm_hidden: int = 128
    fc_dim: int = 256
    num_heads: int = 16

    def __post_init__(self):
        if self.fc_dim % self.num_heads:
            raise ValueError("fc_dim must be divisible by num_heads")

    def to_dict(self):
        return asdict(self)


@dataclass
class QualityPrediction:
    clip_score: float
    frame_scores: np.ndarray


class QualityPredictor(nn.Module):
    def __init__(self, cfg: PredictorConfig = PredictorConfig()):
        super().__init__()
        self.cfg = cfg
        self.blstm = nn.LSTM(cfg.feature_dim + cfg.n_thresholds, cfg.lstm_hidden,
                             batch_first=True, bidirectional=True)
        self.fc = nn.Linear(2 * cfg.lstm_hidden, cfg.fc_dim)
        self.attn = MultiHeadSelfAttention(cfg.fc_dim, cfg.num_heads)
        self.out = nn.Linear(cfg.fc_dim, 1)

    def forward(self, features, hearing_loss, lengths=None, return_attention=False):
        """Score a padded batch.

        Args:
            features: (B, T, feature_dim) frame features.
            hearing_loss: (B, n_thresholds) thresholds in dB / 100.
            lengths: optional (B,) valid frame counts; defaults to T for every item.

        Returns:
            clip scores (B,), frame scores (B, T) with padded frames set to 0,
            and the (B, heads, T, T) attention maps if requested.
        """
        b, t, f = features.shape
        if f != self.cfg.feature_dim or hearing_loss.shape != (b, self.cfg.n_thresholds):
            raise ValueError(f"shape mismatch: features {tuple(features.shape)}, "
                             f"hearing loss {tuple(hearing_loss.shape)}")
        x = torch.cat([features, hearing_loss[:, None, :].expand(b, t, -1).to(features.dtype)], dim=-1)
        if lengths is None:
            lengths = torch.full((b,), t, dtype=torch.long)
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        mask = torch.arange(t)[None, :] < lengths[:, None]
        if bool((lengths == t).all()):
            h, _ = self.blstm(x)
        else:
            packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
            h, _ = pad_packed_sequence(self.blstm(packed)[0], batch_first=True, total_length=t)
        h = torch.relu(self.fc(h))
        a, w = self.attn(h, key_padding_mask=~mask, return_weights=True)
        h = h + a
        frames = torch.sigmoid(self.out(h)).squeeze(-1) * mask
        clip = frames.sum(dim=1) / lengths.to(frames.dtype)
        return (clip, frames, w) if return_attention else (clip, frames)


def build_predictor(cfg: PredictorConfig, seed: int, dtype=torch.float32) -> QualityPredictor:
    with torch.random.fork_rng():
        torch.manual_seed(int(seed))
        model = QualityPredictor(cfg)
    return model.to(dtype)


def quality_loss(truth, clip_pred, frame_pred, lengths=None):
    """Clip-level squared error plus the mean frame-level squared error against the true clip score.

    ``truth`` plays the role of the hatted score; frame terms compare each
    estimated frame score with the true clip score.
    """
    truth = torch.as_tensor(truth, dtype=clip_pred.dtype)
    b, t = frame_pred.shape
    if b == 0:
        raise ValueError("empty batch")
    if truth.shape != clip_pred.shape or clip_pred.shape[0] != b:
        raise ValueError("truth / prediction batch sizes differ")
    if lengths is None:
        lengths = torch.full((b,), t, dtype=torch.long)
    lengths = torch.as_tensor(lengths)
    mask = (torch.arange(t)[None, :] < lengths[:, None]).to(frame_pred.dtype)
    clip_term = (truth - clip_pred) ** 2
    frame_term = (((truth[:, None] - frame_pred) ** 2) * mask).sum(dim=1) / lengths.to(frame_pred.dtype)
    return (clip_term + frame_term).mean()


def numeric_gradient(loss_fn, params, eps: float = 1e-6, indices=None) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``params``.

    Args:
        loss_fn: callable mapping a flat float64 vector to a scalar.
        params: flat parameter vector (not modified).
        eps: probe step.
        indices: optional subset of coordinates; the result then has one entry per index.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(params, dtype=np.float64)
    idx = np.arange(p.size) if indices is None else np.asarray(indices)
    grad = np.empty(len(idx))
    for j, i in enumerate(idx):
        orig = p[i]
        p[i] = orig + eps
        fp = float(loss_fn(p))
        p[i] = orig - eps
        fm = float(loss_fn(p))
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss while probing coordinate {i}")
        grad[j] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


# -- training --------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_steps: int = 2000
    max_epochs: int = 1000
    patience: int = 5
    min_delta: float = 1e-5
    valid_fraction: float = 0.2
    seed: int = 0

    def to_dict(self):
        return asdict(self)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Example:
    """One training item: model input tensor(s), normalized hearing loss, true score."""
    raw: np.ndarray
    hearing_loss: np.ndarray
    score: float
    clip_id: str = ""


@dataclass
class TrainResult:
    state: dict
    history: list = field(default_factory=list)
    best_valid: float = float("nan")
    steps: int = 0
    stopped_early: bool = False


def collate(examples, dtype=torch.float32):
    """Pad along the time axis (the second-to-last axis of ``raw``)."""
    lengths = [ex.raw.shape[-2] for ex in examples]
    t = max(lengths)
    lead = examples[0].raw.shape[:-2]
    d = examples[0].raw.shape[-1]
    out = np.zeros((len(examples),) + lead + (t, d))
    for i, ex in enumerate(examples):
        out[i, ..., :lengths[i], :] = ex.raw
    raw = torch.as_tensor(out, dtype=dtype)
    if lead:
        # layer-stacked inputs travel as (L, B, T, D)
        raw = raw.movedim(1, 0)
    hl = torch.as_tensor(np.stack([ex.hearing_loss for ex in examples]), dtype=dtype)
    y = torch.as_tensor([ex.score for ex in examples], dtype=dtype)
    return raw, hl, y, torch.as_tensor(lengths)


def split_train_valid(examples, fraction: float, seed: int):
    if not examples:
        raise ValueError("empty dataset")
    order = np.random.default_rng(seed).permutation(len(examples))
    n_valid = int(round(fraction * len(examples))) if len(examples) > 1 else 0
    valid = [examples[i] for i in sorted(order[:n_valid])]
    train = [examples[i] for i in sorted(order[n_valid:])]
    return train, valid


def batch_loss(model, batch):
    raw, hl, y, lengths = batch
    clip, frames = model(raw, hl, lengths)
    return quality_loss(y, clip, frames, lengths)


def evaluate_loss(model, examples, batch_size: int, dtype=torch.float32) -> float:
    if not examples:
        return float("nan")
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            total += float(batch_loss(model, collate(chunk, dtype))) * len(chunk)
            n += len(chunk)
    return total / n


def train(model: nn.Module, train_set, cfg: TrainConfig, valid_set=None,
          warm_start: dict | None = None, trainable=None, dtype=torch.float32,
          step_callback=None) -> TrainResult:
    """Adam on the quality loss with early stopping on validation loss.

    ``model`` maps ``(raw, hearing_loss, lengths)`` to ``(clip, frames)``.
    When ``valid_set`` is None the training examples are split
    ``1 - valid_fraction`` / ``valid_fraction``. The best-validation state is
    returned; with no validation data the final state is returned.
    """
    if not train_set:
        raise ValueError("empty dataset")
    if valid_set is None:
        train_set, valid_set = split_train_valid(train_set, cfg.valid_fraction, cfg.seed)
    if warm_start is not None:
        model.load_state_dict(warm_start)
    params = [p for p in (model.parameters() if trainable is None else trainable) if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    gen = torch.Generator().manual_seed(int(cfg.seed))
    result = TrainResult(state=copy.deepcopy(model.state_dict()))
    best, bad_epochs, step = float("inf"), 0, 0
    initial_valid = evaluate_loss(model, valid_set, cfg.batch_size, dtype)
    result.history.append({"step": 0, "epoch": 0, "train_loss": float("nan"), "valid_loss": initial_valid})
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = torch.randperm(len(train_set), generator=gen).tolist()
        running, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            batch = collate([train_set[j] for j in order[i:i + cfg.batch_size]], dtype)
            opt.zero_grad()
            loss = batch_loss(model, batch)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step + 1}, epoch {epoch}")
            loss.backward()
            opt.step()
            step += 1
            running += loss.item() * len(batch[2])
            seen += len(batch[2])
            if step_callback is not None:
                step_callback(step, loss.item())
            if step >= cfg.max_steps:
                break
        valid_loss = evaluate_loss(model, valid_set, cfg.batch_size, dtype)
        result.history.append({"step": step, "epoch": epoch, "train_loss": running / max(seen, 1),
                               "valid_loss": valid_loss})
        log.debug("epoch %d step %d train %.5f valid %.5f", epoch, step, running / max(seen, 1), valid_loss)
        if valid_set:
            if valid_loss < best - cfg.min_delta:
                best, bad_epochs = valid_loss, 0
                result.state = copy.deepcopy(model.state_dict())
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    result.stopped_early = True
                    break
        else:
            result.state = copy.deepcopy(model.state_dict())
        if step >= cfg.max_steps:
            break
    result.best_valid = best if valid_set else float("nan")
    result.steps = step
    model.load_state_dict(result.state)
    return result
