"""Layer distillation from the full encoder into a 3-layer student with TE prediction heads.

The student keeps the teacher's fbank front end, patch embedding, layer
norm and first ``kept_layers`` transformer layers. Small MLP heads then
predict selected teacher layers (by default 6, 9 and 12) from the
student's last layer, either all from that layer (independent) or as a
chain (sequential).
"""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .features.encoder import EncoderConfig, EncoderLayer, PatchEmbed, TransformerEncoder, weighted_sum
from .predictor import TrainingDiverged, quality_loss

log = logging.getLogger(__name__)

TOPOLOGIES = ("single", "multi-independent", "multi-sequential")
FUSIONS = ("last-head", "weighted-sum")
DIFFICULTY_SOURCES = ("teacher", "label")
COSINE_FORMS = ("printed", "logsigmoid")


@dataclass(frozen=True)
class StudentConfig:
    kept_layers: int = 3
    head_topology: str = "multi-independent"
    tapped_layers: tuple = (6, 9, 12)
    fuse: str = "last-head"
    finetune_predictor: bool = False
    head_hidden: int | None = None          # None -> model_dim // 2
    difficulty_source: str = "teacher"
    difficulty_grad: bool = False
    cosine_form: str = "printed"

    def __post_init__(self):
        object.__setattr__(self, "tapped_layers", tuple(int(i) for i in self.tapped_layers))
        if self.head_topology not in TOPOLOGIES:
            raise ValueError(f"unknown head topology {self.head_topology!r}")
        if self.fuse not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fuse!r}")
        if self.difficulty_source not in DIFFICULTY_SOURCES:
            raise ValueError(f"unknown difficulty source {self.difficulty_source!r}")
        if self.cosine_form not in COSINE_FORMS:
            raise ValueError(f"unknown cosine loss form {self.cosine_form!r}")
        taps = self.tapped_layers
        if not taps or list(taps) != sorted(set(taps)) or taps[0] < 1:
            raise ValueError(f"tapped layers must be distinct, ascending and >= 1: {taps}")
        if self.head_topology == "single" and len(taps) != 1:
            raise ValueError("single topology taps exactly one layer")
        if self.kept_layers < 1:
            raise ValueError("kept_layers must be >= 1")

    @classmethod
    def single(cls, teacher_layers: int = 12, **kw):
        return cls(head_topology="single", tapped_layers=(teacher_layers,), **kw)

    def to_dict(self):
        d = asdict(self)
        d["tapped_layers"] = list(self.tapped_layers)
        return d


class TePredictor(nn.Sequential):
    """Two-layer perceptron predicting one teacher layer."""

    def __init__(self, dim: int, hidden: int):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))


class StudentEncoder(nn.Module):
    def __init__(self, enc_cfg: EncoderConfig, cfg: StudentConfig = StudentConfig()):
        super().__init__()
        if cfg.tapped_layers[-1] > enc_cfg.num_layers:
            raise ValueError(f"taps {cfg.tapped_layers} exceed the teacher's {enc_cfg.num_layers} layers")
        if cfg.head_topology == "single" and cfg.tapped_layers[-1] != enc_cfg.num_layers:
            raise ValueError("single topology must tap the teacher's final layer")
        if cfg.kept_layers > enc_cfg.num_layers:
            raise ValueError("student cannot keep more layers than the teacher has")
        self.enc_cfg, self.cfg = enc_cfg, cfg
        d = enc_cfg.model_dim
        self.patch_embed = PatchEmbed(enc_cfg)
        self.norm = nn.LayerNorm(d)
        self.layers = nn.ModuleList(
            EncoderLayer(d, enc_cfg.num_heads, enc_cfg.ff_dim) for _ in range(cfg.kept_layers))
        hidden = cfg.head_hidden or d // 2
        self.heads = nn.ModuleList(TePredictor(d, hidden) for _ in cfg.tapped_layers)
        if cfg.fuse == "weighted-sum":
            self.head_logits = nn.Parameter(torch.zeros(len(cfg.tapped_layers)))

    def backbone(self, fb, token_mask=None):
        """Outputs of the kept layers; ``token_mask`` (B, T') marks valid tokens of padded batches."""
        x = self.norm(self.patch_embed(fb))
        pad = None if token_mask is None else ~token_mask
        outs = []
        for layer in self.layers:
            x = layer(x, key_padding_mask=pad)
            outs.append(x)
        return outs

    def forward(self, fb, token_mask=None):
        """Returns (predicted teacher features per tapped layer, fused feature for the quality head)."""
        x = self.backbone(fb, token_mask)[-1]
        preds = []
        if self.cfg.head_topology == "multi-sequential":
            h = x
            for head in self.heads:
                h = head(h)
                preds.append(h)
        else:
            preds = [head(x) for head in self.heads]
        fused = weighted_sum(preds, self.head_logits) if self.cfg.fuse == "weighted-sum" else preds[-1]
        return preds, fused


def _copy_module(dst: nn.Module, src: nn.Module):
    with torch.no_grad():
        for (n1, p1), (n2, p2) in zip(dst.state_dict().items(), src.state_dict().items()):
            if n1 != n2 or p1.shape != p2.shape:
                raise ValueError(f"parameter mismatch: {n1} {tuple(p1.shape)} vs {n2} {tuple(p2.shape)}")
            p1.copy_(p2)


def transfer_init(teacher: TransformerEncoder, cfg: StudentConfig, seed: int) -> StudentEncoder:
    """Student whose front end and first layers are exact copies of the teacher's; heads are seeded."""
    if teacher.cfg.num_layers < cfg.kept_layers:
        raise ValueError("teacher has fewer layers than the student keeps")
    with torch.random.fork_rng():
        torch.manual_seed(int(seed))
        student = StudentEncoder(teacher.cfg, cfg)
    dtype = next(teacher.parameters()).dtype
    student = student.to(dtype)
    _copy_module(student.patch_embed, teacher.patch_embed)
    _copy_module(student.norm, teacher.norm)
    for i in range(cfg.kept_layers):
        _copy_module(student.layers[i], teacher.layers[i])
    return student


def random_init(enc_cfg: EncoderConfig, cfg: StudentConfig, seed: int, dtype=torch.float32) -> StudentEncoder:
    with torch.random.fork_rng():
        torch.manual_seed(int(seed))
        student = StudentEncoder(enc_cfg, cfg)
    return student.to(dtype)


# -- losses ----------------------------------------------------------------

def _masked(t, p, mask):
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: teacher {tuple(t.shape)} vs prediction {tuple(p.shape)}")
    if mask is None:
        return t, p, None
    m = mask.to(t.dtype)[..., None]
    return t * m, p * m, m


def l1_layer_loss(teacher_feat, student_pred, mask=None):
    """Mean absolute difference over the last two axes (one value per leading index).

    ``mask`` (..., T) marks valid tokens; padded tokens are excluded from the mean.
    """
    t, p, m = _masked(teacher_feat, student_pred, mask)
    diff = (t - p).abs()
    if m is None:
        return diff.mean(dim=(-2, -1))
    return diff.sum(dim=(-2, -1)) / (m.sum(dim=(-2, -1)) * t.shape[-1])


def cosine_similarity(teacher_feat, student_pred, mask=None):
    t, p, _ = _masked(teacher_feat, student_pred, mask)
    t, p = t.flatten(-2), p.flatten(-2)
    nt, np_ = t.norm(dim=-1), p.norm(dim=-1)
    if bool((nt == 0).any()) or bool((np_ == 0).any()):
        raise ValueError("zero-norm features have no cosine similarity")
    return (t * p).sum(dim=-1) / (nt * np_)


def sigmoid_cosine_loss(teacher_feat, student_pred, mask=None, form: str = "printed"):
    """Sigmoid-cosine loss; returns (loss, s).

    ``printed``: -s log(sigmoid(s)) - (1 - s) log(1 - sigmoid(s)). Its slope in s
    is sigmoid(s) - 2s, positive for s below about 0.285, so on its own it favours
    anti-aligned predictions. ``logsigmoid``: -log(sigmoid(s)), monotone in s.
    """
    s = cosine_similarity(teacher_feat, student_pred, mask)
    if form == "printed":
        loss = -s * F.logsigmoid(s) - (1.0 - s) * F.logsigmoid(-s)
    elif form == "logsigmoid":
        loss = -F.logsigmoid(s)
    else:
        raise ValueError(f"unknown cosine loss form {form!r}")
    return loss, s


def layer_loss(teacher_feat, student_pred, mask=None, form: str = "printed"):
    """L1 plus sigmoid-cosine loss for one tapped layer; returns (loss, s)."""
    cos_loss, s = sigmoid_cosine_loss(teacher_feat, student_pred, mask, form)
    return l1_layer_loss(teacher_feat, student_pred, mask) + cos_loss, s


def difficulty_weight(similarities):
    """d = 2 - mean(s) over the last axis: 1 for the easiest sample, 3 for the hardest."""
    s = torch.as_tensor(similarities)
    if s.numel() == 0 or s.shape[-1] == 0:
        raise ValueError("no similarities given")
    if bool((s.abs() > 1.0 + 1e-6).any()):
        raise ValueError("similarities must lie in [-1, 1]")
    return 2.0 - s.mean(dim=-1)


def distill_loss(layer_losses, weights):
    """Batch mean of (mean layer loss) * d_n; ``layer_losses`` is (B, n_layers), ``weights`` (B,)."""
    layer_losses = torch.as_tensor(layer_losses)
    weights = torch.as_tensor(weights, dtype=layer_losses.dtype)
    if layer_losses.dim() != 2 or weights.shape != layer_losses.shape[:1]:
        raise ValueError(f"batch/layer mismatch: {tuple(layer_losses.shape)} vs {tuple(weights.shape)}")
    return (layer_losses.mean(dim=1) * weights).mean()


def total_loss(lq, ld):
    if not (torch.isfinite(torch.as_tensor(lq)) and torch.isfinite(torch.as_tensor(ld))):
        raise FloatingPointError(f"non-finite loss terms: quality {float(lq)}, distill {float(ld)}")
    return lq + ld


def label_similarity(truth, pred):
    """Similarity in [-1, 1] from score agreement, for the label-based difficulty variant."""
    return 1.0 - 2.0 * (torch.as_tensor(truth, dtype=pred.dtype) - pred).abs()


def batch_distill_terms(preds, targets, mask=None, form: str = "printed"):
    """Stack per-sample layer losses and similarities: both (B, n_layers)."""
    losses, sims = [], []
    for p, t in zip(preds, targets):
        lval, s = layer_loss(t, p, mask, form)
        losses.append(lval)
        sims.append(s)
    return torch.stack(losses, dim=1), torch.stack(sims, dim=1)


# -- training --------------------------------------------------------------

@dataclass
class DistillExample:
    fbank: np.ndarray            # (T, mel_bins)
    targets: np.ndarray          # (n_taps, T', D) teacher outputs at the tapped layers
    hearing_loss: np.ndarray
    score: float
    clip_id: str = ""


@dataclass
class DistillTrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_steps: int = 300
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class DistillResult:
    state: dict
    report: list = field(default_factory=list)
    final_similarity: dict = field(default_factory=dict)
    steps: int = 0


def teacher_targets(teacher: TransformerEncoder, fb: np.ndarray, taps) -> np.ndarray:
    with torch.no_grad():
        x = torch.as_tensor(fb[None], dtype=next(teacher.parameters()).dtype)
        outs = teacher(x, num_layers=max(taps))
    return np.stack([outs[i - 1][0].numpy() for i in taps])


def collate_distill(examples, enc_cfg: EncoderConfig, dtype=torch.float32):
    frames = [ex.fbank.shape[0] for ex in examples]
    t = max(frames)
    fb = np.zeros((len(examples), t, examples[0].fbank.shape[1]))
    for i, ex in enumerate(examples):
        fb[i, :frames[i]] = ex.fbank
    tok = [ex.targets.shape[1] for ex in examples]
    tt = max(tok)
    n_taps, d = examples[0].targets.shape[0], examples[0].targets.shape[2]
    tg = np.zeros((n_taps, len(examples), tt, d))
    for i, ex in enumerate(examples):
        tg[:, i, :tok[i]] = ex.targets
    mask = torch.arange(tt)[None, :] < torch.as_tensor(tok)[:, None]
    hl = np.stack([ex.hearing_loss for ex in examples])
    y = [ex.score for ex in examples]
    return (torch.as_tensor(fb, dtype=dtype), torch.as_tensor(tg, dtype=dtype), mask,
            torch.as_tensor(hl, dtype=dtype), torch.as_tensor(y, dtype=dtype), torch.as_tensor(tok))


def distill_step_terms(model, batch, cfg: StudentConfig):
    """Forward a ``student``-variant HaaqiNet on one batch; returns (L_qual, L_distil, sims, d)."""
    fb, targets, mask, hl, y, tok = batch
    preds, fused = model.student(fb, mask)
    if preds[0].shape[1] != targets.shape[2]:
        raise ValueError("student and teacher token counts differ")
    losses, sims = batch_distill_terms(preds, list(targets), mask, cfg.cosine_form)
    feats = model.project(fused)
    clip, frames = model.predictor(feats, hl, tok)
    lq = quality_loss(y, clip, frames, tok)
    if cfg.difficulty_source == "label":
        s_for_d = label_similarity(y, clip)[:, None].clamp(-1.0, 1.0)
    else:
        s_for_d = sims
    d = difficulty_weight(s_for_d if cfg.difficulty_grad else s_for_d.detach())
    return lq, distill_loss(losses, d), sims, d


def similarity_on(model, examples, enc_cfg, batch_size=16, dtype=torch.float32) -> np.ndarray:
    """Mean cosine similarity per tapped layer over ``examples``."""
    if not examples:
        return np.array([])
    total, n = None, 0
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            fb, targets, mask, *_ = collate_distill(examples[i:i + batch_size], enc_cfg, dtype)
            preds, _ = model.student(fb, mask)
            _, sims = batch_distill_terms(preds, list(targets), mask)
            total = sims.sum(0) if total is None else total + sims.sum(0)
            n += sims.shape[0]
    return (total / n).numpy()


def freeze_predictor_core(model, finetune: bool):
    """Freeze the BLSTM and attention of the quality head unless fine-tuning them."""
    for mod in (model.predictor.blstm, model.predictor.attn):
        for p in mod.parameters():
            p.requires_grad_(finetune)


def distill_train(model, train_set, cfg: StudentConfig, tcfg: DistillTrainConfig,
                  valid_set=None, report_path=None, dtype=torch.float32) -> DistillResult:
    """Optimize quality loss + adaptive distillation loss for a ``student``-variant HaaqiNet.

    The teacher only appears through the precomputed ``targets`` of each example.
    """
    if not train_set:
        raise ValueError("empty dataset")
    enc_cfg = model.student.enc_cfg
    freeze_predictor_core(model, cfg.finetune_predictor)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=tcfg.lr)
    gen = torch.Generator().manual_seed(int(tcfg.seed))
    taps = cfg.tapped_layers
    result = DistillResult(state={})
    step = 0
    model.train()
    while step < tcfg.max_steps:
        order = torch.randperm(len(train_set), generator=gen).tolist()
        for i in range(0, len(order), tcfg.batch_size):
            batch = collate_distill([train_set[j] for j in order[i:i + tcfg.batch_size]], enc_cfg, dtype)
            opt.zero_grad()
            lq, ld, sims, d = distill_step_terms(model, batch, cfg)
            if not (torch.isfinite(lq) and torch.isfinite(ld)):
                raise TrainingDiverged(f"non-finite loss at step {step + 1}: quality {float(lq)}, "
                                       f"distill {float(ld)}, mean d {float(d.mean())}")
            total_loss(lq, ld).backward()
            opt.step()
            step += 1
            row = {"step": step, "L_qual": float(lq.detach()), "L_distil": float(ld.detach())}
            mean_s = sims.detach().mean(0)
            for k, layer in enumerate(taps):
                row[f"cos{layer}"] = float(mean_s[k])
            row["mean_d"] = float(d.detach().mean())
            result.report.append(row)
            if step >= tcfg.max_steps:
                break
    model.eval()
    held_out = valid_set if valid_set else train_set
    sims = similarity_on(model, held_out, enc_cfg, dtype=dtype)
    result.final_similarity = {int(layer): float(s) for layer, s in zip(taps, sims)}
    result.state = copy.deepcopy(model.state_dict())
    result.steps = step
    if report_path is not None:
        write_report(report_path, result.report, taps)
    return result


def report_columns(taps=(6, 9, 12)):
    return ["step", "L_qual", "L_distil"] + [f"cos{i}" for i in taps] + ["mean_d"]


def write_report(path, rows, taps=(6, 9, 12)):
    cols = report_columns(taps)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})


def step0_distill_loss(student: StudentEncoder, examples, dtype=torch.float32) -> float:
    """Adaptive distillation loss of an untrained student on ``examples`` (no parameter update)."""
    with torch.no_grad():
        fb, targets, mask, *_ = collate_distill(examples, student.enc_cfg, dtype)
        preds, _ = student(fb, mask)
        losses, sims = batch_distill_terms(preds, list(targets), mask, student.cfg.cosine_form)
        return float(distill_loss(losses, difficulty_weight(sims)))
