"""GRU + text-fusion + bidirectional cross-attention classifier.

Shapes: B batch, T visits, F lab features, d hidden size, D text-embedding
size, H heads. The time-series side attends over the per-visit GRU states
(T keys); the text side attends over the two projected text vectors
``[proj(h_note), proj(h_rag)]`` (L = 2 keys). Queries are the pooled vector
of the other modality: the last GRU state and the fused text vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import PipelineRuntimeError, ValidationError

MODALITIES = ("ts", "note", "rag")
FUSION_VARIANTS = ("cross", "ts_query", "text_query", "self_attention", "concat")


class NonFiniteError(PipelineRuntimeError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    n_features: int
    d_text: int
    hidden_dim: int = 128
    n_heads: int = 4
    ff_mult: int = 4
    head_hidden: int | None = None
    dropout: float = 0.25
    fusion: str = "cross"
    modalities: tuple[str, ...] = MODALITIES
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(m for m in MODALITIES if m in self.modalities))
        if not self.modalities:
            raise ValidationError("at least one modality is required")
        if self.fusion not in FUSION_VARIANTS:
            raise ValidationError(f"unknown fusion variant {self.fusion!r}")
        if self.hidden_dim % self.n_heads:
            raise ValidationError("hidden_dim must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.n_features < 1 or self.d_text < 1:
            raise ValidationError("n_features and d_text must be positive")

    @property
    def d_k(self) -> int:
        return self.hidden_dim // self.n_heads


@dataclass
class ModelBatch:
    ts: torch.Tensor  # [B, T, F], standardized, missing filled with 0
    lengths: torch.Tensor  # [B] valid visit counts
    h_note: torch.Tensor  # [B, D]
    h_rag: torch.Tensor  # [B, D]
    y: torch.Tensor | None = None  # [B] in {0, 1}

    def __len__(self) -> int:
        return self.ts.shape[0]

    def select(self, idx) -> "ModelBatch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return ModelBatch(
            self.ts[idx],
            self.lengths[idx],
            self.h_note[idx],
            self.h_rag[idx],
            None if self.y is None else self.y[idx],
        )

    def to(self, dtype: torch.dtype) -> "ModelBatch":
        return ModelBatch(
            self.ts.to(dtype),
            self.lengths,
            self.h_note.to(dtype),
            self.h_rag.to(dtype),
            None if self.y is None else self.y.to(dtype),
        )


@dataclass
class ForwardOutput:
    states: torch.Tensor | None
    h_ts: torch.Tensor | None
    h_text: torch.Tensor | None
    text_seq: torch.Tensor | None
    z_ts: torch.Tensor
    z_text: torch.Tensor
    z: torch.Tensor
    y_hat: torch.Tensor
    attention: dict = field(default_factory=dict)


def _uniform_(tensor: torch.Tensor, fan_in: int, generator: torch.Generator | None) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)


class GRUEncoder(nn.Module):
    """Single-layer GRU, gate order (reset, update, candidate).

    r = σ(W_ir x + b_ir + W_hr h + b_hr)
    u = σ(W_iu x + b_iu + W_hu h + b_hu)
    n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
    h' = (1 − u) ⊙ n + u ⊙ h
    """

    def __init__(self, n_features: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.weight_ih = nn.Parameter(torch.empty(3 * hidden, n_features))
        self.weight_hh = nn.Parameter(torch.empty(3 * hidden, hidden))
        self.bias_ih = nn.Parameter(torch.empty(3 * hidden))
        self.bias_hh = nn.Parameter(torch.empty(3 * hidden))

    def reset_parameters(self, generator=None) -> None:
        for p in (self.weight_ih, self.weight_hh, self.bias_ih, self.bias_hh):
            _uniform_(p, self.hidden, generator)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor | None = None):
        if not torch.isfinite(x).all():
            raise NonFiniteError("time-series input contains non-finite values")
        b, t, _ = x.shape
        d = self.hidden
        if lengths is None:
            lengths = torch.full((b,), t, dtype=torch.long)
        gi = F.linear(x, self.weight_ih, self.bias_ih)  # [B, T, 3d]
        h = x.new_zeros(b, d)
        states = []
        for step in range(t):
            gh = F.linear(h, self.weight_hh, self.bias_hh)
            g = gi[:, step]
            r = torch.sigmoid(g[:, :d] + gh[:, :d])
            u = torch.sigmoid(g[:, d : 2 * d] + gh[:, d : 2 * d])
            n = torch.tanh(g[:, 2 * d :] + r * gh[:, 2 * d :])
            h_new = (1 - u) * n + u * h
            live = (step < lengths).unsqueeze(1)
            h = torch.where(live, h_new, h)
            states.append(h)
        return torch.stack(states, dim=1), h


class CrossAttentionBlock(nn.Module):
    """Multi-head attention of one pooled query over a key/value sequence,
    followed by residual + BatchNorm and a ReLU feedforward with residual +
    BatchNorm."""

    def __init__(self, d: int, n_heads: int, d_ff: int, momentum: float = 0.1):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d // n_heads
        self.W_q = nn.Linear(d, d, bias=False)
        self.W_k = nn.Linear(d, d, bias=False)
        self.W_v = nn.Linear(d, d, bias=False)
        self.norm_attn = nn.BatchNorm1d(d, momentum=momentum)
        self.ff_in = nn.Linear(d, d_ff)
        self.ff_out = nn.Linear(d_ff, d)
        self.norm_ff = nn.BatchNorm1d(d, momentum=momentum)

    def reset_parameters(self, generator=None) -> None:
        for lin in (self.W_q, self.W_k, self.W_v, self.ff_in, self.ff_out):
            _uniform_(lin.weight, lin.in_features, generator)
            if lin.bias is not None:
                _uniform_(lin.bias, lin.in_features, generator)
        for norm in (self.norm_attn, self.norm_ff):
            norm.reset_parameters()

    def attend(self, query: torch.Tensor, keys: torch.Tensor, mask: torch.Tensor | None = None):
        """Attention output before the residual, and the per-head weights [B, H, L]."""
        b, l, d = keys.shape
        h, dk = self.n_heads, self.d_k
        q = self.W_q(query).view(b, h, dk)
        k = self.W_k(keys).view(b, l, h, dk)
        v = self.W_v(keys).view(b, l, h, dk)
        logits = torch.einsum("bhd,blhd->bhl", q, k) / math.sqrt(dk)
        if mask is not None:
            valid = mask.unsqueeze(1).expand_as(logits)
            if not torch.isfinite(logits[valid]).all():
                raise NonFiniteError("non-finite attention logits")
            logits = logits.masked_fill(~valid, float("-inf"))
        elif not torch.isfinite(logits).all():
            raise NonFiniteError("non-finite attention logits")
        weights = torch.softmax(logits, dim=-1)
        out = torch.einsum("bhl,blhd->bhd", weights, v).reshape(b, d)
        return out, weights

    def forward(self, query, keys, mask=None):
        out, weights = self.attend(query, keys, mask)
        hidden = self.norm_attn(query + out)
        z = self.norm_ff(hidden + self.ff_out(F.relu(self.ff_in(hidden))))
        return z, weights


class FusionModel(nn.Module):
    def __init__(self, config: FusionConfig, seed: int = 0):
        super().__init__()
        self.config = config
        d, dt = config.hidden_dim, config.d_text
        d_ff = config.ff_mult * d
        self.gru = GRUEncoder(config.n_features, d)
        self.text_proj = nn.Linear(2 * dt, d)
        self.ts_branch = CrossAttentionBlock(d, config.n_heads, d_ff, config.bn_momentum)
        self.text_branch = CrossAttentionBlock(d, config.n_heads, d_ff, config.bn_momentum)
        self.fuse = nn.Linear(2 * d, d)
        head_hidden = config.head_hidden or d
        self.head_in = nn.Linear(d, head_hidden)
        self.head_out = nn.Linear(head_hidden, 1)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        g = torch.Generator().manual_seed(seed)
        self.gru.reset_parameters(g)
        self.ts_branch.reset_parameters(g)
        self.text_branch.reset_parameters(g)
        for lin in (self.text_proj, self.fuse, self.head_in, self.head_out):
            _uniform_(lin.weight, lin.in_features, g)
            _uniform_(lin.bias, lin.in_features, g)

    @property
    def has_ts(self) -> bool:
        return "ts" in self.config.modalities

    @property
    def has_text(self) -> bool:
        return "note" in self.config.modalities or "rag" in self.config.modalities

    def encode_timeseries(self, x, lengths=None):
        return self.gru(x, lengths)

    def fuse_text(self, h_note: torch.Tensor, h_rag: torch.Tensor):
        """Return ``(h_text, text_seq)``; absent text modalities are zeroed."""
        dt = self.config.d_text
        if h_note.shape[-1] != dt or h_rag.shape[-1] != dt:
            raise ValidationError(
                f"text embeddings have dims {h_note.shape[-1]}/{h_rag.shape[-1]}, expected {dt}"
            )
        mods = self.config.modalities
        if "note" not in mods:
            h_note = torch.zeros_like(h_note)
        if "rag" not in mods:
            h_rag = torch.zeros_like(h_rag)
        w, bias = self.text_proj.weight, self.text_proj.bias
        h_text = F.linear(torch.cat([h_note, h_rag], dim=-1), w, bias)
        rows = []
        if "note" in mods:
            rows.append(F.linear(h_note, w[:, :dt], bias))
        if "rag" in mods:
            rows.append(F.linear(h_rag, w[:, dt:], bias))
        text_seq = torch.stack(rows, dim=1) if rows else None
        return h_text, text_seq

    def cross_attend(self, ts_states, ts_pooled, text_seq, text_pooled, ts_mask=None):
        """Bidirectional cross-attention: returns ``(z_ts, z_text, weights)``.

        The ``ts_query`` / ``text_query`` variants keep only the branch whose
        query comes from the named modality and pass the other pooled vector
        through unchanged; ``self_attention`` lets each modality query itself.
        """
        variant = self.config.fusion
        weights = {}
        z_ts, z_text = ts_pooled, text_pooled
        if variant in ("cross", "text_query"):
            z_ts, weights["ts"] = self.ts_branch(text_pooled, ts_states, ts_mask)
        if variant in ("cross", "ts_query"):
            z_text, weights["text"] = self.text_branch(ts_pooled, text_seq)
        if variant == "self_attention":
            z_ts, weights["ts"] = self.ts_branch(ts_pooled, ts_states, ts_mask)
            z_text, weights["text"] = self.text_branch(text_pooled, text_seq)
        return z_ts, z_text, weights

    def fuse_and_predict(self, z_ts, z_text, generator=None, dropout_mask=None):
        """Concat-MLP fusion, then linear → ReLU → dropout → linear → sigmoid.

        Dropout is active only in training mode; ``dropout_mask`` (boolean keep
        mask, same shape as the head's hidden layer) overrides sampling.
        """
        z = F.relu(self.fuse(torch.cat([z_ts, z_text], dim=-1)))
        hidden = F.relu(self.head_in(z))
        p = self.config.dropout
        if self.training and p > 0:
            if dropout_mask is None:
                dropout_mask = torch.rand(hidden.shape, generator=generator, dtype=hidden.dtype) >= p
            hidden = hidden * dropout_mask / (1.0 - p)
        y_hat = torch.sigmoid(self.head_out(hidden)).squeeze(-1)
        return z, y_hat

    def forward_details(self, batch: ModelBatch, generator=None, dropout_mask=None) -> ForwardOutput:
        b = len(batch)
        d = self.config.hidden_dim
        states = h_ts = h_text = text_seq = None
        if self.has_ts:
            states, h_ts = self.encode_timeseries(batch.ts, batch.lengths)
        if self.has_text:
            h_text, text_seq = self.fuse_text(batch.h_note, batch.h_rag)
        weights = {}
        if self.has_ts and self.has_text:
            t = batch.ts.shape[1]
            ts_mask = torch.arange(t).unsqueeze(0) < batch.lengths.unsqueeze(1)
            z_ts, z_text, weights = self.cross_attend(states, h_ts, text_seq, h_text, ts_mask)
        elif self.has_ts:
            z_ts, z_text = h_ts, h_ts.new_zeros(b, d)
        else:
            z_ts, z_text = h_text.new_zeros(b, d), h_text
        z, y_hat = self.fuse_and_predict(z_ts, z_text, generator, dropout_mask)
        return ForwardOutput(states, h_ts, h_text, text_seq, z_ts, z_text, z, y_hat, weights)

    def forward(self, batch: ModelBatch, generator=None, dropout_mask=None) -> torch.Tensor:
        return self.forward_details(batch, generator, dropout_mask).y_hat


def bce_loss(y_hat: torch.Tensor, y: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    if y_hat.numel() == 0:
        raise ValidationError("empty batch")
    p = y_hat.clamp(eps, 1.0 - eps)
    y = y.to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def gradients(model: FusionModel, batch: ModelBatch, dropout_mask=None) -> dict:
    """Exact gradients of mean BCE for every named parameter (autograd)."""
    if batch.y is None:
        raise ValidationError("batch has no labels")
    model.zero_grad(set_to_none=True)
    loss = bce_loss(model(batch, dropout_mask=dropout_mask), batch.y)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        grads[name] = g.detach().clone()
    return grads
