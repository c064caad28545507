"""Plain-numpy re-implementation of the fusion model's training-mode forward.

Written independently of the torch module (no shared code) so that it can
serve both as a forward-equality oracle and as the function differentiated
by central finite differences.

Every parameter carries a leading "copy" axis P, so one call evaluates P
parameter sets at once (each with its own batch-norm statistics). Arithmetic
follows the parameter dtype; the gradient check uses ``np.longdouble``.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def params_from_model(model, dtype=np.float64) -> dict[str, np.ndarray]:
    return {k: v.detach().double().numpy().astype(dtype) for k, v in model.named_parameters()}


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def _linear(x, p, name, bias=True):
    # x: [P, ..., in]; weight: [P, out, in]
    out = np.einsum("p...i,poi->p...o", x, p[name + ".weight"])
    if bias:
        b = p[name + ".bias"]
        out = out + b.reshape(b.shape[:1] + (1,) * (out.ndim - 2) + b.shape[1:])
    return out


def _batchnorm(x, p, name):
    # x: [P, B, d]; statistics per copy over the batch axis (biased variance)
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    gamma, beta = p[name + ".weight"][:, None], p[name + ".bias"][:, None]
    return (x - mean) / np.sqrt(var + x.dtype.type(BN_EPS)) * gamma + beta


def gru(x, lengths, p):
    # x: [P, B, T, F]
    n_copies, b, t, _ = x.shape
    w_ih, w_hh = p["gru.weight_ih"], p["gru.weight_hh"]
    d = w_hh.shape[-1]
    gi_all = np.einsum("pbtf,pgf->pbtg", x, w_ih) + p["gru.bias_ih"][:, None, None]
    h = np.zeros((n_copies, b, d), dtype=x.dtype)
    states = []
    for step in range(t):
        gi = gi_all[:, :, step]
        gh = np.einsum("pbd,pgd->pbg", h, w_hh) + p["gru.bias_hh"][:, None]
        r = _sigmoid(gi[..., :d] + gh[..., :d])
        u = _sigmoid(gi[..., d : 2 * d] + gh[..., d : 2 * d])
        n = np.tanh(gi[..., 2 * d :] + r * gh[..., 2 * d :])
        new = (1 - u) * n + u * h
        live = (step < lengths)[None, :, None]
        h = np.where(live, new, h)
        states.append(h)
    return np.stack(states, axis=2), h


def attention_block(query, keys, mask, p, name, n_heads):
    # query: [P, B, d]; keys: [P, B, L, d]; mask: [B, L] or None
    n_copies, b, l, d = keys.shape
    dk = d // n_heads
    q = _linear(query, p, name + ".W_q", bias=False).reshape(n_copies, b, n_heads, dk)
    k = _linear(keys, p, name + ".W_k", bias=False).reshape(n_copies, b, l, n_heads, dk)
    v = _linear(keys, p, name + ".W_v", bias=False).reshape(n_copies, b, l, n_heads, dk)
    logits = np.einsum("pbhk,pblhk->pbhl", q, k) / np.sqrt(q.dtype.type(dk))
    if mask is not None:
        logits = np.where(mask[None, :, None, :], logits, -np.inf)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    weights = e / e.sum(axis=-1, keepdims=True)
    out = np.einsum("pbhl,pblhk->pbhk", weights, v).reshape(n_copies, b, d)
    hidden = _batchnorm(query + out, p, name + ".norm_attn")
    ff = _linear(np.maximum(_linear(hidden, p, name + ".ff_in"), 0), p, name + ".ff_out")
    return _batchnorm(hidden + ff, p, name + ".norm_ff"), weights


def forward_copies(p, ts, lengths, h_note, h_rag, n_heads, keep_mask=None, dropout=0.0):
    """Predictions ``[P, B]`` of the full cross-fusion model (training mode)."""
    n_copies = max(v.shape[0] for v in p.values())
    p = {k: np.broadcast_to(v, (n_copies,) + v.shape[1:]) for k, v in p.items()}
    dtype = p["gru.weight_ih"].dtype

    def copies(a):
        a = np.asarray(a, dtype=dtype)
        return np.broadcast_to(a, (n_copies,) + a.shape)

    ts, h_note, h_rag = copies(ts), copies(h_note), copies(h_rag)
    lengths = np.asarray(lengths)
    dt = h_note.shape[-1]
    states, h_ts = gru(ts, lengths, p)
    w, bias = p["text_proj.weight"], p["text_proj.bias"][:, None]
    h_text = np.einsum("pbi,poi->pbo", np.concatenate([h_note, h_rag], axis=-1), w) + bias
    row_note = np.einsum("pbi,poi->pbo", h_note, w[..., :dt]) + bias
    row_rag = np.einsum("pbi,poi->pbo", h_rag, w[..., dt:]) + bias
    text_seq = np.stack([row_note, row_rag], axis=2)
    mask = np.arange(ts.shape[2])[None, :] < lengths[:, None]
    z_ts, _ = attention_block(h_text, states, mask, p, "ts_branch", n_heads)
    z_text, _ = attention_block(h_ts, text_seq, None, p, "text_branch", n_heads)
    z = np.maximum(_linear(np.concatenate([z_ts, z_text], axis=-1), p, "fuse"), 0)
    hidden = np.maximum(_linear(z, p, "head_in"), 0)
    if keep_mask is not None and dropout > 0:
        hidden = hidden * keep_mask[None] / (1 - dtype.type(dropout))
    return _sigmoid(_linear(hidden, p, "head_out"))[..., 0]


def forward(p, *args, **kwargs):
    """Single parameter set: ``p`` maps names to unbatched arrays; returns ``[B]``."""
    return forward_copies({k: v[None] for k, v in p.items()}, *args, **kwargs)[0]


def bce(y_hat, y, eps=1e-7):
    """Mean binary cross-entropy over the last axis."""
    y = np.asarray(y, dtype=y_hat.dtype)
    pc = np.clip(y_hat, eps, 1 - eps)
    return -(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean(axis=-1)


def finite_difference_gradients(loss_copies, params: dict, step: float = 1e-5) -> dict:
    """Central differences ``(L(w + h e_i) - L(w - h e_i)) / 2h`` for every
    scalar parameter.

    ``loss_copies`` maps a dict of ``[P, ...]`` parameter stacks to ``[P]``
    losses; all perturbations of one tensor are evaluated in a single call.
    """
    grads = {}
    base = {k: v[None] for k, v in params.items()}
    for name, value in params.items():
        n = value.size
        h = value.dtype.type(step)
        stack = np.repeat(value.reshape(1, -1), 2 * n, axis=0)
        idx = np.arange(n)
        stack[idx, idx] += h
        stack[n + idx, idx] -= h
        losses = loss_copies({**base, name: stack.reshape((2 * n,) + value.shape)})
        grads[name] = ((losses[:n] - losses[n:]) / (2 * h)).reshape(value.shape)
    return grads


GRAD_FLOOR = 1e-10


def gradient_check(seed: int, step: float = 1e-5) -> tuple[float, float]:
    """Compare autograd with central differences for a tiny model (d=8, T=5,
    F=3, two text rows) in training mode.

    Returns ``(max relative error, max absolute error among entries whose
    magnitude is below GRAD_FLOOR)``. Some gradients are exactly zero (a bias
    feeding straight into batch normalization, dead ReLU units); for those the
    difference quotient is pure roundoff, so they are judged absolutely.
    """
    import torch

    from oracles import max_relative_error
    from ragehr.model import FusionConfig, FusionModel, ModelBatch, gradients

    rng = np.random.default_rng(seed)
    b, t, f, dt = 4, 5, 3, 4
    ts = rng.normal(size=(b, t, f))
    lengths = np.array([5, 3, 5, 2])
    note, rag = rng.normal(size=(b, dt)), rng.normal(size=(b, dt))
    y = np.array([1.0, 0.0, 1.0, 0.0])
    keep = rng.random((b, 8)) >= 0.25
    model = FusionModel(FusionConfig(n_features=f, d_text=dt, hidden_dim=8, n_heads=2, dropout=0.25), seed=seed)
    model = model.double()
    model.train()
    batch = ModelBatch(torch.tensor(ts), torch.tensor(lengths), torch.tensor(note), torch.tensor(rag), torch.tensor(y))
    analytic = gradients(model, batch, dropout_mask=torch.tensor(keep))
    params = params_from_model(model, np.longdouble)
    numeric = finite_difference_gradients(
        lambda q: bce(forward_copies(q, ts, lengths, note, rag, 2, keep, 0.25), y), params, step
    )
    rel, tiny = 0.0, 0.0
    for k in params:
        a = analytic[k].numpy().astype(np.longdouble)
        n = numeric[k]
        rel = max(rel, max_relative_error(a, n, floor=GRAD_FLOOR))
        small = np.maximum(np.abs(a), np.abs(n)) < GRAD_FLOOR
        if small.any():
            tiny = max(tiny, float(np.abs(a - n)[small].max()))
    return rel, tiny
