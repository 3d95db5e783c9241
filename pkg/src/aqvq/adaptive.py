"""Adaptive selection among codebooks of different shapes.

All candidate codebooks share one capacity: the product of codebook
size and codeword dimension is held constant while the split varies.
Every incoming row is quantized by every candidate, an attention score
over learned per-codebook keys ranks the candidates, and a hard
Gumbel-Softmax draw picks one per row while keeping the soft scores in
the gradient path. The combination is a batched matrix product of the
one-hot scores with the stacked candidate outputs, so the forward pass
reproduces the selected candidate exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import (
    Tensor,
    add,
    bmm,
    concat,
    matmul,
    mul_scalar,
    reshape,
    softmax,
    transpose,
)
from .tensor import straight_through as _straight_through
from .tensor import affine
from .vq import CodebookSpec, QuantizerLayer, QuantizeOutput, quantize

__all__ = [
    "CodebookPool",
    "SelectionRecord",
    "AdaptiveForward",
    "enumerate_structures",
    "attention_logits",
    "gumbel_softmax",
    "temperature",
    "adaptive_quantize",
    "adaptive_forward",
    "usage_histogram",
]


def enumerate_structures(w: int) -> list[CodebookSpec]:
    """All power-of-two splits [n, d] with n * d = w and n > d, ascending n."""
    if w < 1 or (w & (w - 1)) != 0:
        raise ConfigError(f"capacity must be a power of two, got {w}")
    specs = []
    d = 1
    while d * d < w:
        specs.append(CodebookSpec(w // d, d))
        d *= 2
    return sorted(specs, key=lambda s: s.n)


@dataclass
class SelectionRecord:
    """Hard selection counts for one training step."""

    step: int
    counts: np.ndarray  # length m, selections per codebook
    temperature: float


class CodebookPool:
    """m independent quantizer layers plus the attention that ranks them.

    Each layer owns its codebook and projections; nothing is shared.
    ``keys``/``values`` hold one learned H-vector per codebook. Scoring
    runs multi-head attention of the projected query against the
    projected keys; per-head outputs over the values are mapped to m
    logits by a learned output map. With ``scores_qk_only`` the values
    are dropped and the raw per-head compatibility scores are averaged
    instead (with identity projections and one head this reduces to
    q . k / sqrt(H)).
    """

    def __init__(self, quantizers, keys, values, wq, wk, wv, w_out, b_out,
                 num_heads: int, scores_qk_only: bool = False):
        self.quantizers: list[QuantizerLayer] = list(quantizers)
        self.keys = keys
        self.values = values
        self.wq = list(wq)  # one H x (H/heads) map per head
        self.wk = list(wk)
        self.wv = list(wv)
        self.w_out = w_out  # H x m
        self.b_out = b_out
        self.num_heads = num_heads
        self.scores_qk_only = scores_qk_only

    @classmethod
    def create(cls, specs, num_hiddens: int, rng: np.random.Generator,
               num_heads: int = 2, gamma: float = 0.99, laplace_eps: float = 1e-5,
               trainable_codebooks: bool = False, scores_qk_only: bool = False,
               identity_attention: bool = False, dtype=np.float64) -> "CodebookPool":
        specs = list(specs)
        if not specs:
            raise ConfigError("codebook pool needs at least one structure")
        if num_hiddens % num_heads != 0:
            raise ConfigError(
                f"num_heads={num_heads} must divide num_hiddens={num_hiddens}"
            )
        m = len(specs)
        quantizers = [
            QuantizerLayer.create(spec, num_hiddens, rng, gamma=gamma,
                                  laplace_eps=laplace_eps,
                                  trainable_codebook=trainable_codebooks, dtype=dtype)
            for spec in specs
        ]
        scale = 1.0 / np.sqrt(num_hiddens)

        def param(*shape):
            return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype),
                          requires_grad=True)

        keys = param(m, num_hiddens)
        values = param(m, num_hiddens)
        head_dim = num_hiddens // num_heads
        if identity_attention:
            if num_heads != 1:
                raise ConfigError("identity attention projections require one head")
            eye = np.eye(num_hiddens, dtype=dtype)
            wq = [Tensor(eye.copy(), requires_grad=True)]
            wk = [Tensor(eye.copy(), requires_grad=True)]
            wv = [Tensor(eye.copy(), requires_grad=True)]
        else:
            wq = [param(num_hiddens, head_dim) for _ in range(num_heads)]
            wk = [param(num_hiddens, head_dim) for _ in range(num_heads)]
            wv = [param(num_hiddens, head_dim) for _ in range(num_heads)]
        w_out = param(num_hiddens, m)
        b_out = Tensor(np.zeros(m, dtype=dtype), requires_grad=True)
        return cls(quantizers, keys, values, wq, wk, wv, w_out, b_out,
                   num_heads=num_heads, scores_qk_only=scores_qk_only)

    @property
    def m(self) -> int:
        return len(self.quantizers)

    @property
    def num_hiddens(self) -> int:
        return self.keys.data.shape[1]

    @property
    def specs(self) -> list[CodebookSpec]:
        return [q.spec for q in self.quantizers]

    def parameters(self, prefix: str = "pool.") -> dict:
        params = {f"{prefix}keys": self.keys, f"{prefix}values": self.values}
        for h in range(self.num_heads):
            params[f"{prefix}wq{h}"] = self.wq[h]
            params[f"{prefix}wk{h}"] = self.wk[h]
            params[f"{prefix}wv{h}"] = self.wv[h]
        params[f"{prefix}w_out"] = self.w_out
        params[f"{prefix}b_out"] = self.b_out
        for i, q in enumerate(self.quantizers):
            params.update(q.parameters(prefix=f"{prefix}q{i}."))
        return params


def attention_logits(q: Tensor, pool: CodebookPool) -> Tensor:
    """Score each row of ``q`` against the pool's m codebooks.

    Scaled dot-product attention per head between projected queries and
    projected keys. The default route softmax-weights the projected
    values and maps the concatenated head outputs to m logits;
    ``scores_qk_only`` averages the raw compatibility scores instead.
    """
    if q.data.ndim != 2:
        raise DimensionError(f"queries must be T x H, got {q.data.shape}")
    if q.data.shape[1] != pool.num_hiddens:
        raise DimensionError(
            f"query width {q.data.shape[1]} != pool width {pool.num_hiddens}"
        )
    per_head_scores = []
    per_head_mixed = []
    for h in range(pool.num_heads):
        qh = matmul(q, pool.wq[h])
        kh = matmul(pool.keys, pool.wk[h])
        scale = 1.0 / np.sqrt(qh.data.shape[1])
        scores = mul_scalar(matmul(qh, transpose(kh)), scale)  # T x m
        per_head_scores.append(scores)
        if not pool.scores_qk_only:
            vh = matmul(pool.values, pool.wv[h])
            per_head_mixed.append(matmul(softmax(scores), vh))  # T x head_dim
    if pool.scores_qk_only:
        total = per_head_scores[0]
        for scores in per_head_scores[1:]:
            total = add(total, scores)
        return mul_scalar(total, 1.0 / pool.num_heads)
    mixed = per_head_mixed[0] if len(per_head_mixed) == 1 else concat(per_head_mixed, axis=1)
    return affine(mixed, pool.w_out, pool.b_out)


def gumbel_softmax(logits: Tensor, tau: float, hard: bool = True,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Gumbel-Softmax over the last axis of T x m logits.

    Soft mode returns ``softmax((logits + g) / tau)`` with standard
    Gumbel noise ``g`` (no noise when ``rng`` is None). Hard mode emits
    the exact one-hot argmax of the soft distribution while routing
    gradients through the soft scores.
    """
    if tau <= 0:
        raise ConfigError(f"gumbel temperature must be positive, got {tau}")
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be T x m, got {logits.data.shape}")
    perturbed = logits
    if rng is not None:
        noise = rng.gumbel(size=logits.data.shape)
        perturbed = add(logits, Tensor(noise))
    soft = softmax(mul_scalar(perturbed, 1.0 / tau))
    if not hard:
        return soft
    onehot = np.zeros_like(soft.data)
    onehot[np.arange(soft.data.shape[0]), soft.data.argmax(axis=1)] = 1.0
    return _straight_through(soft, Tensor(onehot))


def temperature(iterations: int, batch_index: int, mode: str) -> float:
    """Selection temperature schedule: linear countdown in training, 1 at validation."""
    if mode not in ("training", "validation"):
        raise ConfigError(f"unknown temperature mode {mode!r}")
    if batch_index < 0:
        raise ContractError(f"batch index must be nonnegative, got {batch_index}")
    if mode == "validation":
        return 1.0
    if batch_index > iterations:
        warnings.warn(
            f"batch index {batch_index} beyond schedule end {iterations}; temperature clamped to 1",
            stacklevel=2,
        )
        return 1.0
    return float(iterations - batch_index) + 1.0


@dataclass
class AdaptiveForward:
    """Everything produced by one adaptive quantization pass."""

    z_q: Tensor                      # T x H combined output
    extra_loss: Tensor               # mean of the m per-codebook vq losses
    record: SelectionRecord
    outputs: list[QuantizeOutput] = field(default_factory=list)
    projected: list[np.ndarray] = field(default_factory=list)  # per-codebook T x D_i rows


def adaptive_forward(z_e: Tensor, pool: CodebookPool, tau: float,
                     alpha: float = 0.25, beta: float = 1.0,
                     rng: np.random.Generator | None = None,
                     hard: bool = True, step: int = 0) -> AdaptiveForward:
    """Quantize rows through every codebook and combine by learned selection.

    Exposes the per-codebook outputs and projected rows so training can
    apply EMA updates; ``adaptive_quantize`` is the plain interface.
    """
    if pool.m == 0:
        raise ConfigError("cannot quantize with an empty codebook pool")
    if z_e.data.ndim != 2:
        raise DimensionError(f"adaptive quantization expects T x H rows, got {z_e.data.shape}")
    t_rows = z_e.data.shape[0]
    candidates = []
    outputs = []
    projected = []
    losses = []
    for layer in pool.quantizers:
        z_d = layer.project_in(z_e)
        out = quantize(z_d, layer.codebook, alpha=alpha, beta=beta)
        back = layer.project_out(out.z_q)
        candidates.append(reshape(back, (t_rows, 1, pool.num_hiddens)))
        outputs.append(out)
        projected.append(z_d.data)
        losses.append(out.vq_loss)
    z_s = candidates[0] if pool.m == 1 else concat(candidates, axis=1)  # T x m x H
    total = losses[0]
    for loss in losses[1:]:
        total = add(total, loss)
    extra_loss = mul_scalar(total, 1.0 / pool.m)
    logits = attention_logits(z_e, pool)
    scores = gumbel_softmax(logits, tau, hard=hard, rng=rng)
    chosen = scores.data.argmax(axis=1)
    counts = np.bincount(chosen, minlength=pool.m)
    combined = bmm(reshape(scores, (t_rows, 1, pool.m)), z_s)
    z_q = reshape(combined, (t_rows, pool.num_hiddens))
    record = SelectionRecord(step=step, counts=counts, temperature=float(tau))
    return AdaptiveForward(z_q=z_q, extra_loss=extra_loss, record=record,
                           outputs=outputs, projected=projected)


def adaptive_quantize(z_e: Tensor, pool: CodebookPool, tau: float,
                      alpha: float = 0.25, beta: float = 1.0,
                      rng: np.random.Generator | None = None,
                      step: int = 0):
    """Adaptive quantization of T x H rows; returns (z_q, extra_loss, record)."""
    result = adaptive_forward(z_e, pool, tau, alpha=alpha, beta=beta, rng=rng,
                              hard=True, step=step)
    return result.z_q, result.extra_loss, result.record


def usage_histogram(records, window: int) -> list[np.ndarray]:
    """Normalized selection frequencies over consecutive windows of records."""
    if window < 1:
        raise ContractError(f"window must be at least 1, got {window}")
    records = list(records)
    if not records:
        return []
    out = []
    for start in range(0, len(records), window):
        chunk = records[start : start + window]
        counts = np.sum([np.asarray(r.counts, dtype=np.float64) for r in chunk], axis=0)
        total = counts.sum()
        if total <= 0:
            raise ContractError("selection records contain no selections")
        out.append(counts / total)
    return out
