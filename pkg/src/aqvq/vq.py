"""Fixed-codebook vector quantization.

A codebook is an N x D matrix of codewords. Continuous rows are
assigned to their nearest codeword, forwarded through a
straight-through connection, and pulled together by a pair of
commitment terms. Codewords learn either by gradient descent on the
codebook term or by exponential-moving-average updates toward the
vectors assigned to them.

``QuantizerLayer`` wraps a codebook together with the affine maps that
carry hidden activations into and out of the codeword dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, affine, detach, gather_rows, mse, mul_scalar
from .tensor import straight_through as _straight_through

__all__ = [
    "CodebookSpec",
    "Codebook",
    "QuantizeOutput",
    "QuantizerLayer",
    "nearest_indices",
    "quantize",
    "straight_through",
    "ema_update",
]


@dataclass(frozen=True)
class CodebookSpec:
    """Codebook structure: ``n`` codewords of dimension ``d``, with n > d."""

    n: int
    d: int

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ConfigError(f"codebook structure needs positive sizes, got [{self.n},{self.d}]")
        if self.n <= self.d:
            raise ConfigError(
                f"codebook size must exceed codeword dimension, got [{self.n},{self.d}]"
            )

    @property
    def capacity(self) -> int:
        return self.n * self.d

    @property
    def label(self) -> str:
        return f"[{self.n},{self.d}]"


class Codebook:
    """N x D codeword matrix plus EMA accumulators.

    ``embeddings`` is a Tensor so the codebook can participate in the
    graph (gradient-trained codebooks set ``trainable=True``). The EMA
    accumulators start consistent with the initial codewords: cluster
    sizes at one and sums equal to the codewords, so rows that never
    receive assignments keep their value instead of collapsing.
    """

    def __init__(self, embeddings, gamma: float = 0.99, laplace_eps: float = 1e-5,
                 trainable: bool = False):
        arr = np.asarray(embeddings)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"codebook must be a matrix, got shape {arr.shape}")
        if not 0.0 < gamma < 1.0:
            raise ConfigError(f"EMA decay must lie in (0,1), got {gamma}")
        if laplace_eps <= 0:
            raise ConfigError(f"laplace_eps must be positive, got {laplace_eps}")
        self.embeddings = Tensor(arr.copy(), requires_grad=trainable)
        self.gamma = float(gamma)
        self.laplace_eps = float(laplace_eps)
        self.ema_cluster_size = np.ones(arr.shape[0], dtype=np.float64)
        self.ema_embed_sum = arr.copy()

    @classmethod
    def random(cls, n: int, d: int, rng: np.random.Generator, gamma: float = 0.99,
               laplace_eps: float = 1e-5, trainable: bool = False,
               dtype=np.float64) -> "Codebook":
        # std 1/sqrt(d) keeps expected codeword norm at 1 across structures
        emb = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n, d)).astype(dtype)
        return cls(emb, gamma=gamma, laplace_eps=laplace_eps, trainable=trainable)

    @property
    def n(self) -> int:
        return self.embeddings.data.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.data.shape[1]


@dataclass
class QuantizeOutput:
    """Result of quantizing a batch of rows against one codebook."""

    z_q: Tensor              # T x D, straight-through output
    indices: np.ndarray      # T, selected codeword per row
    codebook_loss: Tensor    # ||sg[z] - z_q||^2, mean over elements
    commitment_loss: Tensor  # ||z - sg[z_q]||^2, mean over elements
    vq_loss: Tensor          # beta * (codebook + alpha * commitment)


def _rows_of(z) -> np.ndarray:
    arr = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected T x D rows, got shape {arr.shape}")
    return arr


def nearest_indices(z_rows, codebook: Codebook) -> np.ndarray:
    """Index of the closest codeword per row; ties go to the lowest index."""
    z = _rows_of(z_rows)
    emb = codebook.embeddings.data
    if z.shape[1] != emb.shape[1]:
        raise DimensionError(
            f"rows have dimension {z.shape[1]}, codebook has {emb.shape[1]}"
        )
    code_sq = (emb * emb).sum(axis=1)
    out = np.empty(z.shape[0], dtype=np.int64)
    # chunk the T x N distance matrix to keep memory bounded for large N
    block = max(1, int(4_000_000 // max(1, emb.shape[0])))
    for start in range(0, z.shape[0], block):
        zb = z[start : start + block]
        d2 = (zb * zb).sum(axis=1)[:, None] - 2.0 * (zb @ emb.T) + code_sq[None, :]
        out[start : start + block] = np.argmin(d2, axis=1)
    return out


def quantize(z_e: Tensor, codebook: Codebook, alpha: float = 0.25,
             beta: float = 1.0) -> QuantizeOutput:
    """Quantize rows of ``z_e`` and form the commitment losses.

    Losses reduce as means over all elements so values are comparable
    across codeword dimensions. The returned ``z_q`` carries the exact
    selected codeword values forward and the straight-through gradient
    back to ``z_e``.
    """
    if alpha < 0 or beta < 0:
        raise ConfigError(f"loss weights must be nonnegative, got alpha={alpha} beta={beta}")
    rows = _rows_of(z_e)
    if rows.shape[0] == 0:
        raise ContractError("cannot quantize an empty batch")
    idx = nearest_indices(rows, codebook)
    selected = gather_rows(codebook.embeddings, idx)
    codebook_loss = mse(detach(z_e), selected)
    commitment_loss = mse(z_e, detach(selected))
    vq_loss = mul_scalar(codebook_loss + mul_scalar(commitment_loss, alpha), beta)
    z_q = _straight_through(z_e, selected)
    return QuantizeOutput(
        z_q=z_q,
        indices=idx,
        codebook_loss=codebook_loss,
        commitment_loss=commitment_loss,
        vq_loss=vq_loss,
    )


def straight_through(z_e: Tensor, z_q: Tensor) -> Tensor:
    """Pass ``z_q`` values forward, copying the output gradient onto ``z_e``."""
    return _straight_through(z_e, z_q)


def ema_update(codebook: Codebook, z_rows, indices, paper_form: bool = False) -> None:
    """Move codewords toward the vectors assigned to them.

    Default form: decay-weighted running counts and sums per codeword,
    with Laplace smoothing of the cluster sizes over the batch total,
    then ``embeddings = embed_sum / smoothed_size``. With
    ``paper_form=True`` each assigned vector instead directly drags its
    codeword: ``new = (1 - gamma) * old + gamma * z``, applied per
    assigned row in order.
    """
    z = _rows_of(z_rows)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (z.shape[0],):
        raise DimensionError(f"{z.shape[0]} rows but {idx.shape} indices")
    n_codes = codebook.n
    if idx.size and (idx.min() < 0 or idx.max() >= n_codes):
        raise ContractError("assignment index out of range")
    if z.shape[1] != codebook.d:
        raise DimensionError(f"rows have dimension {z.shape[1]}, codebook has {codebook.d}")
    gamma = codebook.gamma
    emb = codebook.embeddings.data

    if paper_form:
        for row, j in zip(z, idx):
            emb[j] = (1.0 - gamma) * emb[j] + gamma * row
        return

    counts = np.bincount(idx, minlength=n_codes).astype(np.float64)
    sums = np.zeros_like(emb)
    np.add.at(sums, idx, z)
    codebook.ema_cluster_size *= gamma
    codebook.ema_cluster_size += (1.0 - gamma) * counts
    codebook.ema_embed_sum *= gamma
    codebook.ema_embed_sum += (1.0 - gamma) * sums
    total = codebook.ema_cluster_size.sum()
    smoothed = (
        (codebook.ema_cluster_size + codebook.laplace_eps)
        / (total + n_codes * codebook.laplace_eps)
        * total
    )
    emb[...] = codebook.ema_embed_sum / smoothed[:, None]


class QuantizerLayer:
    """A codebook plus the affine maps into and out of its dimension.

    ``project_in`` carries T x H hidden rows to the codeword dimension
    D, ``project_out`` carries quantized rows back to H. Both maps are
    learned; calling the layer runs the full project/quantize/project
    pipeline.
    """

    def __init__(self, codebook: Codebook, w_in: Tensor, b_in: Tensor,
                 w_out: Tensor, b_out: Tensor):
        self.codebook = codebook
        self.w_in = w_in
        self.b_in = b_in
        self.w_out = w_out
        self.b_out = b_out

    @classmethod
    def create(cls, spec: CodebookSpec, num_hiddens: int, rng: np.random.Generator,
               gamma: float = 0.99, laplace_eps: float = 1e-5,
               trainable_codebook: bool = False, identity_init: bool = False,
               dtype=np.float64) -> "QuantizerLayer":
        codebook = Codebook.random(spec.n, spec.d, rng, gamma=gamma,
                                   laplace_eps=laplace_eps, trainable=trainable_codebook,
                                   dtype=dtype)
        if identity_init:
            if spec.d != num_hiddens:
                raise ConfigError("identity projections need matching widths")
            w_in = np.eye(num_hiddens, dtype=dtype)
            w_out = np.eye(num_hiddens, dtype=dtype)
        else:
            w_in = rng.normal(0.0, 1.0 / np.sqrt(num_hiddens),
                              size=(num_hiddens, spec.d)).astype(dtype)
            w_out = rng.normal(0.0, 1.0 / np.sqrt(spec.d),
                               size=(spec.d, num_hiddens)).astype(dtype)
        return cls(
            codebook=codebook,
            w_in=Tensor(w_in, requires_grad=True),
            b_in=Tensor(np.zeros(spec.d, dtype=dtype), requires_grad=True),
            w_out=Tensor(w_out, requires_grad=True),
            b_out=Tensor(np.zeros(num_hiddens, dtype=dtype), requires_grad=True),
        )

    @property
    def spec(self) -> CodebookSpec:
        return CodebookSpec(self.codebook.n, self.codebook.d)

    def project_in(self, hidden: Tensor) -> Tensor:
        return affine(hidden, self.w_in, self.b_in)

    def project_out(self, quantized: Tensor) -> Tensor:
        return affine(quantized, self.w_out, self.b_out)

    def parameters(self, prefix: str = "") -> dict:
        params = {
            f"{prefix}w_in": self.w_in,
            f"{prefix}b_in": self.b_in,
            f"{prefix}w_out": self.w_out,
            f"{prefix}b_out": self.b_out,
        }
        if self.codebook.embeddings.requires_grad:
            params[f"{prefix}codebook"] = self.codebook.embeddings
        return params

    def __call__(self, hidden: Tensor, alpha: float = 0.25, beta: float = 1.0):
        """Quantize hidden rows; returns (back-projected rows, QuantizeOutput)."""
        z_d = self.project_in(hidden)
        out = quantize(z_d, self.codebook, alpha=alpha, beta=beta)
        return self.project_out(out.z_q), out
