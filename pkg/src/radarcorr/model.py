"""Correspondence network producing the (N+1) x (N+1) affinity matrix.

Data flow for a scan pair (A = previous, B = current)::

    padded A, B  --shared point MLP-->  emb_a, emb_b            (N+1) x E
    phi_a = decoder_a(encoder_a(emb_a), memory=emb_b)
    phi_b = decoder_b(encoder_b(emb_b), memory=emb_a)
    G = (emb_a + phi_a) @ (emb_b + phi_b)^T                      (N+1) x (N+1)

Row/column 0 is the zero point prepended to every cloud and stands for the
"no match" class. There are no positional encodings, so G is equivariant to
permutations of the real points.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .geometry import PaddedCloud


@dataclass
class ModelConfig:
    n_max: int
    embed_dim: int = 64
    mlp_hidden: tuple = (32, 64)
    tf_layers: int = 1
    heads: int = 4
    ff_dim: int = 128
    share_transformers: bool = False
    mask_padding: bool = False
    input_scale: float = 1.0

    def __post_init__(self):
        self.mlp_hidden = tuple(int(w) for w in self.mlp_hidden)
        sizes = [self.n_max, self.embed_dim, self.tf_layers, self.heads, self.ff_dim,
                 *self.mlp_hidden]
        if min(sizes) <= 0:
            raise ValueError("all ModelConfig sizes must be positive")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class AffinityMatrix:
    g: dc.Tensor
    valid_rows: int
    valid_cols: int

    def green(self) -> np.ndarray:
        """The L x K block of real-point scores."""
        return self.g.data[1:self.valid_rows + 1, 1:self.valid_cols + 1]


def _attn_params(store, prefix, e):
    for n in ("wq", "wk", "wv", "wo"):
        store.xavier(f"{prefix}.{n}", e, e)
        store.zeros(f"{prefix}.b{n[1]}", (e,))


def _ln_params(store, prefix, e):
    store.ones(f"{prefix}.gain", (e,))
    store.zeros(f"{prefix}.bias", (e,))


def _ff_params(store, prefix, e, f):
    store.xavier(f"{prefix}.w1", e, f)
    store.zeros(f"{prefix}.b1", (f,))
    store.xavier(f"{prefix}.w2", f, e)
    store.zeros(f"{prefix}.b2", (e,))


def init_params(config: ModelConfig, seed: int = 0) -> dc.ParamStore:
    """Xavier-uniform weights, zero biases, unit layer-norm gains."""
    store = dc.ParamStore(seed=seed)
    widths = [3, *config.mlp_hidden, config.embed_dim]
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        store.xavier(f"embed.w{i}", a, b)
        store.zeros(f"embed.b{i}", (b,))
    e, f = config.embed_dim, config.ff_dim
    nets = ("tf_a",) if config.share_transformers else ("tf_a", "tf_b")
    for net in nets:
        for layer in range(config.tf_layers):
            p = f"{net}.enc{layer}"
            _attn_params(store, f"{p}.self", e)
            _ln_params(store, f"{p}.ln1", e)
            _ff_params(store, f"{p}.ff", e, f)
            _ln_params(store, f"{p}.ln2", e)
        for layer in range(config.tf_layers):
            p = f"{net}.dec{layer}"
            _attn_params(store, f"{p}.self", e)
            _ln_params(store, f"{p}.ln1", e)
            _attn_params(store, f"{p}.cross", e)
            _ln_params(store, f"{p}.ln2", e)
            _ff_params(store, f"{p}.ff", e, f)
            _ln_params(store, f"{p}.ln3", e)
    return store


class CorrespondenceNet:
    """Forward pass of the affinity network over a ``ParamStore``."""

    def __init__(self, config: ModelConfig, params: dc.ParamStore | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    # -- building blocks --
    def _p(self, name):
        return self.params[name]

    def _mha(self, prefix, x_q, x_kv, key_mask):
        p = self._p
        q = dc.linear(x_q, p(f"{prefix}.wq"), p(f"{prefix}.bq"))
        k = dc.linear(x_kv, p(f"{prefix}.wk"), p(f"{prefix}.bk"))
        v = dc.linear(x_kv, p(f"{prefix}.wv"), p(f"{prefix}.bv"))
        return dc.attention(q, k, v, self.config.heads,
                            p(f"{prefix}.wo"), p(f"{prefix}.bo"), key_mask)

    def _ln(self, prefix, x):
        return dc.layer_norm(x, self._p(f"{prefix}.gain"), self._p(f"{prefix}.bias"))

    def _ff(self, prefix, x):
        p = self._p
        h = dc.relu(dc.linear(x, p(f"{prefix}.w1"), p(f"{prefix}.b1")))
        return dc.linear(h, p(f"{prefix}.w2"), p(f"{prefix}.b2"))

    def _net(self, which: str) -> str:
        return "tf_a" if self.config.share_transformers else which

    # -- public stages --
    def embed(self, points) -> dc.Tensor:
        """Shared per-point MLP: (..., N+1, 3) -> (..., N+1, E)."""
        x = dc.Tensor(np.asarray(points, dtype=np.float64) * self.config.input_scale)
        n_layers = len(self.config.mlp_hidden) + 1
        for i in range(n_layers):
            x = dc.linear(x, self._p(f"embed.w{i}"), self._p(f"embed.b{i}"))
            if i < n_layers - 1:
                x = dc.relu(x)
        return x

    def transform(self, which: str, own: dc.Tensor, other: dc.Tensor,
                  own_mask=None, other_mask=None) -> dc.Tensor:
        """Encoder on ``own``, then a decoder cross-attending ``other``'s input embeddings."""
        net = self._net(which)
        x = own
        for layer in range(self.config.tf_layers):
            p = f"{net}.enc{layer}"
            x = self._ln(f"{p}.ln1", dc.add(x, self._mha(f"{p}.self", x, x, own_mask)))
            x = self._ln(f"{p}.ln2", dc.add(x, self._ff(f"{p}.ff", x)))
        y = x
        for layer in range(self.config.tf_layers):
            p = f"{net}.dec{layer}"
            y = self._ln(f"{p}.ln1", dc.add(y, self._mha(f"{p}.self", y, y, own_mask)))
            y = self._ln(f"{p}.ln2", dc.add(y, self._mha(f"{p}.cross", y, other, other_mask)))
            y = self._ln(f"{p}.ln3", dc.add(y, self._ff(f"{p}.ff", y)))
        return y

    def cross_transform(self, emb_a, emb_b, mask_a=None, mask_b=None):
        phi_a = self.transform("tf_a", emb_a, emb_b, mask_a, mask_b)
        phi_b = self.transform("tf_b", emb_b, emb_a, mask_b, mask_a)
        return phi_a, phi_b

    def forward(self, points_a, points_b, count_a=None, count_b=None) -> dc.Tensor:
        """Affinity logits for padded point arrays of shape (..., N+1, 3)."""
        points_a = np.asarray(points_a, dtype=np.float64)
        points_b = np.asarray(points_b, dtype=np.float64)
        if points_a.shape != points_b.shape:
            raise ValueError(f"padded shapes differ: {points_a.shape} vs {points_b.shape}")
        if points_a.shape[-2] != self.config.n_max + 1:
            raise ValueError(f"expected {self.config.n_max + 1} rows, got {points_a.shape[-2]}")
        mask_a = mask_b = None
        if self.config.mask_padding and count_a is not None:
            mask_a = _valid_mask(count_a, self.config.n_max)
            mask_b = _valid_mask(count_b, self.config.n_max)
        emb_a = self.embed(points_a)
        emb_b = self.embed(points_b)
        phi_a, phi_b = self.cross_transform(emb_a, emb_b, mask_a, mask_b)
        sigma_a = dc.add(emb_a, phi_a)
        sigma_b = dc.add(emb_b, phi_b)
        return dc.matmul(sigma_a, dc.transpose(sigma_b))

    def affinity(self, padded_a: PaddedCloud, padded_b: PaddedCloud) -> AffinityMatrix:
        if padded_a.n_max != padded_b.n_max:
            raise ValueError(f"clouds padded to different N ({padded_a.n_max}, {padded_b.n_max})")
        g = self.forward(padded_a.matrix, padded_b.matrix,
                         padded_a.valid_count, padded_b.valid_count)
        return AffinityMatrix(g, padded_a.valid_count, padded_b.valid_count)


def _valid_mask(counts, n_max):
    counts = np.atleast_1d(np.asarray(counts))
    idx = np.arange(n_max + 1)
    mask = idx[None, :] <= counts[:, None]
    return mask if mask.shape[0] > 1 else mask[0]


def dot_affinity(sigma_a: np.ndarray, sigma_b: np.ndarray) -> np.ndarray:
    """G from final embeddings, for checking the last stage in isolation."""
    return dc.matmul(dc.Tensor(sigma_a), dc.transpose(dc.Tensor(sigma_b))).data
