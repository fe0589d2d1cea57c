"""Shared-backbone transformer encoder with two parallel branches.

A backbone stack produces low-level states S; a lexicon branch and a dense
branch each run further layers on S, independently of one another. Post-norm
layers with GELU FFN (4x hidden by default) and learned absolute position
embeddings. All math runs through the autodiff tape, so analytic parameter
gradients come from ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tensor, embedding, layer_norm, softmax

SSB, GLE, LDE = "ssb", "gle", "lde"


class ConfigError(ValueError):
    pass


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    hidden_size: int = 64
    heads: int = 4
    layers_ssb: int = 1
    layers_gle: int = 1
    layers_lde: int = 1
    ffn_size: int = 256
    max_len: int = 64
    vocab_size: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size % self.heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by heads {self.heads}")
        if min(self.layers_ssb, self.layers_gle, self.layers_lde) < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.layers_ssb + self.layers_gle < 1 or self.layers_ssb + self.layers_lde < 1:
            raise ConfigError("each branch path needs at least one layer")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutputs:
    S: Tensor
    L: Tensor
    D: Tensor


def _uniform(rng, shape):
    bound = np.sqrt(6.0 / (shape[0] + shape[-1]))
    return rng.uniform(-bound, bound, size=shape)


def _layer_param_names(group: str, layer: int):
    p = f"{group}.{layer}."
    return p


def init_params(config: EncoderConfig) -> dict:
    """Deterministic parameter init; returns name -> Tensor(requires_grad)."""
    rng = np.random.default_rng(config.seed)
    H, F = config.hidden_size, config.ffn_size
    params = {}

    def add(name, value):
        params[name] = Tensor(value, requires_grad=True)

    add("emb.tok", _uniform(rng, (config.vocab_size, H)))
    add("emb.pos", _uniform(rng, (config.max_len, H)))
    add("emb.ln_g", np.ones(H))
    add("emb.ln_b", np.zeros(H))

    for group, n_layers in ((SSB, config.layers_ssb), (GLE, config.layers_gle),
                            (LDE, config.layers_lde)):
        for layer in range(n_layers):
            p = _layer_param_names(group, layer)
            for name in ("wq", "wk", "wv", "wo"):
                add(p + name, _uniform(rng, (H, H)))
                add(p + name.replace("w", "b"), np.zeros(H))
            add(p + "ln1_g", np.ones(H))
            add(p + "ln1_b", np.zeros(H))
            add(p + "w1", _uniform(rng, (H, F)))
            add(p + "b1", np.zeros(F))
            add(p + "w2", _uniform(rng, (F, H)))
            add(p + "b2", np.zeros(H))
            add(p + "ln2_g", np.ones(H))
            add(p + "ln2_b", np.zeros(H))
    return params


def _attention(x: Tensor, params: dict, prefix: str, heads: int, attn_bias):
    B, N, H = x.shape
    dh = H // heads

    def proj(name):
        y = x @ params[prefix + "w" + name] + params[prefix + "b" + name]
        return y.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = proj("q"), proj("k"), proj("v")
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)) + attn_bias
    att = softmax(scores, axis=-1)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, N, H)
    return ctx @ params[prefix + "wo"] + params[prefix + "bo"]


def _transformer_layer(x: Tensor, params: dict, prefix: str, heads: int, attn_bias):
    a = _attention(x, params, prefix, heads, attn_bias)
    x = layer_norm(x + a, params[prefix + "ln1_g"], params[prefix + "ln1_b"])
    f = (x @ params[prefix + "w1"] + params[prefix + "b1"]).gelu() \
        @ params[prefix + "w2"] + params[prefix + "b2"]
    return layer_norm(x + f, params[prefix + "ln2_g"], params[prefix + "ln2_b"])


def _run_stack(x: Tensor, params: dict, group: str, n_layers: int, heads: int,
               attn_bias) -> Tensor:
    for layer in range(n_layers):
        x = _transformer_layer(x, params, _layer_param_names(group, layer),
                               heads, attn_bias)
    return x


def forward(params: dict, config: EncoderConfig, token_ids, attention_mask) -> EncoderOutputs:
    """Run backbone then both branches over a padded batch.

    token_ids, attention_mask: [B, N] integer arrays.
    """
    ids = np.asarray(token_ids, dtype=np.intp)
    mask = np.asarray(attention_mask, dtype=np.float64)
    if ids.ndim == 1:
        ids = ids[None, :]
        mask = mask[None, :]
    B, N = ids.shape
    if N > config.max_len:
        raise LengthError(f"sequence length {N} exceeds max_len {config.max_len}")
    if ids.max() >= config.vocab_size:
        raise ValueError("token id out of range for vocab_size")

    # additive attention bias: padded key positions get a large negative score
    attn_bias = ((mask[:, None, None, :] - 1.0) * 1e9)

    x = embedding(params["emb.tok"], ids) + params["emb.pos"][np.arange(N)]
    x = layer_norm(x, params["emb.ln_g"], params["emb.ln_b"])

    S = _run_stack(x, params, SSB, config.layers_ssb, config.heads, attn_bias)
    L = _run_stack(S, params, GLE, config.layers_gle, config.heads, attn_bias)
    D = _run_stack(S, params, LDE, config.layers_lde, config.heads, attn_bias)
    return EncoderOutputs(S=S, L=L, D=D)


def backward(params: dict, config: EncoderConfig, token_ids, attention_mask,
             grad_S=None, grad_L=None, grad_D=None) -> dict:
    """Parameter gradients for upstream gradients on any of S/L/D.

    Returns name -> ndarray, zero for parameters the outputs do not use.
    """
    for p in params.values():
        p.grad = None
    out = forward(params, config, token_ids, attention_mask)
    total = None
    for tensor, grad in ((out.S, grad_S), (out.L, grad_L), (out.D, grad_D)):
        if grad is None:
            continue
        term = (tensor * Tensor(np.asarray(grad, dtype=np.float64))).sum()
        total = term if total is None else total + term
    if total is not None:
        total.backward()
    return {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def parameter_count(config: EncoderConfig) -> int:
    return sum(int(np.prod(p.data.shape)) for p in init_params(config).values())
