"""Transformer encoder over group tokens and the per-pixel feature reduction.

The encoder is a stack of attention + MLP blocks (pre-norm by default, with a
post-norm toggle) followed by a final layer normalization. Every pixel is its
own short token sequence, one token per surviving channel group; the head
consumes the mean over that sequence.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .channels import DATA_GROUPS
from .errors import ConfigError, NumericError
from .params import ParamStore
from .rng import STREAM_INIT, make_rng
from .tokenizer import NormStats, build_encoding_params, tokenize_batch_bwd, tokenize_batch_fwd

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 8
    mlp_ratio: int = 4
    block_variant: str = "pre_norm"  # or "post_norm"
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.block_variant not in ("pre_norm", "post_norm"):
            raise ConfigError(f"unknown block variant {self.block_variant!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = {k: d[k] for k in
                  ("d_model", "n_layers", "n_heads", "mlp_ratio", "block_variant", "seed")
                  if k in d}
        return cls(**fields)


def build_params(cfg: ModelConfig) -> ParamStore:
    """All model tensors, seeded; uniform +-1/sqrt(fan_in) weights, zero biases."""
    rng = make_rng(cfg.seed, STREAM_INIT)
    store = ParamStore()
    build_encoding_params(store, cfg.d_model, rng)
    d = cfg.d_model
    hidden = d * cfg.mlp_ratio

    def lin(name, n_in, n_out):
        bound = 1.0 / np.sqrt(n_in)
        store.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
        store.add(f"{name}.b", np.zeros(n_out))

    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        store.add(f"{p}.ln1.gamma", np.ones(d))
        store.add(f"{p}.ln1.beta", np.zeros(d))
        lin(f"{p}.attn.wq", d, d)
        # no key bias: softmax row-shift invariance would zero its gradient
        bound = 1.0 / np.sqrt(d)
        store.add(f"{p}.attn.wk.w", rng.uniform(-bound, bound, size=(d, d)))
        lin(f"{p}.attn.wv", d, d)
        lin(f"{p}.attn.wo", d, d)
        store.add(f"{p}.ln2.gamma", np.ones(d))
        store.add(f"{p}.ln2.beta", np.zeros(d))
        lin(f"{p}.mlp.fc1", d, hidden)
        lin(f"{p}.mlp.fc2", hidden, d)
    store.add("final_ln.gamma", np.ones(d))
    store.add("final_ln.beta", np.zeros(d))
    lin("head", d, 1)
    return store


def _attn_weights(params: ParamStore, layer: int) -> dict:
    p = f"layers.{layer}.attn"
    return {"wq": params[f"{p}.wq.w"], "bq": params[f"{p}.wq.b"],
            "wk": params[f"{p}.wk.w"],
            "wv": params[f"{p}.wv.w"], "bv": params[f"{p}.wv.b"],
            "wo": params[f"{p}.wo.w"], "bo": params[f"{p}.wo.b"]}


def _accumulate_attn(params: ParamStore, layer: int, grads: dict):
    p = f"layers.{layer}.attn"
    for proj in ("wq", "wk", "wv", "wo"):
        params.accumulate(f"{p}.{proj}.w", grads[proj])
        if proj != "wk":
            params.accumulate(f"{p}.{proj}.b", grads["b" + proj[1]])


def _block_fwd(params, cfg, layer, x):
    p = f"layers.{layer}"
    w = _attn_weights(params, layer)
    if cfg.block_variant == "pre_norm":
        a_in, c_ln1 = nn.layernorm_fwd(x, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"], LN_EPS)
        a_out, c_attn = nn.attention_fwd(a_in, w, cfg.n_heads)
        h = x + a_out
        m_in, c_ln2 = nn.layernorm_fwd(h, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"], LN_EPS)
        m1, c_fc1 = nn.linear_fwd(m_in, params[f"{p}.mlp.fc1.w"], params[f"{p}.mlp.fc1.b"])
        g1, c_gelu = nn.gelu_fwd(m1)
        m2, c_fc2 = nn.linear_fwd(g1, params[f"{p}.mlp.fc2.w"], params[f"{p}.mlp.fc2.b"])
        y = h + m2
    else:
        a_out, c_attn = nn.attention_fwd(x, w, cfg.n_heads)
        h, c_ln1 = nn.layernorm_fwd(x + a_out, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"], LN_EPS)
        m1, c_fc1 = nn.linear_fwd(h, params[f"{p}.mlp.fc1.w"], params[f"{p}.mlp.fc1.b"])
        g1, c_gelu = nn.gelu_fwd(m1)
        m2, c_fc2 = nn.linear_fwd(g1, params[f"{p}.mlp.fc2.w"], params[f"{p}.mlp.fc2.b"])
        y, c_ln2 = nn.layernorm_fwd(h + m2, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"], LN_EPS)
    return y, (c_ln1, c_attn, c_ln2, c_fc1, c_gelu, c_fc2)


def _block_bwd(params, cfg, layer, grad_y, cache):
    p = f"layers.{layer}"
    c_ln1, c_attn, c_ln2, c_fc1, c_gelu, c_fc2 = cache

    def mlp_bwd(g):
        g1, gw2, gb2 = nn.linear_bwd(g, c_fc2)
        params.accumulate(f"{p}.mlp.fc2.w", gw2)
        params.accumulate(f"{p}.mlp.fc2.b", gb2)
        gm1 = nn.gelu_bwd(g1, c_gelu)
        gin, gw1, gb1 = nn.linear_bwd(gm1, c_fc1)
        params.accumulate(f"{p}.mlp.fc1.w", gw1)
        params.accumulate(f"{p}.mlp.fc1.b", gb1)
        return gin

    if cfg.block_variant == "pre_norm":
        g_m_in = mlp_bwd(grad_y)
        gh, ggamma2, gbeta2 = nn.layernorm_bwd(g_m_in, c_ln2)
        params.accumulate(f"{p}.ln2.gamma", ggamma2)
        params.accumulate(f"{p}.ln2.beta", gbeta2)
        gh = gh + grad_y
        ga_in, attn_grads = nn.attention_bwd(gh, c_attn)
        _accumulate_attn(params, layer, attn_grads)
        gx, ggamma1, gbeta1 = nn.layernorm_bwd(ga_in, c_ln1)
        params.accumulate(f"{p}.ln1.gamma", ggamma1)
        params.accumulate(f"{p}.ln1.beta", gbeta1)
        return gx + gh
    else:
        g_hm, ggamma2, gbeta2 = nn.layernorm_bwd(grad_y, c_ln2)
        params.accumulate(f"{p}.ln2.gamma", ggamma2)
        params.accumulate(f"{p}.ln2.beta", gbeta2)
        gh = g_hm + mlp_bwd(g_hm)
        g_xa, ggamma1, gbeta1 = nn.layernorm_bwd(gh, c_ln1)
        params.accumulate(f"{p}.ln1.gamma", ggamma1)
        params.accumulate(f"{p}.ln1.beta", gbeta1)
        ga_in, attn_grads = nn.attention_bwd(g_xa, c_attn)
        _accumulate_attn(params, layer, attn_grads)
        return g_xa + ga_in


def encode_batch(params: ParamStore, cfg: ModelConfig, tokens: np.ndarray,
                 check: bool = True) -> tuple:
    """Contextualize tokens: [B, n, d] -> [B, n, d] plus backward caches."""
    x = tokens
    caches = []
    for i in range(cfg.n_layers):
        x, cache = _block_fwd(params, cfg, i, x)
        caches.append(cache)
        if check and not np.isfinite(x).all():
            raise NumericError(f"non-finite activations after encoder layer {i}")
    x, c_final = nn.layernorm_fwd(x, params["final_ln.gamma"], params["final_ln.beta"], LN_EPS)
    caches.append(c_final)
    if check and not np.isfinite(x).all():
        raise NumericError("non-finite activations after final layernorm")
    return x, caches


def encode_batch_bwd(params: ParamStore, cfg: ModelConfig, grad_out: np.ndarray, caches):
    g, ggamma, gbeta = nn.layernorm_bwd(grad_out, caches[-1])
    params.accumulate("final_ln.gamma", ggamma)
    params.accumulate("final_ln.beta", gbeta)
    for i in range(cfg.n_layers - 1, -1, -1):
        g = _block_bwd(params, cfg, i, g, caches[i])
    return g


def encode(params: ParamStore, cfg: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    """Single-pixel convenience wrapper: [n, d] -> [n, d]."""
    out, _ = encode_batch(params, cfg, tokens[None])
    return out[0]


def pixel_feature(encoded: np.ndarray) -> np.ndarray:
    """Per-pixel feature: mean over the token axis (robust to any mask)."""
    return encoded.mean(axis=-2)


def forward_logits(params: ParamStore, cfg: ModelConfig, channels: np.ndarray,
                   months: np.ndarray, groups: tuple, check: bool = True) -> tuple:
    """Full differentiable pipeline: packed channels -> per-pixel logits.

    channels is a normalized [B, 13] matrix; groups are the surviving channel
    groups in canonical order. Returns (logits [B], caches).
    """
    tokens, c_tok = tokenize_batch_fwd(params, channels, months, groups)
    encoded, c_enc = encode_batch(params, cfg, tokens, check=check)
    feats = pixel_feature(encoded)
    logits1, c_head = nn.linear_fwd(feats, params["head.w"], params["head.b"])
    logits = logits1[:, 0]
    return logits, (c_tok, c_enc, c_head, encoded.shape[-2])


def backward_logits(params: ParamStore, cfg: ModelConfig, grad_logits: np.ndarray, caches):
    """Accumulate parameter gradients for d(loss)/d(logits)."""
    c_tok, c_enc, c_head, n_tokens = caches
    g_feats, gw, gb = nn.linear_bwd(grad_logits[:, None], c_head)
    params.accumulate("head.w", gw)
    params.accumulate("head.b", gb)
    g_encoded = np.repeat(g_feats[:, None, :], n_tokens, axis=1) / n_tokens
    g_tokens = encode_batch_bwd(params, cfg, g_encoded, c_enc)
    tokenize_batch_bwd(params, g_tokens, c_tok)


def count_trainable(cfg: ModelConfig) -> int:
    return build_params(cfg).n_trainable()


# ---------------------------------------------------------------------------
# checkpoint helpers

def save_checkpoint(path, params: ParamStore, cfg: ModelConfig, trained_epochs: int = 0):
    d = cfg.to_dict()
    if trained_epochs:
        d["trained_epochs"] = trained_epochs
    params.save(path, d)


def load_checkpoint(path) -> tuple:
    """Returns (params, config, trained_epochs); layout validated name by name."""
    tensors, cfg_dict = ParamStore.load(path)
    cfg = ModelConfig.from_dict(cfg_dict)
    trained_epochs = int(cfg_dict.get("trained_epochs", 0))
    params = build_params(cfg)
    names = params.names()
    got = [n for n, _ in tensors]
    if names != got:
        raise ConfigError(f"checkpoint layout mismatch: expected {len(names)} tensors, got {len(got)}")
    for name, value in tensors:
        if params[name].shape != value.shape:
            raise ConfigError(f"checkpoint tensor {name}: shape {value.shape} != {params[name].shape}")
        params.tensors[name] = np.ascontiguousarray(value)
    return params, cfg, trained_epochs


@dataclass
class ModelBundle:
    """Inference-ready model: parameters, config, and normalization stats."""

    params: ParamStore
    cfg: ModelConfig
    stats: NormStats

    def predict_probs(self, channels: np.ndarray, months: np.ndarray,
                      masked_groups=frozenset()) -> np.ndarray:
        """Flood probability per pixel from a raw [B, 13] channel matrix."""
        from . import head as head_mod
        from .tokenizer import normalize_channels, surviving_groups

        groups = surviving_groups(DATA_GROUPS, masked_groups)
        normed = normalize_channels(channels, self.stats)
        logits, _ = forward_logits(self.params, self.cfg, normed, months, groups)
        return head_mod.sigmoid_probs(logits)
