"""Central finite-difference verification of every hand-written backward pass.

Each analytic gradient is compared against (f(x+h) - f(x-h)) / 2h at randomly
sampled coordinates; the relative error uses max(|a|, |b|, 1e-8) as the
denominator. Checks cover each layer kernel in isolation plus the end-to-end
loss through the full model.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import nn
from .channels import DATA_GROUPS
from .head import FocalLossConfig, batch_focal, focal_loss, focal_loss_grad
from .model import ModelConfig, backward_logits, build_params, forward_logits
from .rng import STREAM_GRADCHECK, make_rng

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_checked: int

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return self.max_rel_err < tol


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_tensor(loss_fn, arr: np.ndarray, analytic: np.ndarray, name: str,
                 rng: np.random.Generator, n_samples: int = 100,
                 h: float = DEFAULT_H) -> CheckResult:
    """Finite-difference check of `analytic` dLoss/dArr at sampled coordinates.

    `arr` must be the live array `loss_fn` reads; it is perturbed in place and
    restored bit-exactly.
    """
    flat = arr.reshape(-1)
    ga = np.asarray(analytic).reshape(-1)
    idxs = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
    worst = 0.0
    for i in idxs:
        old = flat[i]
        flat[i] = old + h
        lp = loss_fn()
        flat[i] = old - h
        lm = loss_fn()
        flat[i] = old
        fd = (lp - lm) / (2.0 * h)
        worst = max(worst, rel_err(fd, ga[i]))
    return CheckResult(name, worst, len(idxs))


# ---------------------------------------------------------------------------
# per-kernel suites: loss = sum(out * G) for a fixed random G

def check_kernels(seed: int = 0, n_samples: int = 100, h: float = DEFAULT_H) -> list:
    rng = make_rng(seed, STREAM_GRADCHECK, 0)
    results = []

    # linear
    x = rng.standard_normal((6, 5))
    w = rng.standard_normal((5, 3))
    b = rng.standard_normal(3)
    G = rng.standard_normal((6, 3))

    def lin_loss():
        return float((nn.linear_fwd(x, w, b)[0] * G).sum())

    _, cache = nn.linear_fwd(x, w, b)
    gx, gw, gb = nn.linear_bwd(G, cache)
    results.append(check_tensor(lin_loss, x, gx, "linear.x", rng, n_samples, h))
    results.append(check_tensor(lin_loss, w, gw, "linear.w", rng, n_samples, h))
    results.append(check_tensor(lin_loss, b, gb, "linear.b", rng, n_samples, h))

    # layernorm
    x = rng.standard_normal((7, 6)) * 2.0
    gamma = rng.standard_normal(6) + 1.0
    beta = rng.standard_normal(6)
    G = rng.standard_normal((7, 6))

    def ln_loss():
        return float((nn.layernorm_fwd(x, gamma, beta)[0] * G).sum())

    _, cache = nn.layernorm_fwd(x, gamma, beta)
    gx, ggamma, gbeta = nn.layernorm_bwd(G, cache)
    results.append(check_tensor(ln_loss, x, gx, "layernorm.x", rng, n_samples, h))
    results.append(check_tensor(ln_loss, gamma, ggamma, "layernorm.gamma", rng, n_samples, h))
    results.append(check_tensor(ln_loss, beta, gbeta, "layernorm.beta", rng, n_samples, h))

    # gelu / sigmoid / softmax
    x = rng.standard_normal((5, 4)) * 2.0
    G = rng.standard_normal((5, 4))

    def gelu_loss():
        return float((nn.gelu_fwd(x)[0] * G).sum())

    results.append(check_tensor(gelu_loss, x, nn.gelu_bwd(G, nn.gelu_fwd(x)[1]),
                                "gelu.x", rng, n_samples, h))

    def sig_loss():
        return float((nn.sigmoid_fwd(x)[0] * G).sum())

    results.append(check_tensor(sig_loss, x, nn.sigmoid_bwd(G, nn.sigmoid_fwd(x)[1]),
                                "sigmoid.x", rng, n_samples, h))

    z = rng.standard_normal((4, 6))
    Gz = rng.standard_normal((4, 6))

    def sm_loss():
        return float((nn.softmax_fwd(z)[0] * Gz).sum())

    results.append(check_tensor(sm_loss, z, nn.softmax_bwd(Gz, nn.softmax_fwd(z)[1]),
                                "softmax.z", rng, n_samples, h))

    # multi-head attention (no key bias by construction)
    x = rng.standard_normal((2, 5, 8))
    weights = {}
    for proj in ("wq", "wk", "wv", "wo"):
        weights[proj] = rng.standard_normal((8, 8)) / np.sqrt(8)
        if proj != "wk":
            weights["b" + proj[1]] = rng.standard_normal(8) * 0.1
    G = rng.standard_normal((2, 5, 8))

    def attn_loss():
        return float((nn.attention_fwd(x, weights, 2)[0] * G).sum())

    _, cache = nn.attention_fwd(x, weights, 2)
    gx, grads = nn.attention_bwd(G, cache)
    results.append(check_tensor(attn_loss, x, gx, "attention.x", rng, n_samples, h))
    for key in ("wq", "bq", "wk", "wv", "bv", "wo", "bo"):
        results.append(check_tensor(attn_loss, weights[key], grads[key],
                                    f"attention.{key}", rng, n_samples, h))

    # focal loss gradient through the sigmoid
    logits = rng.standard_normal(9) * 2.0
    labels = (np.arange(9) % 2).astype(np.float64)
    cfg = FocalLossConfig(gamma=2.0, alpha=0.25)

    def focal_total():
        return float(np.sum(focal_loss(expit(logits), labels, cfg)))

    results.append(check_tensor(focal_total, logits, focal_loss_grad(logits, labels, cfg),
                                "focal.logit", rng, n_samples, h))
    return results


# ---------------------------------------------------------------------------
# end-to-end: focal loss through tokenizer, encoder, and head

def check_model(seed: int = 0, model_cfg: ModelConfig | None = None, batch: int = 4,
                n_samples: int = 100, h: float = DEFAULT_H) -> list:
    """One CheckResult per trainable tensor of the full model."""
    model_cfg = model_cfg or ModelConfig(seed=seed)
    rng = make_rng(seed, STREAM_GRADCHECK, 1)
    params = build_params(model_cfg)
    channels = rng.standard_normal((batch, 13))
    months = rng.integers(0, 12, size=batch)
    labels = (rng.random(batch) < 0.5).astype(np.float64)
    loss_cfg = FocalLossConfig(gamma=2.0)

    def loss_fn():
        logits, _ = forward_logits(params, model_cfg, channels, months,
                                   DATA_GROUPS, check=False)
        return batch_focal(logits, labels, loss_cfg)[0]

    params.zero_grads()
    logits, caches = forward_logits(params, model_cfg, channels, months,
                                    DATA_GROUPS, check=False)
    _, dlogits = batch_focal(logits, labels, loss_cfg)
    backward_logits(params, model_cfg, dlogits, caches)

    return [check_tensor(loss_fn, params.tensors[name], params.grad(name),
                         f"model.{name}", rng, n_samples, h)
            for name in params.trainable_names()]


def run_all_checks(seed: int = 0, n_samples: int = 100, h: float = DEFAULT_H,
                   model_cfg: ModelConfig | None = None) -> list:
    return check_kernels(seed, n_samples, h) + check_model(seed, model_cfg, 4, n_samples, h)


def format_table(results, tol: float = DEFAULT_TOL) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'tensor':<{width}}  {'max rel err':>12}  {'n':>5}  status"]
    for r in results:
        status = "PASS" if r.passed(tol) else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_rel_err:>12.3e}  {r.n_checked:>5}  {status}")
    return "\n".join(lines)
