"""Classification head: logit -> probability -> binary label, plus focal loss.

The focal loss down-weights easy examples: with p_t the probability assigned
to the true class, loss = -alpha_t * (1 - p_t)^gamma * log(p_t). gamma = 0 and
no alpha recovers plain binary cross-entropy.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError

PROB_CLAMP = 1e-12


@dataclass
class FocalLossConfig:
    gamma: float = 2.0
    alpha: float | None = None  # weight on the positive class, in [0, 1]

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError(f"focal gamma must be >= 0, got {self.gamma}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"focal alpha must be in [0, 1], got {self.alpha}")


def sigmoid_probs(logits):
    return expit(np.asarray(logits, dtype=np.float64))


def predict(feature: np.ndarray, weight: np.ndarray, bias: float,
            threshold: float = 0.5) -> tuple:
    """(probability, is_flood) for one feature vector. Ties go to flood."""
    logit = float(feature @ weight.reshape(-1) + np.asarray(bias).reshape(-1)[0])
    prob = float(expit(logit))
    return prob, prob >= threshold


def _alphas(y, cfg: FocalLossConfig):
    if cfg.alpha is None:
        return 1.0
    return np.where(y == 1, cfg.alpha, 1.0 - cfg.alpha)


def focal_loss(prob, y, cfg: FocalLossConfig):
    """Per-example focal loss; prob is the flood probability, y in {0, 1}."""
    prob = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y)
    p_t = np.where(y == 1, prob, 1.0 - prob)
    loss = -_alphas(y, cfg) * (1.0 - p_t) ** cfg.gamma * np.log(p_t)
    return float(loss) if loss.ndim == 0 else loss


def focal_loss_grad(logit, y, cfg: FocalLossConfig):
    """d(loss)/d(logit), in a form with no division (stable at saturation).

    For y=1: alpha * (gamma * s * (1-s)^gamma * log(s) - (1-s)^(gamma+1))
    For y=0: (1-alpha) * (s^(gamma+1) - gamma * (1-s) * s^gamma * log(1-s))
    where s = sigmoid(logit).
    """
    s = expit(np.asarray(logit, dtype=np.float64))
    y = np.asarray(y)
    g = cfg.gamma
    log_s = np.log(np.clip(s, PROB_CLAMP, None))
    log_1ms = np.log(np.clip(1.0 - s, PROB_CLAMP, None))
    grad_pos = g * s * (1.0 - s) ** g * log_s - (1.0 - s) ** (g + 1.0)
    grad_neg = s ** (g + 1.0) - g * (1.0 - s) * s ** g * log_1ms
    grad = _alphas(y, cfg) * np.where(y == 1, grad_pos, grad_neg)
    return float(grad) if grad.ndim == 0 else grad


def batch_focal(logits: np.ndarray, labels: np.ndarray, cfg: FocalLossConfig) -> tuple:
    """(mean loss, d(mean loss)/d(logits)) over a batch of {0,1} labels."""
    probs = expit(logits)
    losses = focal_loss(probs, labels, cfg)
    grads = focal_loss_grad(logits, labels, cfg) / logits.shape[0]
    return float(losses.mean()), grads
