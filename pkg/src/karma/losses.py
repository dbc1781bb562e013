"""Training objective: median-frequency weighted cross-entropy, soft Dice,
spline-curvature smoothness, and L1 sparsity, combined as

    total = alpha*CE + beta*Dice + gamma*(l1_smooth*smooth + l2_sparse*L1)

Dice uses soft probabilities so the whole objective stays differentiable.
A focal variant of the CE term is available as an opt-in replacement.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .kan import KanLinear
from .module import Module
from .tensor import Tensor


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2
    lambda_smooth: float = 0.1
    lambda_sparsity: float = 0.01
    dice_eps: float = 1e-6
    focal_ce: bool = False
    focal_gamma: float = 2.0
    l1_include_all: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lambda_smooth", "lambda_sparsity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class ClassWeights:
    w: np.ndarray
    f: np.ndarray


def class_weights(masks: np.ndarray, num_classes: int) -> ClassWeights:
    """Median-frequency weights w_k = median(f)/f_k from label masks.

    Classes absent from the statistics pass get the maximum weight over
    present classes (with a warning); the median is taken over present
    classes.
    """
    masks = np.asarray(masks)
    counts = np.bincount(masks.reshape(-1).astype(np.int64), minlength=num_classes)
    counts = counts[:num_classes].astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise ValueError("class_weights needs at least one labeled pixel")
    f = counts / total
    present = f > 0
    med = float(np.median(f[present]))
    w = np.zeros(num_classes)
    w[present] = med / f[present]
    if not present.all():
        missing = np.flatnonzero(~present).tolist()
        warnings.warn(f"classes {missing} absent from weight statistics; using max weight")
        w[~present] = w[present].max()
    return ClassWeights(w=w, f=f)


def _one_hot(targets: np.ndarray, num_classes: int) -> np.ndarray:
    if targets.ndim == 4:
        return np.asarray(targets, dtype=np.float64)
    t = np.asarray(targets).astype(np.int64)
    if t.min() < 0 or t.max() >= num_classes:
        raise ValueError("target labels out of range")
    oh = np.zeros((t.shape[0], num_classes) + t.shape[1:], dtype=np.float64)
    np.put_along_axis(oh, t[:, None], 1.0, axis=1)
    return oh


def weighted_ce(logits: Tensor, targets, w: np.ndarray | None = None) -> Tensor:
    """-(1/N) sum_i sum_k w_k M_ik log p_ik with N the pixel count."""
    k = logits.shape[1]
    m = _one_hot(np.asarray(targets), k)
    w = np.ones(k) if w is None else np.asarray(w, dtype=np.float64)
    n_pix = m.shape[0] * m.shape[2] * m.shape[3]
    logp = T.log_softmax(logits, axis=1)
    weighted = Tensor(m * w.reshape(1, k, 1, 1))
    return -T.tsum(logp * weighted) / float(n_pix)


def focal_ce(logits: Tensor, targets, w: np.ndarray | None = None, gamma: float = 2.0) -> Tensor:
    """Focal variant: the (1-p)^gamma factor damps easy pixels."""
    k = logits.shape[1]
    m = _one_hot(np.asarray(targets), k)
    w = np.ones(k) if w is None else np.asarray(w, dtype=np.float64)
    n_pix = m.shape[0] * m.shape[2] * m.shape[3]
    logp = T.log_softmax(logits, axis=1)
    p = T.softmax(logits, axis=1)
    mod = power_term(p, gamma)
    weighted = Tensor(m * w.reshape(1, k, 1, 1))
    return -T.tsum(mod * logp * weighted) / float(n_pix)


def power_term(p: Tensor, gamma: float) -> Tensor:
    return T.power(1.0 - p, gamma)


def dice_loss(logits: Tensor, targets, eps: float = 1e-6) -> Tensor:
    """Soft Dice over pixels and classes jointly: 1 - (2*overlap+eps)/(mass+eps)."""
    k = logits.shape[1]
    m = Tensor(_one_hot(np.asarray(targets), k))
    p = T.softmax(logits, axis=1)
    num = 2.0 * T.tsum(p * m) + eps
    den = T.tsum(p) + T.tsum(m) + eps
    return 1.0 - num / den


def find_kan_linears(module: Module) -> list[KanLinear]:
    found = []
    if isinstance(module, KanLinear):
        found.append(module)
    for child in module._children.values():
        found.extend(find_kan_linears(child))
    return found


def smoothness_reg(model: Module) -> Tensor:
    """Sum of squared second differences of spline coefficient tables.

    The learned univariate functions are splines; curvature of their control
    coefficients along the grid axis is the computable surrogate for the
    second-derivative penalty. Affine coefficient sequences contribute
    exactly zero.
    """
    layers = find_kan_linears(model)
    if not layers:
        raise ValueError("smoothness_reg needs at least one KAN layer")
    total = None
    for lin in layers:
        nb = lin.grid.num_basis
        if nb < 3:
            continue
        rows = lin.s_v if lin.share_splines else T.reshape(
            lin.s_v, (lin.spline_rank * lin.in_dim, nb)
        )
        d2 = np.zeros((nb - 2, nb))
        for i in range(nb - 2):
            d2[i, i], d2[i, i + 1], d2[i, i + 2] = 1.0, -2.0, 1.0
        curv = T.matmul(rows, Tensor(d2.T))
        term = T.tsum(curv * curv)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


_L1_EXCLUDED_LEAVES = {"bias", "gamma", "beta", "ln_gamma", "ln_beta"}


def sparsity_reg(model: Module, include_all: bool = False) -> Tensor:
    """L1 norm over weight tensors; biases and norm affines excluded by default."""
    total = None
    for name, p in model.named_params():
        leaf = name.rsplit(".", 1)[-1]
        if not include_all and leaf in _L1_EXCLUDED_LEAVES:
            continue
        term = T.tsum(T.absolute(p))
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def total_loss(
    logits: Tensor,
    targets,
    model: Module,
    cfg: LossConfig,
    weights: np.ndarray | None = None,
) -> Tensor:
    if cfg.focal_ce:
        ce = focal_ce(logits, targets, weights, cfg.focal_gamma)
    else:
        ce = weighted_ce(logits, targets, weights)
    out = cfg.alpha * ce + cfg.beta * dice_loss(logits, targets, cfg.dice_eps)
    if cfg.gamma > 0:
        reg = cfg.lambda_smooth * smoothness_reg(model) + cfg.lambda_sparsity * sparsity_reg(
            model, cfg.l1_include_all
        )
        out = out + cfg.gamma * reg
    return out
