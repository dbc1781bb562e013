"""Finite-difference verification of the autodiff engine.

Every differentiable op is checked against central differences (h = 1e-5)
on small random inputs; the full network is checked end to end on sampled
parameters. The `gradcheck` CLI subcommand runs these suites and exits
nonzero if any relative error exceeds its threshold.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .kan import KanBlock, KanLinear, RankConfig
from .losses import LossConfig, total_loss
from .model import ModelConfig, build_model
from .spline import bspline_basis, make_grid
from .tensor import Tensor

OP_TOL = 1e-5
MODEL_TOL = 1e-4


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(1.0, float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / denom


def gradcheck(fn, arrays: list[np.ndarray], h: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps Tensors to a scalar Tensor and must be a pure function of
    its inputs (it is re-evaluated under per-element perturbations).
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        num = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*[Tensor(x.data) for x in tensors]).item()
            flat[i] = orig - h
            fm = fn(*[Tensor(x.data) for x in tensors]).item()
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * h)
        worst = max(worst, rel_error(g.reshape(-1), num))
    return worst


def _proj(shape: tuple[int, ...], seed: int) -> Tensor:
    rng = np.random.Generator(np.random.PCG64(seed))
    return Tensor(rng.normal(size=shape))


def op_suite(seed: int = 0) -> dict[str, float]:
    """Finite-difference check of each differentiable op on small inputs."""
    rng = np.random.Generator(np.random.PCG64(seed))
    r = lambda *s: rng.normal(size=s)
    checks: dict[str, float] = {}

    checks["add_mul_div"] = gradcheck(
        lambda a, b: T.tsum(a * b + a / (b * b + 2.0)), [r(3, 4), r(3, 4)]
    )
    checks["matmul"] = gradcheck(lambda a, b: T.tsum(T.matmul(a, b) ** 2.0), [r(3, 4), r(4, 2)])
    checks["exp_log_abs"] = gradcheck(
        lambda a: T.tsum(T.log(T.exp(a) + 1.0) + T.absolute(a + 3.0)), [r(2, 5)]
    )
    checks["sum_mean"] = gradcheck(
        lambda a: T.tsum(T.tmean(a, axis=1) * T.tsum(a, axis=0)), [r(4, 4)]
    )
    checks["reshape_transpose_concat"] = gradcheck(
        lambda a, b: T.tsum(T.concat([T.transpose(T.reshape(a, (2, 6)), (1, 0)), b], axis=1) ** 2.0),
        [r(3, 4), r(6, 2)],
    )
    checks["relu"] = gradcheck(
        lambda a: T.tsum(T.relu(a)), [r(4, 4) + np.where(r(4, 4) > 0, 0.5, -0.5)]
    )
    checks["silu"] = gradcheck(lambda a: T.tsum(T.silu(a) ** 2.0), [r(3, 5)])
    checks["softmax"] = gradcheck(
        lambda a: T.tsum(T.softmax(a, axis=1) * _proj((3, 5), 1)), [r(3, 5)]
    )
    checks["log_softmax"] = gradcheck(
        lambda a: T.tsum(T.log_softmax(a, axis=1) * _proj((3, 5), 2)), [r(3, 5)]
    )

    p_conv = _proj((2, 3, 4, 4), 3)
    checks["conv2d_standard"] = gradcheck(
        lambda x, w: T.tsum(T.conv2d(x, w, "standard", 1, "same") * p_conv),
        [r(2, 2, 4, 4), r(3, 2, 3, 3)],
    )
    checks["conv2d_standard_stride2"] = gradcheck(
        lambda x, w: T.tsum(T.conv2d(x, w, "standard", 2, "same") ** 2.0),
        [r(1, 2, 6, 6), r(2, 2, 3, 3)],
    )
    checks["conv2d_depthwise"] = gradcheck(
        lambda x, w: T.tsum(T.conv2d(x, w, "depthwise", 1, "same") ** 2.0),
        [r(2, 3, 4, 4), r(3, 3, 3)],
    )
    checks["conv2d_depthwise_stride2"] = gradcheck(
        lambda x, w: T.tsum(T.conv2d(x, w, "depthwise", 2, "same") ** 2.0),
        [r(1, 2, 6, 6), r(2, 5, 5)],
    )
    checks["conv2d_pointwise"] = gradcheck(
        lambda x, w: T.tsum(T.conv2d(x, w, "pointwise") ** 2.0), [r(2, 3, 3, 3), r(4, 3)]
    )
    checks["maxpool2d"] = gradcheck(
        lambda x: T.tsum(T.maxpool2d(x, 2, 2) ** 2.0), [r(2, 2, 4, 4)]
    )
    checks["maxpool2d_overlap"] = gradcheck(
        lambda x: T.tsum(T.maxpool2d(x, 3, 1, "same") ** 2.0), [r(1, 2, 5, 5)]
    )
    checks["upsample2d"] = gradcheck(
        lambda x: T.tsum(T.upsample2d(x, 2) * _proj((1, 2, 6, 6), 4)), [r(1, 2, 3, 3)]
    )
    checks["layernorm"] = gradcheck(
        lambda x, g, b: T.tsum(T.layernorm(x, g, b) * _proj((2, 3, 5), 5)),
        [r(2, 3, 5), 1.0 + 0.1 * r(5), 0.1 * r(5)],
    )

    def bn_train(x, g, b):
        return T.tsum(
            T.batchnorm(x, g, b, np.zeros(3), np.ones(3), training=True) * _proj((2, 3, 4, 4), 6)
        )

    def bn_eval(x, g, b):
        return T.tsum(
            T.batchnorm(
                x, g, b, np.full(3, 0.2), np.full(3, 1.3), training=False
            )
            * _proj((2, 3, 4, 4), 7)
        )

    checks["batchnorm_train"] = gradcheck(bn_train, [r(2, 3, 4, 4), 1 + 0.1 * r(3), 0.1 * r(3)])
    checks["batchnorm_eval"] = gradcheck(bn_eval, [r(2, 3, 4, 4), 1 + 0.1 * r(3), 0.1 * r(3)])
    return checks


def spline_suite(seed: int = 0) -> dict[str, float]:
    rng = np.random.Generator(np.random.PCG64(seed))
    checks: dict[str, float] = {}
    for order in (1, 2, 3):
        grid = make_grid(5, order, -1.0, 1.0)
        x = rng.uniform(-1.3, 1.3, size=(12,))
        proj = _proj((12, grid.num_basis), order)
        checks[f"bspline_order{order}"] = gradcheck(
            lambda t, g=grid, p=proj: T.tsum(bspline_basis(t, g) * p), [x]
        )
    return checks


def kan_suite(seed: int = 0) -> dict[str, float]:
    rng = np.random.Generator(np.random.PCG64(seed))
    grid = make_grid(5, 3, -1.0, 1.0)
    checks: dict[str, float] = {}

    lin = KanLinear(4, 3, grid, rank=2, spline_rank=2, rng=rng)
    names = list(lin._params)
    arrays = [rng.uniform(-0.9, 0.9, size=(5, 4))]
    arrays += [getattr(lin, n).data.copy() for n in names]
    proj = _proj((5, 3), 11)

    def run_kanlinear(x, *params):
        # bind the probe tensors as the layer's parameters so gradients
        # flow back to them
        for n, t in zip(names, params):
            setattr(lin, n, t)
        return T.tsum(lin(x) * proj)

    checks["kanlinear_all"] = gradcheck(run_kanlinear, arrays)

    blk = KanBlock(3, 3, grid, RankConfig(r=2, r_f=2), True, rng)
    blk.train(True)
    tok = rng.uniform(-0.8, 0.8, size=(1, 4, 3))
    projb = _proj((1, 4, 3), 12)
    snaps = [(b, b.copy()) for _, b in blk.named_buffers()]

    def run_block(t):
        for buf, snap in snaps:
            buf[:] = snap
        return T.tsum(blk(t, (2, 2)) * projb)

    checks["kanblock_input"] = gradcheck(run_block, [tok])
    return checks


def model_suite(seed: int = 0, samples: int = 10, resolution: int = 64) -> dict[str, float]:
    """End-to-end: central differences on sampled parameters of the full net.

    Uses the baseline architecture (reduced ranks) at the given resolution
    with 3 classes and the complete training objective as the scalar.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    cfg = ModelConfig(variant="custom", num_classes=3, ranks=RankConfig(r=16, r_f=8))
    model = build_model(cfg, seed=seed)
    model.train(True)
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, resolution, resolution)))
    y = rng.integers(0, 3, size=(1, resolution, resolution))
    lcfg = LossConfig()

    named = list(model.named_params())
    buffers = [(b, b.copy()) for _, b in model.named_buffers()]

    def loss_value() -> float:
        for buf, snap in buffers:
            buf[:] = snap
        return total_loss(model(x), y, model, lcfg).item()

    for buf, snap in buffers:
        buf[:] = snap
    loss = total_loss(model(x), y, model, lcfg)
    loss.backward()

    picks = []
    for _ in range(samples):
        name, p = named[int(rng.integers(len(named)))]
        picks.append((name, p, int(rng.integers(p.size))))

    h = 1e-5
    checks: dict[str, float] = {}
    with T.no_grad():
        for name, p, idx in picks:
            flat = p.data.reshape(-1)
            orig = flat[idx]
            flat[idx] = orig + h
            fp = loss_value()
            flat[idx] = orig - h
            fm = loss_value()
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            analytic = p.grad.reshape(-1)[idx] if p.grad is not None else 0.0
            checks[f"{name}[{idx}]"] = rel_error(np.array(analytic), np.array(numeric))
    return checks


SUITES = {
    "tensor": (op_suite, OP_TOL),
    "spline": (spline_suite, OP_TOL),
    "kan": (kan_suite, OP_TOL),
    "model": (model_suite, MODEL_TOL),
}


def run(module: str = "all", seed: int = 0) -> tuple[dict[str, float], bool]:
    """Run suites; returns (per-check errors, all_passed)."""
    names = list(SUITES) if module == "all" else [module]
    results: dict[str, float] = {}
    ok = True
    for name in names:
        suite, tol = SUITES[name]
        for check, err in suite(seed).items():
            results[f"{name}.{check}"] = err
            if err >= tol:
                ok = False
    return results, ok
