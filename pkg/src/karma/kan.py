"""Low-rank KAN layers: factorized base and spline paths, rank tools.

`KanLinear` combines two paths with learnable per-output-channel scales:

* base path    silu(W_u (W_v x) + b), W_u [out, r], W_v [r, in]
* spline path  S_u (S_v g(x)),        S_u [out, r_f]

where g expands each input through the B-spline basis. With
``share_splines`` one (G+O)-column coefficient table is shared across input
channels (the basis expansion is summed over channels before contraction);
the unshared mode keeps a per-channel table of r_f x (in*(G+O)).

Rank utilities: magnitude pruning, spectral-energy rank selection, and
SVD-based factor initialization. The SVD is a one-sided Jacobi implemented
here; matrices involved are small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .module import Module, param
from .spline import SplineGrid, bspline_basis, grid_noise
from .tensor import ShapeError, Tensor


@dataclass
class RankConfig:
    r: int
    r_f: int
    energy_threshold: float = 0.95
    prune_threshold: float = 1e-4

    def __post_init__(self):
        if self.r < 1 or self.r_f < 1:
            raise ValueError("ranks must be >= 1")
        if not 0.0 < self.energy_threshold <= 1.0:
            raise ValueError("energy_threshold must be in (0, 1]")
        if self.prune_threshold < 0:
            raise ValueError("prune_threshold must be >= 0")


def default_ranks(channels: int) -> RankConfig:
    """Rank rule for ad-hoc configs: r = max(8, C/8), r_f = max(4, C/16)."""
    return RankConfig(r=max(8, channels // 8), r_f=max(4, channels // 16))


# -- rank utilities -----------------------------------------------------------


def prune_weights(w: np.ndarray, tau: float) -> np.ndarray:
    """Zero entries with |w| <= tau (hard magnitude mask). Idempotent."""
    if tau < 0:
        raise ValueError("prune threshold must be >= 0")
    w = np.asarray(w, dtype=np.float64)
    return w * (np.abs(w) > tau)


def jacobi_svd(a: np.ndarray, max_sweeps: int = 60, tol: float = 1e-14):
    """One-sided Jacobi SVD: a = u @ diag(s) @ vt, s descending.

    Columns of the working copy are orthogonalized by plane rotations;
    singular values are the final column norms. Columns with zero norm get a
    zero u-column (enough for truncation; they carry zero weight).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError("jacobi_svd expects a matrix")
    m, n = a.shape
    if m < n:
        u, s, vt = jacobi_svd(a.T, max_sweeps, tol)
        return vt.T, s, u.T
    u = a.copy()
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = u[:, p]
                aq = u[:, q]
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                gamma = float(ap @ aq)
                if alpha == 0.0 or beta == 0.0 or gamma == 0.0:
                    continue
                rel = abs(gamma) / math.sqrt(alpha * beta)
                if rel <= tol:
                    continue
                off = max(off, rel)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s_ = c * t
                new_p = c * ap - s_ * aq
                new_q = s_ * ap + c * aq
                u[:, p] = new_p
                u[:, q] = new_q
                vp = v[:, p].copy()
                v[:, p] = c * vp - s_ * v[:, q]
                v[:, q] = s_ * vp + c * v[:, q]
        if off <= tol:
            break
    s = np.sqrt((u * u).sum(axis=0))
    order = np.argsort(-s)
    s = s[order]
    u = u[:, order]
    v = v[:, order]
    nz = s > 0
    u[:, nz] = u[:, nz] / s[nz]
    u[:, ~nz] = 0.0
    return u, s, v.T


def select_rank(w: np.ndarray, energy_threshold: float = 0.95) -> int:
    """Smallest r keeping the given fraction of squared singular values."""
    if not 0.0 < energy_threshold <= 1.0:
        raise ValueError("energy_threshold must be in (0, 1]")
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("select_rank requires finite entries")
    _, s, _ = jacobi_svd(w)
    total = float((s * s).sum())
    if total == 0.0:
        return 1
    ratios = np.cumsum(s * s) / total
    return int(np.searchsorted(ratios, energy_threshold - 1e-15) + 1)


def svd_init(w_full: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Best rank-r factors of a dense matrix: w_u [m,r] @ w_v [r,n] ~ w_full."""
    w_full = np.asarray(w_full, dtype=np.float64)
    m, n = w_full.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for {m}x{n}")
    u, s, vt = jacobi_svd(w_full)
    root = np.sqrt(s[:r])
    return u[:, :r] * root, root[:, None] * vt[:r]


# -- layers ---------------------------------------------------------------------


class KanLinear(Module):
    """One KAN linear unit: scaled low-rank base path plus factorized splines."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        grid: SplineGrid,
        rank: int,
        spline_rank: int,
        share_splines: bool = True,
        rng: np.random.Generator | None = None,
        svd_initialize: bool = False,
    ):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.base_grid = grid
        self.grid = grid
        self.share_splines = share_splines
        self.rank = max(1, min(rank, in_dim, out_dim))
        self.spline_rank = max(1, min(spline_rank, out_dim))
        nb = grid.num_basis
        cols = nb if share_splines else nb * in_dim

        dense_std = math.sqrt(2.0 / (in_dim + out_dim))
        if svd_initialize:
            full = rng.normal(0.0, dense_std, size=(out_dim, in_dim))
            wu, wv = svd_init(full, self.rank)
        else:
            factor_std = (dense_std**2 / self.rank) ** 0.25
            wu = rng.normal(0.0, factor_std, size=(out_dim, self.rank))
            wv = rng.normal(0.0, factor_std, size=(self.rank, in_dim))
        self.w_u = param(wu)
        self.w_v = param(wv)
        self.bias = param(np.zeros(out_dim))

        su_std = 1.0 / math.sqrt(self.spline_rank)
        if share_splines:
            sv_std = 0.1 * math.sqrt(nb) / in_dim
        else:
            sv_std = 0.1 * math.sqrt(nb / in_dim)
        self.s_u = param(rng.normal(0.0, su_std, size=(out_dim, self.spline_rank)))
        self.s_v = param(rng.normal(0.0, sv_std, size=(self.spline_rank, cols)))
        self.s_base = param(np.ones(out_dim))
        self.s_spline = param(np.ones(out_dim))

    def refresh_grid(self, seed: int | None = None) -> None:
        """Swap in a jittered copy of the base grid (training regularization)."""
        self.grid = self.base_grid if seed is None else grid_noise(self.base_grid, seed)

    def base_transform(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected [N,{self.in_dim}], got {x.shape}")
        z = T.matmul(T.matmul(x, T.transpose(self.w_v)), T.transpose(self.w_u))
        return T.silu(z + self.bias)

    def spline_transform(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected [N,{self.in_dim}], got {x.shape}")
        basis = bspline_basis(x, self.grid)
        n = x.shape[0]
        if self.share_splines:
            flat = T.tsum(basis, axis=1)
        else:
            flat = T.reshape(basis, (n, self.in_dim * self.grid.num_basis))
        h = T.matmul(flat, T.transpose(self.s_v))
        return T.matmul(h, T.transpose(self.s_u))

    def forward(self, x: Tensor) -> Tensor:
        return self.base_transform(x) * self.s_base + self.spline_transform(x) * self.s_spline

    def prunable_weights(self) -> list[Tensor]:
        return [self.w_u, self.w_v, self.s_u, self.s_v]


class DwBnRelu(Module):
    """Depthwise 3x3 convolution, batchnorm, relu (token spatial mixing)."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.weight = param(rng.normal(0.0, math.sqrt(2.0 / 9.0), size=(channels, 3, 3)))
        self.gamma = param(np.ones(channels))
        self.beta = param(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.weight, mode="depthwise", stride=1, padding="same")
        y = T.batchnorm(
            y, self.gamma, self.beta, self.running_mean, self.running_var, self.training
        )
        return T.relu(y)


class KanLayer(Module):
    """Two KanLinear stages, each followed by depthwise conv + BN + relu."""

    def __init__(
        self,
        dim: int,
        hidden: int,
        grid: SplineGrid,
        ranks: RankConfig,
        share_splines: bool,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.dim = dim
        self.hidden = hidden
        self.kl1 = KanLinear(dim, hidden, grid, ranks.r, ranks.r_f, share_splines, rng)
        self.mix1 = DwBnRelu(hidden, rng)
        self.kl2 = KanLinear(hidden, dim, grid, ranks.r, ranks.r_f, share_splines, rng)
        self.mix2 = DwBnRelu(dim, rng)

    def _tokens_to_map(self, x: Tensor, b: int, h: int, w: int, c: int) -> Tensor:
        return T.transpose(T.reshape(x, (b, h, w, c)), (0, 3, 1, 2))

    def _map_to_tokens(self, x: Tensor, b: int, n: int, c: int) -> Tensor:
        return T.reshape(T.transpose(x, (0, 2, 3, 1)), (b, n, c))

    def forward(self, tokens: Tensor, spatial: tuple[int, int]) -> Tensor:
        b, n, d = tokens.shape
        h, w = spatial
        if n != h * w:
            raise ShapeError(f"token count {n} != {h}x{w}")
        x = T.reshape(tokens, (b * n, d))
        x = self.kl1(x)
        x = self._tokens_to_map(T.reshape(x, (b, n, self.hidden)), b, h, w, self.hidden)
        x = self.mix1(x)
        x = T.reshape(self._map_to_tokens(x, b, n, self.hidden), (b * n, self.hidden))
        x = self.kl2(x)
        x = self._tokens_to_map(T.reshape(x, (b, n, d)), b, h, w, d)
        x = self.mix2(x)
        return self._map_to_tokens(x, b, n, d)


class KanBlock(Module):
    """LayerNorm -> KanLayer -> residual add."""

    def __init__(
        self,
        dim: int,
        hidden: int,
        grid: SplineGrid,
        ranks: RankConfig,
        share_splines: bool,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.ln_gamma = param(np.ones(dim))
        self.ln_beta = param(np.zeros(dim))
        self.layer = KanLayer(dim, hidden, grid, ranks, share_splines, rng)

    def forward(self, tokens: Tensor, spatial: tuple[int, int]) -> Tensor:
        normed = T.layernorm(tokens, self.ln_gamma, self.ln_beta)
        return tokens + self.layer(normed, spatial)
