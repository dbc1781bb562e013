"""Static efficiency accounting: exact parameter counts, analytic MAC/FLOP
counts, and activation-memory estimates.

Two independent paths exist for parameters: `count_params` enumerates the
built model's tensors, while `predicted_params` recomputes the total from a
`ModelConfig` alone; tests assert they agree exactly.

Conventions (also printed in report headers):

* ``gmacs`` counts one multiply-accumulate per unit, the convention used by
  the published efficiency tables;
* ``flops_total`` applies the 1 MAC = 2 FLOPs convention and adds
  elementwise work (4 FLOPs/element for batchnorm and silu, 1 for relu,
  bias and residual adds);
* spline evaluation is charged (G+O)*(O+1)*c MACs per scalar input, c = 2;
* activation memory follows a keep-all-laterals liveness model; the
  resolution scaling factor relates successive 4x pixel steps of the total
  (parameters + activations) footprint, matching how the published memory
  table's "scaling factor" column is computed from its own entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backbone import branch_split, stage_specs
from .model import ModelConfig
from .module import Module

SPLINE_MAC_CONST = 2


@dataclass
class CostReport:
    params_total: int = 0
    params_by_module: dict[str, int] = field(default_factory=dict)
    macs_total: int = 0
    macs_by_module: dict[str, int] = field(default_factory=dict)
    elementwise_flops: int = 0
    resolution: tuple[int, int] | None = None
    activation_bytes_peak: int = 0
    bytes_per_elem: int = 8

    @property
    def flops_total(self) -> int:
        return 2 * self.macs_total + self.elementwise_flops

    @property
    def gmacs(self) -> float:
        return self.macs_total / 1e9

    @property
    def gflops(self) -> float:
        return self.flops_total / 1e9


# -- parameters -----------------------------------------------------------------


def count_params(model: Module) -> CostReport:
    """Exact learnable-scalar count by enumerating parameter tensors."""
    by_module: dict[str, int] = {}
    total = 0
    for name, p in model.named_params():
        top = name.split(".", 1)[0]
        by_module[top] = by_module.get(top, 0) + p.size
        total += p.size
    return CostReport(params_total=total, params_by_module=by_module)


def _dwsep_params(in_c: int, out_c: int, k: int) -> int:
    return in_c * k * k + in_c * out_c + out_c


def _block_params(in_c: int, out_c: int) -> int:
    b1, b2, b3 = branch_split(out_c)
    total = 0
    for width, k in ((b1, 3), (b2, 5)):
        total += _dwsep_params(in_c, width, k) + 2 * width
        total += _dwsep_params(width, width, k) + 2 * width
    total += in_c * b3 + b3 + 2 * b3
    return total


def _kanlinear_params(in_c: int, out_c: int, nb: int, r: int, rf: int, share: bool) -> int:
    r = max(1, min(r, in_c, out_c))
    rf = max(1, min(rf, out_c))
    cols = nb if share else nb * in_c
    return out_c * r + r * in_c + out_c + out_c * rf + rf * cols + 2 * out_c


def _kanblock_params(cfg: ModelConfig) -> int:
    d = cfg.kan_channels
    h = cfg.kan_hidden
    nb = cfg.grid_size + cfg.spline_order
    r, rf, share = cfg.ranks.r, cfg.ranks.r_f, cfg.share_splines
    total = 2 * d  # layernorm affine
    total += _kanlinear_params(d, h, nb, r, rf, share) + (h * 9 + 2 * h)
    total += _kanlinear_params(h, d, nb, r, rf, share) + (d * 9 + 2 * d)
    return total


def predicted_params(cfg: ModelConfig) -> CostReport:
    """Analytic parameter count from the config (independent of construction)."""
    by: dict[str, int] = {}
    by["backbone"] = sum(
        _block_params(s.in_channels, s.out_channels) for s in stage_specs(cfg.stage_channels)
    )

    enhance = 0
    c5 = cfg.stage_channels[-1]
    if cfg.pre_kan_projection is not None:
        enhance += c5 * cfg.pre_kan_projection + cfg.pre_kan_projection
    enhance += _kanblock_params(cfg)
    enhance += cfg.kan_channels * cfg.fpn_width + cfg.fpn_width
    by["enhance"] = enhance

    topdown = 0
    for c in cfg.stage_channels[1:4]:
        if cfg.fpn_conv == "dwsep":
            topdown += c
        topdown += c * cfg.fpn_width + cfg.fpn_width
    by["topdown"] = topdown

    head = cfg.num_classes * cfg.fpn_width * 9 + cfg.num_classes
    for level in (2, 3, 4, 5):
        by[f"head{level}"] = head

    if cfg.learnable_fusion:
        by["fusion_weights"] = 4

    return CostReport(params_total=sum(by.values()), params_by_module=by)


# -- FLOPs ----------------------------------------------------------------------


class _Meter:
    def __init__(self):
        self.macs: dict[str, int] = {}
        self.elemwise = 0

    def mac(self, module: str, n: int) -> None:
        self.macs[module] = self.macs.get(module, 0) + int(n)

    def elem(self, n: int, per: int = 1) -> None:
        self.elemwise += int(n) * per


def _dwsep_macs(m: _Meter, tag: str, px: int, in_c: int, out_c: int, k: int) -> None:
    m.mac(tag, px * in_c * k * k)  # depthwise
    m.mac(tag, px * in_c * out_c)  # pointwise
    m.elem(px * out_c)  # bias


def _bn_act_flops(m: _Meter, px: int, c: int, act: int = 4) -> None:
    m.elem(px * c, per=4)  # batchnorm (inference form)
    m.elem(px * c, per=act)


def _block_macs(m: _Meter, tag: str, px: int, in_c: int, out_c: int) -> None:
    b1, b2, b3 = branch_split(out_c)
    for width, k in ((b1, 3), (b2, 5)):
        _dwsep_macs(m, tag, px, in_c, width, k)
        _bn_act_flops(m, px, width)
        _dwsep_macs(m, tag, px, width, width, k)
        _bn_act_flops(m, px, width)
    m.mac(tag, px * in_c * b3)
    m.elem(px * b3)  # bias
    _bn_act_flops(m, px, b3)


def _kanlinear_macs(m: _Meter, tag: str, n_tok: int, cfg: ModelConfig, in_c: int, out_c: int):
    nb = cfg.grid_size + cfg.spline_order
    r = max(1, min(cfg.ranks.r, in_c, out_c))
    rf = max(1, min(cfg.ranks.r_f, out_c))
    m.mac(tag, n_tok * (r * in_c + out_c * r))  # low-rank base
    m.elem(n_tok * out_c, per=5)  # bias + silu
    m.mac(tag, n_tok * in_c * nb * (cfg.spline_order + 1) * SPLINE_MAC_CONST)  # basis eval
    if cfg.share_splines:
        m.elem(n_tok * in_c * nb)  # channel reduction (adds)
        m.mac(tag, n_tok * rf * nb)
    else:
        m.mac(tag, n_tok * rf * nb * in_c)
    m.mac(tag, n_tok * out_c * rf)
    m.elem(n_tok * out_c, per=3)  # two scale muls + combine add


def count_flops(cfg_or_model, height: int, width: int) -> CostReport:
    """Analytic per-op MAC count for one forward pass at batch size 1."""
    cfg: ModelConfig = cfg_or_model.cfg if hasattr(cfg_or_model, "cfg") else cfg_or_model
    if height % 32 or width % 32:
        raise ValueError("resolution must be divisible by 32")
    m = _Meter()

    for i, spec in enumerate(stage_specs(cfg.stage_channels)):
        px = (height >> (i + 1)) * (width >> (i + 1))
        _block_macs(m, "backbone", px, spec.in_channels, spec.out_channels)

    h5, w5 = height >> 5, width >> 5
    n_tok = h5 * w5
    c5 = cfg.stage_channels[-1]
    d, hid = cfg.kan_channels, cfg.kan_hidden
    if cfg.pre_kan_projection is not None:
        m.mac("enhance", n_tok * c5 * d)
        m.elem(n_tok * d)
    m.elem(n_tok * d, per=8)  # layernorm
    _kanlinear_macs(m, "enhance", n_tok, cfg, d, hid)
    m.mac("enhance", n_tok * hid * 9)  # depthwise mix
    _bn_act_flops(m, n_tok, hid, act=1)
    _kanlinear_macs(m, "enhance", n_tok, cfg, hid, d)
    m.mac("enhance", n_tok * d * 9)
    _bn_act_flops(m, n_tok, d, act=1)
    m.elem(n_tok * d)  # residual add
    m.mac("enhance", n_tok * d * cfg.fpn_width)
    m.elem(n_tok * cfg.fpn_width)

    for level, c in zip((4, 3, 2), (cfg.stage_channels[3], cfg.stage_channels[2], cfg.stage_channels[1])):
        px = (height >> level) * (width >> level)
        if cfg.fpn_conv == "dwsep":
            m.mac("topdown", px * c)
        m.mac("topdown", px * c * cfg.fpn_width)
        m.elem(px * cfg.fpn_width, per=2)  # bias + fusion add

    for level in (2, 3, 4, 5):
        px = (height >> level) * (width >> level)
        m.mac(f"head{level}", px * cfg.num_classes * cfg.fpn_width * 9)
        m.elem(px * cfg.num_classes)  # bias
    m.elem(height * width * cfg.num_classes, per=3)  # fused logit sum

    return CostReport(
        macs_total=sum(m.macs.values()),
        macs_by_module=m.macs,
        elementwise_flops=m.elemwise,
        resolution=(height, width),
    )


# -- activation memory -------------------------------------------------------------


def estimate_activation_memory(cfg_or_model, height: int, width: int, bytes_per_elem: int = 8) -> int:
    """Bytes of live activations under a keep-all-laterals liveness model.

    Counted maps: the input, every stage output c1..c5, the KAN token
    streams (block input/output plus the two hidden mixes), every pyramid
    map p2..p5, the per-level logits, and the fused full-resolution output
    with one upsampling scratch buffer.
    """
    cfg: ModelConfig = cfg_or_model.cfg if hasattr(cfg_or_model, "cfg") else cfg_or_model
    elems = 3 * height * width
    for i, c in enumerate(cfg.stage_channels):
        elems += c * (height >> (i + 1)) * (width >> (i + 1))
    n_tok = (height >> 5) * (width >> 5)
    elems += 2 * n_tok * cfg.kan_channels + 2 * n_tok * cfg.kan_hidden
    for level in (2, 3, 4, 5):
        px = (height >> level) * (width >> level)
        elems += cfg.fpn_width * px
        elems += cfg.num_classes * px
    elems += 2 * cfg.num_classes * height * width
    return elems * bytes_per_elem


def memory_with_params(cfg: ModelConfig, height: int, width: int, bytes_per_elem: int = 8) -> int:
    """Total inference footprint: parameters plus live activations."""
    return (
        predicted_params(cfg).params_total * bytes_per_elem
        + estimate_activation_memory(cfg, height, width, bytes_per_elem)
    )


def memory_scaling_factor(cfg: ModelConfig, resolution: int = 1024, bytes_per_elem: int = 8) -> float:
    """Footprint ratio for one 4x pixel step up to ``resolution``.

    This is the quantity the published memory table reports per model (its
    column equals each entry divided by the previous resolution's entry).
    """
    hi = memory_with_params(cfg, resolution, resolution, bytes_per_elem)
    lo = memory_with_params(cfg, resolution // 2, resolution // 2, bytes_per_elem)
    return hi / lo


# -- report formatting ---------------------------------------------------------------


def format_report(cfg: ModelConfig, model: Module | None, height: int, width: int) -> str:
    """Human-readable audit with the per-module breakdown used to calibrate."""
    pred = predicted_params(cfg)
    flops = count_flops(cfg, height, width)
    lines = [
        f"variant={cfg.variant} resolution={height}x{width}",
        "conventions: gmacs=multiply-accumulates (as published); "
        "gflops=2*macs+elementwise; float64 elements",
    ]
    if model is not None:
        built = count_params(model)
        lines.append(f"params_built={built.params_total}")
        if built.params_total != pred.params_total:
            lines.append(f"WARNING params_predicted={pred.params_total} disagrees")
    lines.append(f"params_total={pred.params_total} params_M={pred.params_total / 1e6:.4f}")
    for name in sorted(pred.params_by_module):
        lines.append(f"params.{name}={pred.params_by_module[name]}")
    lines.append(f"macs_total={flops.macs_total} gmacs={flops.gmacs:.4f}")
    for name in sorted(flops.macs_by_module):
        lines.append(f"macs.{name}={flops.macs_by_module[name]}")
    lines.append(f"flops_total={flops.flops_total} gflops={flops.gflops:.4f}")
    mem = memory_with_params(cfg, height, width)
    lines.append(f"memory_bytes={mem} memory_mb={mem / 2**20:.1f}")
    lines.append(f"memory_scaling_512_to_1024={memory_scaling_factor(cfg, 1024):.3f}")
    ratio_full = memory_with_params(cfg, 1024, 1024) / memory_with_params(cfg, 256, 256)
    lines.append(f"memory_ratio_256_to_1024={ratio_full:.3f}")
    return "\n".join(lines)
