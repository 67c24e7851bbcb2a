"""Width-scaling parameterizations: per-layer init variances and learning rates.

A parameterization assigns each weight matrix, classified by how its shape
scales with width n (input-like d_in -> n, hidden-like n -> n, output-like
n -> d_out), an init variance and a learning rate:

    variance(layer l) = gain_l / fan_in * (n / n_base)^{-extra_l}
    lr(layer l)       = eta * lr_mult_l * (n / n_base)^{-c_l}

All width scaling is relative to n_base (default 256) so constants stay
comparable across widths: at n = n_base every width-scaling factor is 1.

Presets (SGD unless stated):

    SP            He init everywhere; one global exponent alpha on the LR.
    MuP           SP init except output variance gets an extra (n/n_base)^{-1}
                  (entry scale n^{-1}); LR exponents input -1, hidden 0,
                  output +1. With Adam: MuP init, LR exponents 0/1/1.
    NTP           Unit-variance init with fan_in^{-1/2} forward multipliers
                  folded into init and LR (exact reparameterization):
                  variance 1/fan_in, LR exponents 0/1/1. SGD only.
    SPFullAlign   SP init with MuP learning rates.
    MUSOLI        SPFullAlign with output LR exponent 1/2 instead of 1,
                  matching the output update scale to the logit growth
                  caused by the large output init.

`preset_table_markdown` renders the full rule table as the human-readable
reference document.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

DEFAULT_BASE_WIDTH = 256
DEFAULT_RELU_GAIN = 2.0  # He gain for ReLU


class LayerRole(enum.Enum):
    INPUT = "input"    # fixed fan_in, fan_out scales with width
    HIDDEN = "hidden"  # both dims scale with width
    OUTPUT = "output"  # fan_in scales with width, fixed fan_out


class Optimizer(enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class PresetName(enum.Enum):
    SP = "sp"
    MUP = "mup"
    NTP = "ntp"
    SP_FULL_ALIGN = "sp_full_align"
    MUSOLI = "musoli"


@dataclass(frozen=True)
class LayerRule:
    """Scaling rule for one weight matrix."""

    role: LayerRole
    init_gain: float        # gain in variance = gain / fan_in * width factor
    init_extra_exponent: float  # extra (n/n_base)^{-e} on top of 1/fan_in
    lr_mult: float
    lr_exponent: float      # c_l in eta_l = eta * mult * (n/n_base)^{-c_l}


@dataclass(frozen=True)
class ParamSpec:
    """Fully resolved parameterization for one architecture depth."""

    preset: PresetName
    optimizer: Optimizer
    layers: tuple[LayerRule, ...]
    base_lr: float
    n_base: int
    alpha: float | None = None  # the SP global exponent, informational

    @property
    def depth(self) -> int:
        return len(self.layers)


def layer_roles(depth: int) -> list[LayerRole]:
    """Role per weight matrix for an MLP with `depth` weight matrices."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if depth == 1:
        # Degenerate single-matrix net: no width-scaling dims; treat as
        # output-like so LR rules stay defined.
        return [LayerRole.OUTPUT]
    return (
        [LayerRole.INPUT]
        + [LayerRole.HIDDEN] * (depth - 2)
        + [LayerRole.OUTPUT]
    )


def _lr_exponents(preset: PresetName, optimizer: Optimizer, alpha: float | None):
    """Per-role LR exponents {role: c}."""
    if preset is PresetName.SP:
        if alpha is None:
            raise ValueError("SP preset requires alpha")
        return {role: float(alpha) for role in LayerRole}
    mup_like = {
        Optimizer.SGD: {LayerRole.INPUT: -1.0, LayerRole.HIDDEN: 0.0, LayerRole.OUTPUT: 1.0},
        Optimizer.ADAM: {LayerRole.INPUT: 0.0, LayerRole.HIDDEN: 1.0, LayerRole.OUTPUT: 1.0},
    }
    if preset in (PresetName.MUP, PresetName.SP_FULL_ALIGN):
        return dict(mup_like[optimizer])
    if preset is PresetName.MUSOLI:
        exps = dict(mup_like[optimizer])
        exps[LayerRole.OUTPUT] = 0.5
        return exps
    if preset is PresetName.NTP:
        return {LayerRole.INPUT: 0.0, LayerRole.HIDDEN: 1.0, LayerRole.OUTPUT: 1.0}
    raise ValueError(f"unknown preset {preset}")


def resolve_preset(
    name: PresetName,
    depth: int,
    activation_gain: float = DEFAULT_RELU_GAIN,
    optimizer: Optimizer = Optimizer.SGD,
    alpha: float | None = None,
    base_lr: float = 0.1,
    n_base: int = DEFAULT_BASE_WIDTH,
) -> ParamSpec:
    """Resolve a preset to concrete per-layer rules.

    `activation_gain` is the He gain c_phi (2 for ReLU); NTP ignores it and
    uses gain 1 per its unit-init convention. Adam is rejected for NTP.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if base_lr <= 0:
        raise ValueError("base_lr must be positive")
    if n_base < 1:
        raise ValueError("n_base must be >= 1")
    if name is PresetName.NTP and optimizer is Optimizer.ADAM:
        raise ValueError("NTP with Adam is not supported")
    if name is not PresetName.SP and alpha is not None:
        raise ValueError(f"alpha only applies to the SP preset, not {name.value}")

    lr_exp = _lr_exponents(name, optimizer, alpha)
    gain = 1.0 if name is PresetName.NTP else float(activation_gain)
    rules = []
    for role in layer_roles(depth):
        extra = 0.0
        if name is PresetName.MUP and role is LayerRole.OUTPUT:
            extra = 1.0  # output entries scale as n^{-1}: var = gain*n_base/n^2
        rules.append(
            LayerRule(
                role=role,
                init_gain=gain,
                init_extra_exponent=extra,
                lr_mult=1.0,
                lr_exponent=lr_exp[role],
            )
        )
    return ParamSpec(
        preset=name,
        optimizer=optimizer,
        layers=tuple(rules),
        base_lr=float(base_lr),
        n_base=int(n_base),
        alpha=None if alpha is None else float(alpha),
    )


def scaled_lr(spec: ParamSpec, layer_index: int, width: int) -> float:
    """Learning rate for layer `layer_index` (0-based) at width `width`."""
    rule = spec.layers[layer_index]
    return spec.base_lr * rule.lr_mult * (width / spec.n_base) ** (-rule.lr_exponent)


def scaled_init_variance(spec: ParamSpec, layer_index: int, width: int, fan_in: int) -> float:
    """Init variance for layer `layer_index` at width `width`.

    `fan_in` is the layer's actual input dimension (d_in for the input
    layer, the width for hidden/output layers).
    """
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rule = spec.layers[layer_index]
    var = rule.init_gain / fan_in
    if rule.init_extra_exponent != 0.0:
        var *= (width / spec.n_base) ** (-rule.init_extra_exponent)
    return var


def _b_exponent(rule: LayerRule) -> float:
    """Width exponent b of the init variance (var ~ n^{-b}), for the table."""
    fan_in_scales = rule.role in (LayerRole.HIDDEN, LayerRole.OUTPUT)
    return (1.0 if fan_in_scales else 0.0) + rule.init_extra_exponent


def preset_table_markdown() -> str:
    """Reference table of (role, b_l, c_l) for every preset/optimizer combo."""
    lines = [
        "# Parameterization reference",
        "",
        "Init variance scales as n^{-b} (entry scale n^{-b/2}); the learning",
        "rate for a layer is eta * (n/n_base)^{-c}. SP's single exponent is",
        "shown as the symbolic alpha.",
        "",
        "| preset | optimizer | layer role | b (init) | c (learning rate) |",
        "|---|---|---|---|---|",
    ]
    combos = [
        (PresetName.SP, Optimizer.SGD),
        (PresetName.SP, Optimizer.ADAM),
        (PresetName.MUP, Optimizer.SGD),
        (PresetName.MUP, Optimizer.ADAM),
        (PresetName.NTP, Optimizer.SGD),
        (PresetName.SP_FULL_ALIGN, Optimizer.SGD),
        (PresetName.SP_FULL_ALIGN, Optimizer.ADAM),
        (PresetName.MUSOLI, Optimizer.SGD),
        (PresetName.MUSOLI, Optimizer.ADAM),
    ]
    for preset, opt in combos:
        alpha = 0.0 if preset is PresetName.SP else None
        spec = resolve_preset(preset, depth=3, optimizer=opt, alpha=alpha)
        for rule in spec.layers:
            c = "alpha" if preset is PresetName.SP else f"{rule.lr_exponent:g}"
            lines.append(
                f"| {preset.value} | {opt.value} | {rule.role.value} "
                f"| {_b_exponent(rule):g} | {c} |"
            )
    lines.append("")
    return "\n".join(lines)
