"""Preset scaling rules, frozen against hand-derived values at width 1024.

With n_base = 256 the width factor is (1024/256) = 4, so every expected
number below is a short mental computation from the rule tables.
"""

import pytest

from widthlab import (
    LayerRole,
    Optimizer,
    ParamSpec,
    PresetName,
    layer_roles,
    preset_table_markdown,
    resolve_preset,
    scaled_init_variance,
    scaled_lr,
)

N = 1024
ETA = 0.4
D_IN = 100


def spec_for(preset, optimizer=Optimizer.SGD, alpha=None):
    return resolve_preset(preset, depth=3, optimizer=optimizer, alpha=alpha, base_lr=ETA)


def lrs(spec):
    return tuple(scaled_lr(spec, i, N) for i in range(3))


def variances(spec):
    fan_ins = (D_IN, N, N)
    return tuple(scaled_init_variance(spec, i, N, fan_in=f) for f, i in zip(fan_ins, range(3)))


def test_layer_roles():
    assert layer_roles(1) == [LayerRole.OUTPUT]
    assert layer_roles(2) == [LayerRole.INPUT, LayerRole.OUTPUT]
    assert layer_roles(4) == [
        LayerRole.INPUT, LayerRole.HIDDEN, LayerRole.HIDDEN, LayerRole.OUTPUT]
    with pytest.raises(ValueError):
        layer_roles(0)


def test_sp_flat_scaling():
    spec = spec_for(PresetName.SP, alpha=0.5)
    assert lrs(spec) == pytest.approx((0.2, 0.2, 0.2))
    assert variances(spec) == pytest.approx((2 / D_IN, 2 / N, 2 / N))
    # alpha = 0: width-independent learning rate everywhere.
    flat = spec_for(PresetName.SP, alpha=0.0)
    assert lrs(flat) == pytest.approx((ETA, ETA, ETA))


def test_mup_sgd_frozen_values():
    spec = spec_for(PresetName.MUP)
    # c = (-1, 0, +1): input LR grows with width, output LR shrinks.
    assert lrs(spec) == pytest.approx((1.6, 0.4, 0.1))
    # Output init variance carries the extra (n/n_base)^{-1}: 2/n * 1/4.
    assert variances(spec) == pytest.approx((2 / D_IN, 2 / N, 2 * 256 / N**2))


def test_mup_adam_frozen_values():
    spec = spec_for(PresetName.MUP, optimizer=Optimizer.ADAM)
    assert lrs(spec) == pytest.approx((0.4, 0.1, 0.1))
    assert variances(spec) == pytest.approx((2 / D_IN, 2 / N, 2 * 256 / N**2))


def test_ntp_frozen_values():
    spec = spec_for(PresetName.NTP)
    # Unit-gain init (the forward multipliers are folded in), mup-like LRs.
    assert variances(spec) == pytest.approx((1 / D_IN, 1 / N, 1 / N))
    assert lrs(spec) == pytest.approx((0.4, 0.1, 0.1))


def test_sp_full_align_frozen_values():
    spec = spec_for(PresetName.SP_FULL_ALIGN)
    assert variances(spec) == pytest.approx((2 / D_IN, 2 / N, 2 / N))
    assert lrs(spec) == pytest.approx((1.6, 0.4, 0.1))


def test_musoli_halves_output_exponent():
    sgd = spec_for(PresetName.MUSOLI)
    assert variances(sgd) == pytest.approx((2 / D_IN, 2 / N, 2 / N))
    assert lrs(sgd) == pytest.approx((1.6, 0.4, 0.4 * 4**-0.5))
    adam = spec_for(PresetName.MUSOLI, optimizer=Optimizer.ADAM)
    assert lrs(adam) == pytest.approx((0.4, 0.1, 0.4 * 4**-0.5))


def test_everything_is_identity_at_base_width():
    # At n = n_base all width factors vanish; presets differ only through
    # gains and the NTP unit-init convention.
    for preset in PresetName:
        alpha = 0.7 if preset is PresetName.SP else None
        spec = spec_for(preset, alpha=alpha)
        for i in range(3):
            assert scaled_lr(spec, i, 256) == pytest.approx(ETA)


def test_validation_errors():
    with pytest.raises(ValueError):
        resolve_preset(PresetName.SP, depth=3)  # SP needs alpha
    with pytest.raises(ValueError):
        resolve_preset(PresetName.MUP, depth=3, alpha=0.5)  # alpha is SP-only
    with pytest.raises(ValueError):
        resolve_preset(PresetName.NTP, depth=3, optimizer=Optimizer.ADAM)
    with pytest.raises(ValueError):
        resolve_preset(PresetName.MUP, depth=0)
    with pytest.raises(ValueError):
        resolve_preset(PresetName.MUP, depth=3, base_lr=0.0)


def test_custom_gain_and_base():
    spec = resolve_preset(PresetName.SP, depth=2, activation_gain=1.5,
                          alpha=0.0, base_lr=0.1, n_base=128)
    assert scaled_init_variance(spec, 0, 512, fan_in=10) == pytest.approx(0.15)
    assert spec.n_base == 128
    # NTP ignores the gain argument by convention.
    ntp = resolve_preset(PresetName.NTP, depth=2, activation_gain=3.0, base_lr=0.1)
    assert scaled_init_variance(ntp, 0, 512, fan_in=10) == pytest.approx(0.1)


def test_spec_is_frozen_dataclass():
    spec = spec_for(PresetName.MUP)
    assert isinstance(spec, ParamSpec)
    assert spec.depth == 3
    with pytest.raises(AttributeError):
        spec.base_lr = 1.0


def test_preset_table_lists_every_combo():
    table = preset_table_markdown()
    for preset in PresetName:
        assert preset.value in table
    # NTP appears for SGD only; 8 other combos plus it = 9 blocks of 3 rows.
    rows = [ln for ln in table.splitlines() if ln.startswith("| ") and "preset" not in ln]
    assert len(rows) == 27
    assert "alpha" in table  # SP's symbolic exponent
