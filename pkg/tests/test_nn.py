import numpy as np
import pytest

from morphoreg import ops
from morphoreg.nn import (
    Conv3D,
    MaxPool3D,
    NetworkSpec,
    ReLU,
    ResBlock,
    build_model,
    desk_network,
    model_forward,
    res_block_forward,
    single_head,
)
from morphoreg.tape import Tape, Tensor
from morphoreg.validation import ValidationError

from _gradcheck import autodiff_grads


def tiny_network(n_outputs=3, dims=(8, 8, 8)):
    return NetworkSpec(
        n_outputs=n_outputs,
        input_dims=dims,
        in_channels=1,
        stem=(Conv3D(1, 4, 3, 1), ReLU(), MaxPool3D(2, 2)),
        stages=((ResBlock(4, 1),), (ResBlock(8, 2),)),
    ).validate()


# ---------------------------------------------------------------------------
# Spec validation


def test_desk_network_validates_and_has_four_heads():
    spec = desk_network()
    assert spec.n_heads == 4
    assert spec.stage_channels() == (16, 32, 64, 128)


def test_spec_rejects_channel_chaining_error_with_layer_index():
    spec = NetworkSpec(
        n_outputs=2,
        input_dims=(8, 8, 8),
        stem=(Conv3D(1, 4, 3, 1), Conv3D(8, 4, 3, 1)),
        stages=((ResBlock(4, 1),),),
    )
    with pytest.raises(ValidationError) as err:
        spec.validate()
    assert "stem layer 1" in str(err.value)


def test_spec_rejects_pool_collapsing_below_one_voxel():
    spec = NetworkSpec(
        n_outputs=2,
        input_dims=(4, 4, 4),
        stem=(Conv3D(1, 2, 3, 1), MaxPool3D(2, 2), MaxPool3D(2, 2), MaxPool3D(2, 2)),
        stages=((ResBlock(2, 1),),),
    )
    with pytest.raises(ValidationError):
        spec.validate()


def test_spec_rejects_bad_resblock_stride():
    spec = NetworkSpec(
        n_outputs=2,
        input_dims=(8, 8, 8),
        stem=(Conv3D(1, 2, 3, 1),),
        stages=((ResBlock(2, 3),),),
    )
    with pytest.raises(ValidationError):
        spec.validate()


def test_spec_round_trips_through_dict():
    spec = desk_network(tap_stages=(1, 3))
    again = NetworkSpec.from_dict(spec.to_dict())
    assert again == spec


def test_single_head_taps_only_deepest_stage():
    spec = single_head(desk_network())
    assert spec.n_heads == 1
    assert spec.taps() == (3,)


# ---------------------------------------------------------------------------
# build_model


def test_build_model_is_deterministic_per_seed():
    spec = tiny_network()
    a = build_model(spec, seed=5)
    b = build_model(spec, seed=5)
    c = build_model(spec, seed=6)
    assert a.names() == b.names()
    for name in a.names():
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert any((a[n].data != c[n].data).any() for n in a.names() if n.endswith("weight"))


def test_alpha_initialized_to_zeros_gives_uniform_mixture():
    state = build_model(tiny_network(), seed=0)
    np.testing.assert_array_equal(state["alpha"].data, 0.0)
    rng = np.random.default_rng(0)
    batch = rng.normal(size=(2, 1, 8, 8, 8)).astype(np.float32)
    result = model_forward(state, batch)
    np.testing.assert_allclose(
        result.combined.data, result.per_head.data.mean(axis=0), rtol=1e-5, atol=1e-6
    )


def test_default_desk_model_forward_passes_32cubed():
    state = build_model(desk_network(), seed=1)
    batch = np.zeros((1, 1, 32, 32, 32), dtype=np.float32)
    result = model_forward(state, batch)
    assert result.per_head.shape == (4, 1, 12)
    assert result.combined.shape == (1, 12)


def test_desk_parameter_count_is_stable():
    # regression pin: stem 448, stages 13856+42080+168128+672128,
    # heads 204+396+780+1548, alpha 48
    state = build_model(desk_network(), seed=0)
    assert state.n_parameters == 899_616


def test_flatten_set_flat_round_trip_is_exact():
    state = build_model(tiny_network(), seed=2)
    rng = np.random.default_rng(3)
    vec = rng.normal(size=state.n_parameters).astype(np.float32)
    state.set_flat(vec)
    np.testing.assert_array_equal(state.flatten(), vec)


def test_set_flat_rejects_wrong_length():
    state = build_model(tiny_network(), seed=2)
    with pytest.raises(ValidationError):
        state.set_flat(np.zeros(3, dtype=np.float32))


# ---------------------------------------------------------------------------
# Residual block


def test_res_block_zeroed_f_is_pure_skip():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(1, 3, 5, 5, 5)))
    zeros_w = Tensor(np.zeros((3, 3, 3, 3, 3)))
    zeros_b = Tensor(np.zeros(3))
    out = res_block_forward(x, zeros_w, zeros_b, zeros_w, zeros_b, stride=1)
    np.testing.assert_allclose(out.data, np.maximum(x.data, 0), rtol=1e-6)


def test_res_block_identity_projection_matches_pure_skip():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(1, 3, 5, 5, 5)))
    zeros_w = Tensor(np.zeros((3, 3, 3, 3, 3)))
    zeros_b = Tensor(np.zeros(3))
    eye = np.zeros((3, 3, 1, 1, 1), dtype=np.float32)
    for c in range(3):
        eye[c, c, 0, 0, 0] = 1.0
    out = res_block_forward(
        x, zeros_w, zeros_b, zeros_w, zeros_b, Tensor(eye), Tensor(np.zeros(3)), stride=1
    )
    np.testing.assert_allclose(out.data, np.maximum(x.data, 0), rtol=1e-6)


def test_res_block_gradient_flows_through_both_branches():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 2, 4, 4, 4))
    w1 = rng.normal(size=(2, 2, 3, 3, 3)) * 0.2
    b1 = rng.normal(size=2) * 0.1
    w2 = rng.normal(size=(2, 2, 3, 3, 3)) * 0.2
    b2 = rng.normal(size=2) * 0.1
    target = rng.normal(size=(1, 2, 4, 4, 4))

    def with_skip(tape, xt, w1t, b1t, w2t, b2t):
        out = res_block_forward(xt, w1t, b1t, w2t, b2t, stride=1, tape=tape)
        return ops.mse_loss(out, Tensor(target, dtype=xt.dtype), tape=tape)

    def without_skip(tape, xt, w1t, b1t, w2t, b2t):
        h = ops.relu(ops.conv3d(xt, w1t, b1t, stride=1, padding=1, tape=tape), tape=tape)
        h = ops.conv3d(h, w2t, b2t, stride=1, padding=1, tape=tape)
        out = ops.relu(h, tape=tape)
        return ops.mse_loss(out, Tensor(target, dtype=xt.dtype), tape=tape)

    g_full = autodiff_grads(with_skip, [x, w1, b1, w2, b2], np.float64)
    g_chop = autodiff_grads(without_skip, [x, w1, b1, w2, b2], np.float64)
    # removing the skip changes the input gradient
    assert np.abs(g_full[0] - g_chop[0]).max() > 1e-6


def test_res_block_shortcut_requires_shape_preservation():
    x = Tensor(np.zeros((1, 2, 4, 4, 4)))
    w = Tensor(np.zeros((4, 2, 3, 3, 3)))
    b = Tensor(np.zeros(4))
    w2 = Tensor(np.zeros((4, 4, 3, 3, 3)))
    b2 = Tensor(np.zeros(4))
    with pytest.raises(ValidationError):
        res_block_forward(x, w, b, w2, b2, stride=1)  # channel change, no projection


# ---------------------------------------------------------------------------
# Multi-head forward


def test_identical_heads_make_combined_equal_to_heads():
    state = build_model(tiny_network(), seed=7)
    # zero both head weight matrices, set equal biases: every head emits bias
    for h in range(2):
        state[f"head{h}.weight"].data[...] = 0.0
        state[f"head{h}.bias"].data[...] = [1.0, -2.0, 0.5]
    rng = np.random.default_rng(8)
    state["alpha"].data[...] = rng.normal(size=state["alpha"].shape)
    batch = rng.normal(size=(3, 1, 8, 8, 8)).astype(np.float32)
    result = model_forward(state, batch)
    np.testing.assert_allclose(result.combined.data, [[1.0, -2.0, 0.5]] * 3, rtol=1e-5)


def test_alpha_saturation_selects_single_head():
    state = build_model(tiny_network(), seed=9)
    alpha = state["alpha"].data
    alpha[...] = 0.0
    alpha[:, 1] = [40.0, -40.0]  # column 1 saturates onto head 0
    rng = np.random.default_rng(10)
    batch = rng.normal(size=(2, 1, 8, 8, 8)).astype(np.float32)
    result = model_forward(state, batch)
    np.testing.assert_allclose(
        result.combined.data[:, 1], result.per_head.data[0, :, 1], atol=1e-6
    )


def test_combined_lies_within_per_head_envelope():
    rng = np.random.default_rng(11)
    for trial in range(20):
        state = build_model(tiny_network(), seed=100 + trial)
        state["alpha"].data[...] = rng.normal(scale=2.0, size=state["alpha"].shape)
        batch = rng.normal(size=(2, 1, 8, 8, 8)).astype(np.float32)
        result = model_forward(state, batch)
        lo = result.per_head.data.min(axis=0)
        hi = result.per_head.data.max(axis=0)
        assert (result.combined.data >= lo - 1e-5).all()
        assert (result.combined.data <= hi + 1e-5).all()


def test_forward_deterministic_for_fixed_model_and_batch():
    state = build_model(tiny_network(), seed=12)
    rng = np.random.default_rng(13)
    batch = rng.normal(size=(2, 1, 8, 8, 8)).astype(np.float32)
    a = model_forward(state, batch).combined.data
    b = model_forward(state, batch).combined.data
    assert (a == b).all()


def test_forward_rejects_wrong_spatial_dims():
    state = build_model(tiny_network(), seed=14)
    with pytest.raises(ValidationError):
        model_forward(state, np.zeros((1, 1, 16, 16, 16), dtype=np.float32))


def test_forward_with_tape_yields_gradients_for_all_parameters():
    state = build_model(tiny_network(), seed=15)
    rng = np.random.default_rng(16)
    batch = rng.normal(size=(2, 1, 8, 8, 8)).astype(np.float32)
    target = Tensor(rng.normal(size=(2, 3)).astype(np.float32))
    tape = Tape()
    result = model_forward(state, batch, tape=tape)
    loss = ops.mse_loss(result.combined, target, tape=tape)
    grads = tape.backward(loss)
    nonzero = 0
    for name, watched in result.params.items():
        g = grads.get(watched)
        assert g.shape == state[name].shape
        nonzero += (g != 0).any()
    assert nonzero >= len(state.names()) - 1  # alpha may be tiny but present
