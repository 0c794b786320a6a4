import base64
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xae.labels import PartitionError, PartitionSpec
from xae.model import ModelError, decode, encode, init, load, reconstruct, save, sigmoid


def zero_model(spec, m, act_enc="sigmoid", act_dec="linear"):
    model = init(spec, m, 0, act_enc, act_dec)
    model.weights[:] = 0.0
    return model


def test_init_deterministic_and_bounded():
    spec = PartitionSpec([0, 1, 2], [[0, 1], [1, 2]], [([0], 16), ([1], 16), ([2], 16)])
    a, b = init(spec, 784, 7), init(spec, 784, 7)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.b_enc, np.zeros(48)) and np.array_equal(a.b_dec, np.zeros(784))
    assert np.abs(a.weights).max() <= np.sqrt(6.0 / (784 + 48))
    assert not np.array_equal(a.weights, init(spec, 784, 8).weights)


def test_init_rejects_bad_input(toy_spec):
    with pytest.raises(ModelError):
        init(toy_spec, 0)
    with pytest.raises(PartitionError):
        init(PartitionSpec([0], [[0]], [([3], 1)]), 4)


def test_encode_examples(toy_spec):
    x = np.linspace(0, 1, 5)
    assert np.allclose(encode(zero_model(toy_spec, 5), x).values, 0.5)
    assert np.array_equal(encode(zero_model(toy_spec, 5, "linear"), x).values, np.zeros(8))


def test_encode_basis_vector_picks_weight_row(rng):
    spec = PartitionSpec([0], [[0]], [([0], 4)])
    model = init(spec, 3, 0, "linear", "linear")
    model.weights[:] = rng.normal(size=(3, 4))
    assert np.array_equal(encode(model, np.array([1.0, 0.0, 0.0])).values, model.weights[0])


def test_encode_dimension_mismatch(toy_spec):
    with pytest.raises(ModelError):
        encode(init(toy_spec, 5), np.zeros(4))


def test_activation_segments_concatenate(toy_spec, rng):
    z = encode(init(toy_spec, 6, 1), rng.random((4, 6)))
    assert np.array_equal(np.concatenate(z.segments(), axis=-1), z.values)
    assert [s.shape[1] for s in z.segments()] == [3, 2, 3]


def test_decode_examples(toy_spec, rng):
    model = init(toy_spec, 6, 3, "sigmoid", "linear")
    assert np.array_equal(decode(zero_model(toy_spec, 6), np.zeros(8), {0, 1}), np.zeros(6))
    z = rng.random(8)
    y = decode(model, z, {0, 1})
    z2 = z.copy()
    z2[5:] = rng.random(3)  # T2 is inactive for S0
    assert np.array_equal(decode(model, z2, {0, 1}), y)
    with pytest.raises(PartitionError):
        decode(model, z, {0, 2})


def test_decode_single_segment_is_dense_multiply(rng):
    spec = PartitionSpec([0], [[0]], [([0], 4)])
    model = init(spec, 5, 0, "linear", "linear")
    model.weights[:] = rng.normal(size=(5, 4))
    z = rng.normal(size=4)
    expected = [sum(model.weights[p, m] * z[m] for m in range(4)) for p in range(5)]
    assert np.allclose(decode(model, z, {0}), expected, rtol=0, atol=1e-14)


def test_reconstruct_uses_only_active_segments(toy_spec, rng):
    model = init(toy_spec, 6, 2)
    x = rng.random(6)
    y = reconstruct(model, x, {0, 1})
    z = sigmoid(x @ model.weights)
    mask = np.r_[np.ones(5), np.zeros(3)]
    assert np.allclose(y, (z * mask) @ model.weights.T, atol=1e-14)
    assert np.array_equal(reconstruct(zero_model(toy_spec, 6, "linear", "linear"), x, {1, 2}), np.zeros(6))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([{0, 1}, {1, 2}]))
def test_partial_connectivity_property(seed, group):
    spec = PartitionSpec([0, 1, 2], [[0, 1], [1, 2]], [([0], 2), ([1], 3), ([2], 2)])
    r = np.random.default_rng(seed)
    model = init(spec, 5, seed, "sigmoid", "sigmoid")
    z = r.random(7)
    y = decode(model, z, group)
    for j, seg in enumerate(spec.segments):
        if not set(seg.labels) & group:
            z2 = z.copy()
            z2[spec.segment_slice(j)] = r.normal(size=seg.width) * 100
            assert np.array_equal(decode(model, z2, group), y)


def test_tied_weights_single_store(toy_spec):
    model = init(toy_spec, 4, 0, "linear", "linear")
    model.block(2)[:] = 0.0
    model.block(2)[1, 0] = 3.0
    z = np.zeros(8)
    z[5] = 1.0
    assert decode(model, z, {1, 2})[1] == 3.0
    assert encode(model, np.array([0.0, 1.0, 0.0, 0.0])).segment(2)[0] == 3.0


def test_save_load_round_trip_at_f32(tmp_path, toy_spec, rng):
    model = init(toy_spec, 6, 5, geometry=(1, 2, 3))
    model.b_enc[:] = rng.normal(size=8)
    model.hyperparams = {"lambda": 1.0}
    save(model, tmp_path / "m.json")
    back = load(tmp_path / "m.json")
    assert np.array_equal(back.weights, model.weights.astype(np.float32).astype(np.float64))
    assert np.array_equal(back.b_enc, model.b_enc.astype(np.float32))
    assert back.geometry == (1, 2, 3) and back.hyperparams == {"lambda": 1.0}
    assert back.spec.to_dict() == toy_spec.to_dict()
    # f32 values survive a second trip bit for bit
    save(back, tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_model_file_layout(tmp_path, toy_spec):
    model = init(toy_spec, 3, 0)
    save(model, tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["format_version"] == 1 and d["act_enc"] == "sigmoid" and d["act_dec"] == "linear"
    raw = np.frombuffer(base64.b64decode(d["blocks"][1]["weights"]), dtype="<f4")
    # column-major: first n entries are the first column of the block
    assert np.array_equal(raw[:3], model.block(1)[:, 0].astype(np.float32))


def test_load_rejects_foreign_files(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "something"}')
    with pytest.raises(ModelError):
        load(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("not json")
    with pytest.raises(ModelError):
        load(tmp_path / "y.json")


def test_sigmoid_stable_at_extremes():
    out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.array_equal(out, [0.0, 0.5, 1.0])
