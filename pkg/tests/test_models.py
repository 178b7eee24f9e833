import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from epsnet.models import ArchitectureSpec, ModelGraph, build_model, parameter_count, predict
from epsnet.nn import Checkpoint, TcnSpec, Tensor, grad_check, mse_loss, tcn_forward
from epsnet.preprocess import SampleArrays


def tiny_spec(kind="lstm", **kw):
    base = dict(kind=kind, quarterly_shape=(5, 3), shares_flat_dim=6, shares_tower_dims=(4, 3), head_dims=(3, 1),
                lstm_dims=(4, 2), tcn=TcnSpec(filters=3, kernel=3, dilations=(1, 2)), post_tcn_dense=2, dropout=0.0)
    base.update(kw)
    return ArchitectureSpec(**base)


def random_arrays(n, spec, seed=0):
    rng = np.random.default_rng(seed)
    w, f = spec.quarterly_shape
    return SampleArrays(
        quarters=rng.normal(size=(n, w, f)), market=rng.normal(size=(n, spec.shares_flat_dim)),
        labels=rng.normal(size=n), persistent=rng.normal(size=n), analyst=rng.normal(size=n),
        firms=np.array([f"F{i % 5}" for i in range(n)]), anchor_dates=np.array(["2015-03-31"] * n),
        label_dates=np.array(["2015-06-30"] * n), groups=np.array(["nonfinancial"] * n))


def test_default_lstm_shapes():
    s = ArchitectureSpec("lstm").layer_shapes()
    assert s["lstm1.kernel"] == (19, 4 * 76) and s["lstm1.recurrent_kernel"] == (76, 4 * 76)
    assert s["lstm2.kernel"] == (76, 4 * 38) and s["lstm2.recurrent_kernel"] == (38, 4 * 38)
    assert [s[f"head{i}.weights"] for i in range(3)] == [(38 + 220, 19), (19, 8), (8, 1)]


def test_default_tcn_shapes():
    s = ArchitectureSpec("tcn").layer_shapes()
    assert s["tcn.block0.conv1.kernel"] == (3, 19, 32)
    assert s["tcn.block3.conv2.kernel"] == (3, 32, 32)
    assert s["tcn.block0.skip.kernel"] == (1, 19, 32)
    assert s["post_tcn.weights"] == (32, 38)


def test_shares_tower_identical_across_kinds():
    for kind in ("lstm", "tcn"):
        s = ArchitectureSpec(kind).layer_shapes()
        assert [s[f"shares{i}.weights"] for i in range(3)] == [(220, 660), (660, 440), (440, 220)]
        assert [s[f"shares{i}.bias"] for i in range(3)] == [(660,), (440,), (220,)]


@pytest.mark.parametrize("kind", ["lstm", "tcn"])
def test_parameter_count_matches_built_model(kind):
    spec = ArchitectureSpec(kind)
    assert build_model(spec, 0).parameter_count() == parameter_count(spec)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["lstm", "tcn"]), st.integers(1, 3), st.integers(1, 5), st.lists(st.integers(1, 6), min_size=1, max_size=3),
       st.integers(1, 5), st.integers(1, 4))
def test_parameter_count_property(kind, window, n_feat, tower, filters, n_dil):
    spec = ArchitectureSpec(kind, quarterly_shape=(window, n_feat), shares_flat_dim=4, shares_tower_dims=tuple(tower),
                            head_dims=(2, 1), lstm_dims=(3, 2), tcn=TcnSpec(filters=filters, dilations=tuple(2 ** i for i in range(n_dil))),
                            post_tcn_dense=2)
    assert build_model(spec, 1).parameter_count() == parameter_count(spec)


def test_spec_validation():
    with pytest.raises(ValueError):
        tiny_spec(kind="gru")
    with pytest.raises(ValueError):
        tiny_spec(head_dims=(3, 2))
    with pytest.raises(ValueError, match="receptive field"):
        tiny_spec(kind="tcn", quarterly_shape=(20, 3), tcn=TcnSpec(dilations=(1,)))


def test_spec_dict_round_trip():
    for kind in ("lstm", "tcn"):
        spec = ArchitectureSpec(kind)
        assert ArchitectureSpec.from_dict(spec.to_dict()) == spec


def test_fingerprints_differ_by_kind():
    assert ArchitectureSpec("lstm").fingerprint != ArchitectureSpec("tcn").fingerprint


def test_lstm_output_shape_batch_seven():
    spec = ArchitectureSpec("lstm")
    model = build_model(spec, 0)
    rng = np.random.default_rng(0)
    out = model.forward(rng.normal(size=(7, 20, 19)), rng.normal(size=(7, 220)))
    assert out.shape == (7, 1)


def test_same_seed_bit_identical_parameters():
    for kind in ("lstm", "tcn"):
        a, b = build_model(tiny_spec(kind), 5), build_model(tiny_spec(kind), 5)
        c = build_model(tiny_spec(kind), 6)
        for name in a.params:
            assert_array_equal(a.params[name].data, b.params[name].data)
        assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params)


@pytest.mark.parametrize("kind", ["lstm", "tcn"])
def test_predict_arity_purity_and_partition_invariance(kind):
    spec = tiny_spec(kind)
    model = build_model(spec, 2)
    data = random_arrays(11, spec)
    full = predict(model, data)
    assert full.shape == (11,)
    assert_array_equal(predict(model, data), full)
    halves = np.concatenate([predict(model, data.subset(slice(0, 6))), predict(model, data.subset(slice(6, 11)))])
    assert_allclose(halves, full, rtol=1e-13, atol=1e-15)
    assert_allclose(predict(model, data, batch_size=3), full, rtol=1e-13, atol=1e-15)
    dup = data.subset(np.array([4, 4, 1]))
    out = predict(model, dup)
    assert out[0] == out[1]


def test_predict_requires_eval_mode():
    model = build_model(tiny_spec(), 0).train()
    with pytest.raises(ValueError):
        predict(model, random_arrays(2, tiny_spec()))


def test_train_mode_dropout_changes_output():
    spec = tiny_spec(dropout=0.5)
    model = build_model(spec, 0)
    d = random_arrays(4, spec)
    base = model.eval().forward(d.quarters, d.market).data
    noisy = model.train().forward(d.quarters, d.market, np.random.default_rng(0)).data
    assert not np.array_equal(base, noisy)


@pytest.mark.parametrize("kind", ["lstm", "tcn"])
def test_full_graph_gradient(kind):
    spec = tiny_spec(kind)
    model = build_model(spec, 3)
    d = random_arrays(3, spec)
    err = grad_check(lambda: mse_loss(model.forward(d.quarters, d.market), d.labels), model.parameters())
    assert err < 1e-5


def test_checkpoint_round_trip_predictions(tmp_path):
    for kind in ("lstm", "tcn"):
        spec = tiny_spec(kind)
        model = build_model(spec, 4, np.float32)
        ckpt = model.to_checkpoint({"seed": 4})
        ckpt.save(tmp_path / f"{kind}.json")
        back = ModelGraph.from_checkpoint(Checkpoint.load(tmp_path / f"{kind}.json", spec.fingerprint))
        assert back.dtype == np.float32
        d = random_arrays(5, spec)
        assert_array_equal(predict(back, d), predict(model, d))


def test_forward_rejects_wrong_input_shape():
    model = build_model(tiny_spec(), 0)
    with pytest.raises(ValueError):
        model.forward(np.zeros((2, 4, 3)), np.zeros((2, 6)))
    with pytest.raises(ValueError):
        model.forward(np.zeros((2, 5, 3)), np.zeros((3, 6)))


def test_short_receptive_field_ignores_distant_inputs():
    spec = TcnSpec(filters=3, kernel=3, dilations=(1,))
    rng = np.random.default_rng(0)
    params = {k: Tensor(v) for k, v in spec.init_parameters(2, rng).items()}
    reach = spec.effective_receptive_field
    assert (spec.receptive_field, reach) == (3, 5)
    x = rng.normal(size=(2, 10, 2))
    base = tcn_forward(Tensor(x), spec, params).data[:, -1]
    far = x.copy()
    far[:, :10 - reach] = rng.normal(size=(2, 10 - reach, 2)) * 100
    assert_array_equal(tcn_forward(Tensor(far), spec, params).data[:, -1], base)
    near = x.copy()
    near[:, 10 - reach] += 1.0
    assert not np.array_equal(tcn_forward(Tensor(near), spec, params).data[:, -1], base)
