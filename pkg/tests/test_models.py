import numpy as np
import pytest

from flowfuse.autodiff import ShapeError, Tape
from flowfuse.graphbuild import make_samples, series_from_counts
from flowfuse.ingest import Platform, ZoneRegistry
from flowfuse.layers import Dense, LSTMCell, RNNCell
from flowfuse.models import (
    BASELINES, VARIANTS, CheckpointError, Forecaster, ModelConfig, baseline_forward,
    encode_batch, load_checkpoint, load_model, mse_loss, save_checkpoint, spatial_embed,
    stcgef_forward, variant_forward,
)
from flowfuse.synth import SynthConfig, simulate
from flowfuse.training import adam_step, fit_transforms

from conftest import permute_counts

ALL = VARIANTS + BASELINES


def small(name, **kw):
    kw.setdefault("M", 5)
    kw.setdefault("P", 4)
    return ModelConfig.for_model(name, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant=None, baseline=None)
    with pytest.raises(ValueError):
        ModelConfig(variant="full", baseline="gcn")
    with pytest.raises(ValueError):
        ModelConfig(variant="nope")
    with pytest.raises(ValueError):
        ModelConfig(dropout_p=1.0)
    assert ModelConfig.for_model("gat").name == "gat"


def test_sequence_lengths():
    assert ModelConfig().seq_len == 4
    assert ModelConfig.for_model("no_fusion").seq_len == 3
    assert ModelConfig.for_model("lstm").seq_len == 4


def test_encode_batch_layout(tiny):
    cfg = small("full")
    batch = encode_batch(tiny.train[:3], tiny.transforms, cfg)
    assert len(batch.steps) == 4
    assert [s.platform for s in batch.steps] == [Platform.AUX] + [Platform.TAXI] * 3
    step = batch.steps[1]
    assert step.node_feats.shape == (15, 2) and step.flat_feats.shape == (3, 10)
    # node-major flatten: zone 0 inflow, zone 0 outflow, zone 1 inflow, ...
    s0 = tiny.train[0]
    z = tiny.transforms[Platform.TAXI].apply(s0.history[0][1].features)
    np.testing.assert_allclose(step.flat_feats[0], z.T.reshape(-1))
    # target is channel-major
    zt = tiny.transforms[Platform.TAXI].apply(s0.target.features)
    np.testing.assert_allclose(batch.target[0], zt.reshape(-1))
    last = encode_batch(tiny.train[:1], tiny.transforms, small("full", aux_first=False))
    assert last.steps[-1].platform is Platform.AUX


def test_encode_batch_rejects_mismatch(tiny):
    with pytest.raises(ShapeError):
        encode_batch(tiny.train[:1], tiny.transforms, small("full", k=2))
    with pytest.raises(ShapeError):
        encode_batch(tiny.train[:1], tiny.transforms, small("full", M=6))
    with pytest.raises(ValueError):
        encode_batch([], tiny.transforms, small("full"))


def _default_sample(seed=0):
    trace = simulate(SynthConfig(M=265, D=2, P=8, base_mean=0.05, seed=seed))
    taxi, aux = trace.series()
    samples = make_samples(taxi, aux, 3, 8)
    return samples[0], fit_transforms(taxi, aux, 8)


@pytest.fixture(scope="module")
def default_sample():
    return _default_sample()


def test_default_config_output_shapes(default_sample):
    sample, tf = default_sample
    for name in ALL:
        model = Forecaster(ModelConfig.for_model(name), seed=0)
        fwd = stcgef_forward if name == "full" else variant_forward if name in VARIANTS else baseline_forward
        pred = fwd(model, sample, tf)
        assert pred.values.shape == (2, 265), name
        assert np.isfinite(pred.values).all() and (pred.values >= 0).all()
        assert pred.inflow.shape == pred.outflow.shape == (265,)


def test_spatial_embedding_shape_and_eval(default_sample):
    sample, tf = default_sample
    model = Forecaster(ModelConfig(), seed=0)
    step = encode_batch([sample], tf, model.config).steps[1]
    emb = spatial_embed(step, model.embed[Platform.TAXI])
    assert emb.shape == (265, 16)
    assert np.array_equal(emb.value, spatial_embed(step, model.embed[Platform.TAXI]).value)


def test_spatial_embedding_zero_input_gives_bias_stack(tiny):
    model = Forecaster(small("full"), seed=1)
    emb = model.embed[Platform.TAXI]
    emb.conv.b.value[...] = np.linspace(-1, 1, emb.conv.b.shape[1])
    step = encode_batch(tiny.train[:1], tiny.transforms, model.config).steps[1]
    step.norm_adj[...] = np.eye(5)
    step.node_feats[...] = 0
    out = spatial_embed(step, emb).value
    ref = np.maximum(emb.conv.b.value, 0) @ emb.fc.W.value + emb.fc.b.value
    np.testing.assert_allclose(out, np.repeat(ref, 5, axis=0))


def test_forward_wrappers_check_kind(tiny):
    s = tiny.train[0]
    with pytest.raises(ValueError):
        stcgef_forward(Forecaster(small("no_fusion")), s, tiny.transforms)
    with pytest.raises(ValueError):
        variant_forward(Forecaster(small("gcn")), s, tiny.transforms)
    with pytest.raises(ValueError):
        baseline_forward(Forecaster(small("full")), s, tiny.transforms)


def full_param_count(cfg):
    e, m = cfg.embed_width, cfg.M
    # graph conv has the same W, b shapes as a dense layer
    embed = Dense.n_params(2, cfg.gcn_width) + Dense.n_params(cfg.gcn_width, e)
    head_w = [cfg.lstm_width, *cfg.fc_widths, 2 * m]
    head = sum(Dense.n_params(a, b) for a, b in zip(head_w, head_w[1:]))
    return 2 * embed + LSTMCell.n_params(m * e, cfg.lstm_width) + head


@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig(M=7, embed_width=4, fc_widths=(8,))])
def test_full_param_count_formula(cfg):
    assert Forecaster(cfg).params.count() == full_param_count(cfg)


def test_rnn_has_fewer_params_than_lstm():
    rnn = Forecaster(ModelConfig.for_model("rnn")).params.count()
    lstm = Forecaster(ModelConfig.for_model("lstm")).params.count()
    assert rnn < lstm
    assert lstm - rnn == LSTMCell.n_params(530, 32) - RNNCell.n_params(530, 32)


def test_fusion_has_distinct_param_count():
    assert Forecaster(small("full")).params.count() > Forecaster(small("no_fusion")).params.count()


def test_shared_architectures_match():
    # gcn baseline and no_temporal share a structure, as do lstm and no_spatial
    for a, b in (("gcn", "no_temporal"), ("lstm", "no_spatial")):
        pa, pb = Forecaster(small(a)).params, Forecaster(small(b)).params
        assert list(pa) == list(pb)


def test_cgcn_order_one_equals_gcn_with_identity_operator(tiny):
    gcn = Forecaster(small("gcn", dropout_p=0.0), seed=0)
    cg = Forecaster(small("cgcn", cheb_order=1, dropout_p=0.0), seed=5)
    for name, p in cg.params.items():
        src = name.replace(".cheb.W0", ".gcn.W").replace(".cheb.b", ".gcn.b")
        p.value[...] = gcn.params[src].value
    batch = encode_batch(tiny.train[:4], tiny.transforms, gcn.config)
    for step in batch.steps:
        step.norm_adj = np.broadcast_to(np.eye(5), step.norm_adj.shape).copy()
    out_gcn = gcn.forward(batch).value
    assert not np.allclose(out_gcn, Forecaster(small("gcn", dropout_p=0.0), seed=0)
                           .forward(encode_batch(tiny.train[:4], tiny.transforms, gcn.config)).value)
    np.testing.assert_array_equal(out_gcn, cg.forward(encode_batch(tiny.train[:4], tiny.transforms,
                                                                   cg.config)).value)


@pytest.mark.parametrize("name", ALL)
def test_descent_single_sample(name, tiny):
    model = Forecaster(small(name, dropout_p=0.0), seed=2)
    batch = encode_batch(tiny.train[:1], tiny.transforms, model.config)
    with Tape() as tape:
        loss = model.loss(batch)
    tape.backward(loss)
    adam_step(model.params, 1e-4)
    assert model.loss(batch).item() < loss.item()


@pytest.mark.parametrize("name", ALL)
def test_eval_forward_deterministic(name, tiny):
    model = Forecaster(small(name), seed=3)
    batch = encode_batch(tiny.train[:3], tiny.transforms, model.config)
    a = model.forward(batch, training=False).value
    b = model.forward(batch, training=False, seed=(9, 9)).value
    assert np.array_equal(a, b)


def test_train_mode_dropout_changes_output(tiny):
    batch = encode_batch(tiny.train[:2], tiny.transforms, small("full"))
    m = Forecaster(small("full", dropout_p=0.5), seed=0)
    assert not np.array_equal(m.forward(batch).value, m.forward(batch, True, (1,)).value)
    assert np.array_equal(m.forward(batch, True, (1,)).value, m.forward(batch, True, (1,)).value)
    m0 = Forecaster(small("full", dropout_p=0.0), seed=0)
    assert np.array_equal(m0.forward(batch).value, m0.forward(batch, True, (1,)).value)


def test_forward_rejects_wrong_sequence(tiny):
    batch = encode_batch(tiny.train[:1], tiny.transforms, small("no_fusion"))
    with pytest.raises(ShapeError):
        Forecaster(small("full")).forward(batch)


def test_mse_loss_value():
    from flowfuse.autodiff import Tensor
    pred = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert mse_loss(pred, np.array([[1.0, 0.0], [0.0, 4.0]])).item() == pytest.approx(13 / 4)
    with pytest.raises(ShapeError):
        mse_loss(pred, np.zeros((2, 3)))


def test_full_model_permutation_equivariance():
    M, P = 5, 4
    trace = simulate(SynthConfig(M=M, D=2, P=P, seed=4, base_mean=3.0))
    perm = [3, 0, 4, 1, 2]
    reg = ZoneRegistry(range(M))

    def samples(taxi_c, aux_c):
        taxi = series_from_counts(taxi_c, reg, P, Platform.TAXI)
        aux = series_from_counts(aux_c, reg, P, Platform.AUX)
        return make_samples(taxi, aux, 3, P), fit_transforms(taxi, aux, 2 * P - 1)

    s, tf = samples(trace.taxi, trace.aux)
    sp, tfp = samples(permute_counts(trace.taxi, perm), permute_counts(trace.aux, perm))
    cfg = ModelConfig(M=M, P=P, embed_width=3)
    model = Forecaster(cfg, seed=0)
    moved = Forecaster(cfg, seed=0)
    for name, p in moved.params.items():
        v = model.params[name].value
        if name.startswith("lstm.Wx"):
            v = v.reshape(M, 3, -1)[perm].reshape(v.shape)
        elif name in ("head2.W", "head2.b"):
            v = v.reshape(v.shape[0], 2, M)[:, :, perm].reshape(v.shape)
        p.value[...] = v
    a = model.predict(s, tf)
    b = moved.predict(sp, tfp)
    np.testing.assert_allclose(b, a[:, :, perm], rtol=1e-10, atol=1e-10)


def test_checkpoint_round_trip(tmp_path, tiny):
    cfg = small("full")
    model = Forecaster(cfg, seed=7)
    save_checkpoint(tmp_path / "a.bin", model.params, cfg)
    loaded = load_model(tmp_path / "a.bin", cfg)
    save_checkpoint(tmp_path / "b.bin", loaded.params, cfg)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.bin").read_bytes()[:8] == b"FLOWFUSE"
    np.testing.assert_array_equal(loaded.predict(tiny.test, tiny.transforms),
                                  model.predict(tiny.test, tiny.transforms))


def test_checkpoint_errors(tmp_path):
    cfg = small("full")
    path = tmp_path / "c.bin"
    save_checkpoint(path, Forecaster(cfg).params, cfg)
    with pytest.raises(CheckpointError, match="config"):
        load_checkpoint(path, small("no_fusion"))
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.bin", cfg)
    (tmp_path / "short.bin").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.bin", cfg)
    (tmp_path / "long.bin").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long.bin", cfg)
