import math
from dataclasses import replace

import numpy as np
import pytest

from pan import checks, core, io, pa, training, vap
from pan.model import (NetConfig, PANFull, PANNet, SampleMode, SamplerConfig, cross_entropy, fuse_scores,
                       pan_full_forward, pan_lite_forward, sample_clip, segment_starts)

TINY = dict(widths=(4, 6, 8))


def _clip(length=32, size=16, seed=0):
    return np.random.default_rng(seed).random((length, 3, size, size)).astype(np.float32)


# ---------------------------------------------------------------- sampling

def test_centre_starts():
    assert segment_starts(32, SamplerConfig()) == [0, 4, 8, 12, 16, 20, 24, 28]
    assert segment_starts(64, SamplerConfig()) == [2, 10, 18, 26, 34, 42, 50, 58]


def test_random_starts_reproducible_and_in_segment():
    cfg = SamplerConfig(mode=SampleMode.TRAIN_RANDOM)
    a = segment_starts(64, cfg, np.random.default_rng(3))
    assert a == segment_starts(64, cfg, np.random.default_rng(3))
    for t, s in enumerate(a):
        assert 8 * t <= s and s + 4 <= 8 * (t + 1)


def test_too_short_clip_names_minimum():
    with pytest.raises(ValueError, match="32"):
        segment_starts(31, SamplerConfig())


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(N=6)
    with pytest.raises(ValueError):
        SamplerConfig(m=1)


def test_sample_clip_stacks():
    clip = _clip()
    s = sample_clip(clip, SamplerConfig())
    assert s.stacks.shape == (8, 4, 3, 16, 16)
    np.testing.assert_array_equal(s.first_frames[3], clip[12])
    np.testing.assert_array_equal(s.stacks[3, 2], clip[14])


# ---------------------------------------------------------------- loss and fusion

def test_cross_entropy_examples():
    loss, g = cross_entropy(np.zeros(4), 2)
    assert loss == pytest.approx(math.log(4))
    np.testing.assert_allclose(g, [0.25, 0.25, -0.75, 0.25])
    assert cross_entropy(np.array([0.0, 0.0, 200.0]), 2)[0] < 1e-12
    with pytest.raises(ValueError):
        cross_entropy(np.zeros(4), 4)


def test_cross_entropy_gradient_matches_fd():
    p = {"s": core.Param("s", np.random.default_rng(0).standard_normal(5))}

    def fn():
        loss, g = cross_entropy(p["s"].value, 1)
        p["s"].grad += g
        return loss

    assert core.grad_check(fn, p) < 1e-8


def test_fuse_scores_examples():
    s = np.array([0.3, -1.0])
    np.testing.assert_array_equal(fuse_scores([s], [1.0]), s)
    np.testing.assert_allclose(fuse_scores([s, s], [0.3, 0.7]), s)
    np.testing.assert_array_equal(fuse_scores([np.array([1.0, 0]), np.array([0, 1.0])], [0.5, 0.5]), [0.5, 0.5])
    with pytest.raises(ValueError):
        fuse_scores([s, s], [1.0])
    with pytest.raises(ValueError):
        fuse_scores([s, s], [0.7, 0.7])
    with pytest.raises(ValueError):
        fuse_scores([s, s], [1.5, -0.5])


# ---------------------------------------------------------------- networks

def test_lite_channel_wiring():
    net = PANNet(NetConfig())
    assert net.cfg.backbone.in_channels == 6
    assert net.params["backbone.conv0.weight"].shape[1] == 6
    assert core.param_count({k: v for k, v in net.params.items() if k.startswith("pa.")}) == 1184
    bad = dict(net.params)
    bad["backbone.conv0.weight"] = core.Param("x", np.zeros((16, 3, 3, 3), np.float32))
    with pytest.raises(ValueError, match="6"):
        PANNet(NetConfig(), bad)


def test_full_branch_wiring():
    full = PANFull(NetConfig(**TINY))
    assert full.rgb.cfg.backbone.in_channels == 3
    assert full.motion.cfg.backbone.in_channels == 3
    assert all(k.startswith(("rgb.", "motion.", "fusion.")) for k in full.params)
    full2 = PANFull(NetConfig(sampler=SamplerConfig(m=2), **TINY))
    assert full2.motion.cfg.backbone.in_channels == 1


def test_lite_forward_shapes_and_w():
    net = PANNet(NetConfig(**TINY))
    s = sample_clip(_clip(), net.cfg.sampler)
    scores = pan_lite_forward(s.stacks, net)
    assert scores.shape == (4,)
    _, w = net.predict(s.stacks)
    assert w.shape == (7, 1) and abs(w.sum() - 1) < 1e-6


def test_static_clip_pa_channels_vanish():
    net = PANNet(NetConfig(**TINY), seed=1)
    frame = np.random.default_rng(0).random((3, 16, 16)).astype(np.float32)
    stacks = np.broadcast_to(frame, (8, 4, 3, 16, 16)).copy()
    x, _ = net.backbone_input(stacks)
    assert np.abs(x[:, 3:]).max() < 1e-4
    zero = PANNet(replace(net.cfg, zero_pa=True), net.params)
    np.testing.assert_allclose(net.predict(stacks)[0], zero.predict(stacks)[0], atol=1e-4)


def test_static_clip_full_pa_branch_constant_features():
    full = PANFull(NetConfig(**TINY), seed=2)
    frame = np.random.default_rng(1).random((3, 16, 16)).astype(np.float32)
    stacks = np.broadcast_to(frame, (8, 4, 3, 16, 16)).copy()
    scores, w, cache = full.motion.forward(stacks)
    f = cache["head"]["f"]
    assert np.all(f == f[0])
    np.testing.assert_allclose(cache["head"]["fg"], f[0], atol=1e-6)


def test_full_fusion_weights():
    cfg = NetConfig(**TINY)
    stacks = sample_clip(_clip(), cfg.sampler).stacks
    full = PANFull(cfg, seed=3)
    s_rgb, s_pa, fused = pan_full_forward(stacks, full)
    np.testing.assert_allclose(fused, (s_rgb + s_pa) / 2, atol=1e-6)
    only_rgb = PANFull(cfg, seed=3, fusion=(1.0, 0.0))
    a, _, f = pan_full_forward(stacks, only_rgb)
    np.testing.assert_array_equal(f, a)
    with pytest.raises(ValueError):
        PANFull(cfg, fusion=(0.6, 0.6))


@pytest.mark.parametrize("seed", range(3))
def test_lite_end_to_end_gradient(seed):
    assert checks.check_lite_composite(seed) < 1e-5


def test_lite_gradient_with_input():
    cfg = NetConfig(sampler=SamplerConfig(N=4, m=2), widths=(3, 4, 5))
    net = PANNet(cfg, seed=0, dtype=np.float64)
    rng = np.random.default_rng(0)
    checks.jitter_biases(net.params, rng)
    net.params["x"] = core.Param("x", rng.random((4, 2, 3, 16, 16)))

    def fn():
        scores, _, cache = net.forward(net.params["x"].value)
        loss, ds = cross_entropy(scores, 3)
        net.params["x"].grad += net.backward(ds, cache, need_input_grad=True)
        return loss

    assert core.grad_check(fn, net.params, max_entries=10, seed=1) < 1e-5


@pytest.mark.parametrize("mode,head", [("rgb", "vap"), ("pa", "avg"), ("lite", "avg")])
def test_other_streams_gradient(mode, head):
    cfg = NetConfig(mode=mode, head=head, sampler=SamplerConfig(N=4, m=3), widths=(3, 4, 5),
                    pa=pa.PAConfig(encoding=pa.Encoding.E2))
    net = PANNet(cfg, seed=1, dtype=np.float64)
    checks.jitter_biases(net.params, np.random.default_rng(1))
    stacks = np.random.default_rng(2).random((4, 3, 3, 16, 16))
    assert core.grad_check(lambda: net.loss_and_grad(stacks, 1)[0], net.params, max_entries=8) < 1e-5


# ---------------------------------------------------------------- training and evaluation

def _tiny_data(cpc=4, seed=0):
    spec = io.SynthSpec(clips_per_class=cpc, frames=16, size=24, square=5, seed=seed)
    return io.synth_in_memory(spec)


def _tiny_cfg(**kw):
    return NetConfig(sampler=SamplerConfig(N=4, m=2), widths=(4, 6, 8), **kw)


def test_training_is_deterministic():
    data = _tiny_data()
    runs = []
    for _ in range(2):
        net = PANNet(_tiny_cfg(), seed=5)
        res = training.train(data, net, training.Hyper(epochs=2, seed=5))
        runs.append(([(m.loss, m.accuracy) for m in res.metrics], training.model_to_tensors(net)))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert runs[0][1][k].tobytes() == runs[1][1][k].tobytes()


def test_lr_milestones():
    h = training.Hyper(lr=0.01, milestones=(3, 5))
    assert [h.lr_at(e) for e in range(7)] == pytest.approx([0.01] * 3 + [0.001] * 2 + [0.0001] * 2)
    data = _tiny_data(cpc=2)
    res = training.train(data, PANNet(_tiny_cfg()), training.Hyper(epochs=3, milestones=(1, 2)))
    assert [m.lr for m in res.metrics] == pytest.approx([0.01, 0.001, 0.0001])


def test_empty_dataset_rejected():
    data = _tiny_data(cpc=1).subset([])
    with pytest.raises(ValueError):
        training.train(data, PANNet(_tiny_cfg()), training.Hyper(epochs=1))


def test_full_trains_both_branches():
    data = _tiny_data(cpc=2)
    full = PANFull(_tiny_cfg(), seed=0)
    before = {k: v.value.copy() for k, v in full.params.items()}
    res = training.train(data, full, training.Hyper(epochs=1))
    assert [m.stream for m in res.metrics] == ["rgb", "motion"]
    changed = {k for k, v in full.params.items() if not np.array_equal(v.value, before[k])}
    assert any(k.startswith("rgb.") for k in changed) and any(k.startswith("motion.") for k in changed)
    assert "fusion.weights" not in changed


def test_evaluate_perfect_and_chance():
    data = _tiny_data(cpc=5)

    class Oracle:
        cfg = _tiny_cfg()

        def __init__(self, labels):
            self.labels = iter(labels)

        def predict(self, stacks):
            s = np.zeros(4)
            s[next(self.labels)] = 1
            return s, None

    res = training.evaluate(Oracle(data.labels), data)
    assert res["top1"] == 1.0
    np.testing.assert_array_equal(res["confusion"], np.diag([5] * 4))

    rng = np.random.default_rng(0)

    class Random(Oracle):
        def predict(self, stacks):
            return rng.standard_normal(4), None

    big = io.ClipDataset(np.repeat(data.clips[:1], 400, axis=0), np.tile(np.arange(4), 100))
    assert abs(training.evaluate(Random([]), big)["top1"] - 0.25) < 0.08


def test_checkpoint_round_trip_and_variant_mismatch(tmp_path):
    net = PANNet(_tiny_cfg(head="avg", pa=pa.PAConfig(encoding=pa.Encoding.E2)), seed=4)
    training.save_model(net, tmp_path / "lite.panw")
    back = training.load_model(tmp_path / "lite.panw", "lite")
    assert back.cfg == net.cfg
    clip = _tiny_data(cpc=1).frames(0)
    np.testing.assert_array_equal(training.predict_scores(back, clip)[0], training.predict_scores(net, clip)[0])
    with pytest.raises(ValueError, match="lite"):
        training.load_model(tmp_path / "lite.panw", "full")

    full = PANFull(_tiny_cfg(), seed=4)
    training.save_model(full, tmp_path / "full.panw")
    fb = training.load_model(tmp_path / "full.panw", "full")
    assert isinstance(fb, PANFull)
    np.testing.assert_array_equal(training.predict_scores(fb, clip)[0], training.predict_scores(full, clip)[0])


def test_ensemble_evaluation_averages_scores():
    data = _tiny_data(cpc=2)
    lite, full = PANNet(_tiny_cfg(), seed=1), PANFull(_tiny_cfg(), seed=2)
    res = training.evaluate([lite, full], data)
    for i, clip in enumerate(res["clips"]):
        fr = data.frames(i)
        s = (training.predict_scores(lite, fr)[0] + training.predict_scores(full, fr)[0]) / 2
        assert clip["pred"] == int(np.argmax(s))
