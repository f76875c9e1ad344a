# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

try:
    import infantcrynet as icn
except ImportError:
    import _infantcrynet as icn


def test_pooling_matches_numpy():
    rng = np.random.default_rng(7)
    H = rng.uniform(-1.0, 1.0, size=(30, 8)).astype(np.float32)
    np.testing.assert_allclose(icn.pool_max(H), H.max(axis=0), atol=1e-6)
    np.testing.assert_allclose(icn.pool_avg(H), H.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(
        icn.pool_add(H), H.max(axis=0) + H.mean(axis=0), atol=1e-6
    )
    # zero attention weights reduce to the average
    heads = np.zeros((4, 2), dtype=np.float32)
    np.testing.assert_allclose(icn.pool_attention(H, heads), H.mean(axis=0), atol=1e-6)
    # identity-on-mean statistic head
    w = np.hstack([np.eye(8), np.zeros((8, 8))]).astype(np.float32)
    b = np.zeros(8, dtype=np.float32)
    np.testing.assert_allclose(icn.pool_statistic(H, w, b), H.mean(axis=0), atol=1e-6)


def test_synth_audio_features_roundtrip(tmp_path):
    clip = icn.cry_clip(class_id=2, duration_s=0.5, seed=3)
    assert clip.shape == (8000,)
    assert np.abs(clip).max() <= 1.0
    path = str(tmp_path / "cry.wav")
    icn.save_wav(path, clip)
    back, sr = icn.load_wav(path)
    assert sr == 16000
    np.testing.assert_allclose(back, clip, atol=1.0 / 32768.0)

    feats = icn.featurize(path, clip_seconds=0.5, n_mels=16)
    assert feats.shape == (1 + (8000 - 512) // 160, 16)
    assert np.isfinite(feats).all()


def test_gen_dataset(tmp_path):
    manifest, split = icn.gen_dataset(
        "detect", n_per_class=2, seed=1, out_dir=str(tmp_path / "d"), duration_s=0.5
    )
    rows = open(manifest).read().strip().splitlines()
    assert rows[0] == "path,label"
    assert len(rows) == 5
    assert set(icn.task_labels("detect")) == {r.split(",")[1] for r in rows[1:]}


def test_model_forward_save_load_quantize(tmp_path):
    m = icn.Model.build(
        arch="CNN10", width_den=16, n_mels=16, n_classes=2, pool="avg", seed=4
    )
    batch = np.random.default_rng(5).normal(size=(2, 1, 32, 16)).astype(np.float32)
    probs = m.forward_probs(batch)
    assert probs.shape == (2, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    path = str(tmp_path / "m.icnm")
    m.save(path)
    back = icn.Model.load(path)
    np.testing.assert_array_equal(back.forward_probs(batch), probs)

    q = m.quantize()
    assert q.quantized
    assert q.serialized_bytes < m.serialized_bytes
    qp = q.forward_probs(batch)
    assert np.argmax(qp, axis=1).tolist() == np.argmax(probs, axis=1).tolist()


def test_kd_loss_identity():
    rng = np.random.default_rng(9)
    s = rng.normal(size=(3, 4)).astype(np.float32)
    t = rng.normal(size=(3, 4)).astype(np.float32)
    labels = [0, 1, 3]
    loss0, grad0 = icn.kd_loss(s, t, labels, temperature=2.0, lambda_=0.0)
    # lambda = 0 is plain cross entropy on the student logits
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    ce = -np.mean([np.log(p[i, l]) for i, l in enumerate(labels)])
    assert loss0 == pytest.approx(ce, abs=1e-6)
    assert grad0.shape == s.shape
    # identical logits with pure KL give zero loss
    loss1, _ = icn.kd_loss(s, s, labels, temperature=2.0, lambda_=1.0)
    assert abs(loss1) <= 1e-9


def test_errors_are_typed():
    with pytest.raises(icn.PipelineError):
        icn.load_wav("/nonexistent/clip.wav")
    with pytest.raises(icn.PipelineError):
        icn.Model.build(arch="VGG")
