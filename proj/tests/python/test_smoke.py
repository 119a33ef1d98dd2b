import math

import numpy as np
import pytest

import cvlp


def test_dataset_and_splits():
    spec = cvlp.GeneratorSpec()
    data = cvlp.generate_dataset(spec, 80)
    assert len(data) == 80
    assert data == cvlp.generate_dataset(spec, 80)
    chunks = cvlp.split_class_incremental(data, spec.num_classes, 4)
    assert [c.step_index for c in chunks] == [0, 1, 2, 3]
    assert sum(len(c.samples) for c in chunks) == 80
    for c in chunks:
        assert {s.class_id for s in c.samples} <= {2 * c.step_index, 2 * c.step_index + 1}
    with pytest.raises(cvlp.ConfigError):
        cvlp.generate_dataset(spec, 3)


def test_encoder_outputs_unit_rows():
    spec = cvlp.GeneratorSpec()
    data = cvlp.generate_dataset(spec, 8)
    m = cvlp.DualEncoder(cvlp.ModelDims(), 1)
    u = m.encode_images(cvlp.image_matrix(data))
    v = m.encode_text([s.tokens for s in data])
    assert u.shape == (8, 16) and v.shape == (8, 16)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(m.similarity(data), u @ v.T, atol=1e-12)
    with pytest.raises(cvlp.OutOfVocabularyError):
        m.encode_text([[1, 999]])


def test_losses():
    l = cvlp.contrastive_loss(np.full((4, 8), 0.1), 0.07, 0.5, 4)
    assert abs(l["i2t"] - math.log(8)) < 1e-9
    assert abs(l["t2i"] - math.log(4)) < 1e-9
    kl = cvlp.distill_loss(np.log([[0.7, 0.3]]), np.zeros((1, 2)), 1.0, 1.0, 1.0, 1)
    assert abs(kl["total"] - 0.082282) < 1e-6
    assert cvlp.gen_loss([0.5, 0.5], 0.3, 0.7) == 0.0
    assert abs(cvlp.gen_loss([0.9, 0.5], 0.3, 0.7) - 0.1) < 1e-15
    p = cvlp.prob_i2t(np.array([[1.0, 0.0]]), 0.5)
    assert abs(p[0, 0] - 0.880797) < 1e-6
    with pytest.raises(cvlp.DimensionError):
        cvlp.contrastive_loss(np.zeros((3, 4)), 0.1, 0.5, 2)


def test_memory_buffer():
    data = cvlp.generate_dataset(cvlp.GeneratorSpec(), 100)
    buf = cvlp.MemoryBuffer(20, 7)
    buf.offer_all(data)
    assert len(buf) == 20 and buf.seen_count == 100
    assert len({s.sample_id for s in buf.items}) == 20
    assert buf.sample_batch(8, 1) == buf.sample_batch(8, 1)


def test_pseudo_texts_do_not_increase_band_loss():
    data = cvlp.generate_dataset(cvlp.GeneratorSpec(), 8)
    m = cvlp.DualEncoder(cvlp.ModelDims(), 3)
    g = cvlp.GenConfig()
    g.num_pseudo = 4
    g.gen_iters = 10
    r = cvlp.generate_pseudo_texts(m, data, g, 5)
    assert len(r["texts"]) == 4
    assert r["mean_final_loss"] <= r["mean_init_loss"]
    for t in r["texts"]:
        assert len(t["scores"]) == 8
        assert t["embeddings"].shape[1] == 32
    assert cvlp.bwt([[0.4], [0.3, 0.5]]) == pytest.approx(-0.05)


def test_tiny_training_run(tmp_path):
    ini = cvlp.default_config_ini()
    overrides = {
        "num_steps": "2",
        "samples_per_chunk": "40",
        "epochs_per_step": "1",
        "batch_size": "16",
        "num_pseudo": "4",
        "gen_iters": "3",
        "per_class": "5",
        "retrieval_size": "16",
    }
    lines = []
    for line in ini.splitlines():
        key = line.split("=", 1)[0].strip()
        lines.append(f"{key} = {overrides[key]}" if key in overrides else line)
    ini = cvlp.normalize_config_ini("\n".join(lines))
    a = cvlp.train(ini, "incclip", 0, str(tmp_path / "a"))
    b = cvlp.train(ini, "incclip", 0, str(tmp_path / "b"))
    assert [r["step"] for r in a] == [0, 1]
    assert a == b
    assert a[-1]["bwt"] is not None and a[0]["bwt"] is None
    assert 0.0 <= a[-1]["zero_shot_avg"] <= 1.0
    with pytest.raises(cvlp.ConfigError):
        cvlp.train(ini, "lwf", 0, str(tmp_path / "c"))
