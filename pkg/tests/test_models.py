import numpy as np
import pytest

from asrlab import config as C
from asrlab import models as M
from asrlab.errors import DataError, ShapeError


def small_ctc(seed=0):
    return M.CtcModel(C.CtcConfig(feat_dim=6, hidden=8, layers=2, vocab=5), seed=seed)


def small_las(seed=0):
    return M.LasModel(C.LasConfig(feat_dim=6, dim=8, ff_dim=16, heads=2,
                                  enc_blocks=2, dec_blocks=1, vocab=5), seed=seed)


def test_zero_init_ctc_gives_uniform_distribution():
    model = small_ctc()
    for p in model.parameters().values():
        p.data[:] = 0.0
    feats = np.random.default_rng(0).normal(size=(4, 2, 6)).astype(np.float32)
    lp = model.forward(feats)
    assert np.allclose(lp.data, -np.log(6), atol=1e-6)


def test_ctc_forward_shape():
    model = small_ctc()
    for t_len, batch in ((3, 1), (7, 4)):
        feats = np.zeros((t_len, batch, 6), dtype=np.float32)
        assert model.forward(feats).shape == (t_len, batch, 6)


def test_ctc_forward_dim_mismatch():
    model = small_ctc()
    with pytest.raises(ShapeError):
        model.forward(np.zeros((3, 1, 9), dtype=np.float32))


def test_ctc_forward_deterministic():
    model = small_ctc(seed=3)
    feats = np.random.default_rng(1).normal(size=(5, 2, 6)).astype(np.float32)
    a = model.forward(feats).data
    b = model.forward(feats).data
    assert np.array_equal(a, b)


def test_las_forward_shapes_and_bos_check():
    model = small_las()
    feats = np.random.default_rng(2).normal(size=(6, 2, 6)).astype(np.float32)
    prefix = np.full((2, 4), 1, dtype=np.int64)
    prefix[:, 0] = model.bos_id
    logits = model.forward(feats, None, prefix)
    assert logits.shape == (2, 4, 7)  # vocab 5 + BOS + EOS
    spec_shaped = M.las_forward(model, feats, prefix)
    assert spec_shaped.shape == (4, 2, 7)
    with pytest.raises(DataError):
        model.forward(feats, None, np.ones((2, 4), dtype=np.int64))


def test_las_step0_logits_ignore_later_prefix_tokens():
    model = small_las(seed=5)
    feats = np.random.default_rng(3).normal(size=(5, 1, 6)).astype(np.float32)
    p1 = np.array([[model.bos_id, 0, 1]])
    p2 = np.array([[model.bos_id, 3, 4]])
    l1 = model.forward(feats, None, p1).data
    l2 = model.forward(feats, None, p2).data
    assert np.allclose(l1[0, 0], l2[0, 0], atol=1e-12)
    assert not np.allclose(l1[0, 1], l2[0, 1])


def test_parameter_groups_nesting():
    ctc = small_ctc()
    g = ctc.parameter_groups()
    assert set(g["dense"]) == {"dense.w", "dense.b"}
    assert set(g["dense"]) < set(g["all"])

    las = small_las()
    g = las.parameter_groups()
    assert set(g["dense"]) < set(g["decoder"]) < set(g["all"])
    assert "embed.table" in g["decoder"]
    assert all(n.startswith(("decoder.", "dec_norm.", "embed.", "dense.")) for n in g["decoder"])


def test_top_lstm_names():
    ctc = small_ctc()
    top1 = ctc.top_lstm_names(1)
    assert top1 == ["lstm.1.w", "lstm.1.u", "lstm.1.b"]


def test_checkpoint_round_trip_bit_identical(tmp_path):
    model = small_ctc(seed=7)
    model.set_normalizer(np.full(6, 2.0, np.float32), np.full(6, 3.0, np.float32))
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, model, step=42, rng_state={"x": 1})
    ckpt = M.load_checkpoint(path)
    assert ckpt.step == 42
    assert ckpt.rng_state == {"x": 1}
    for name, arr in model.named_tensors().items():
        assert np.array_equal(arr, ckpt.tensors[name]), name
    rebuilt = ckpt.build_model()
    for name, arr in rebuilt.named_tensors().items():
        assert np.array_equal(arr, model.named_tensors()[name]), name


def test_checkpoint_wrong_vocab_rejected(tmp_path):
    model = small_ctc()
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, model)
    other = M.CtcModel(C.CtcConfig(feat_dim=6, hidden=8, layers=2, vocab=9))
    with pytest.raises(DataError):
        M.load_checkpoint(path).restore_into(other)


def test_checkpoint_truncated_and_bad_magic(tmp_path):
    model = small_ctc()
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, model)
    raw = path.read_bytes()
    trunc = tmp_path / "t.ckpt"
    trunc.write_bytes(raw[: len(raw) // 3])
    with pytest.raises(DataError):
        M.load_checkpoint(trunc)
    bad = tmp_path / "b.ckpt"
    bad.write_bytes(b"WHAT" + raw[4:])
    with pytest.raises(DataError):
        M.load_checkpoint(bad)


def test_paper_preset_ctc_dense_shape(tmp_path):
    model = M.CtcModel(C.ctc_paper_shapes(), seed=0)
    assert len(model.lstms) == 12
    path = tmp_path / "paper.ckpt"
    M.save_checkpoint(path, model)
    ckpt = M.load_checkpoint(path)
    assert ckpt.tensors["dense.w"].shape == (700, 5001)
    assert ckpt.tensors["dense.b"].shape == (5001,)


def test_paper_preset_las_shapes():
    model = M.LasModel(C.las_paper_shapes(), seed=0)
    assert len(model.encoder) == 10
    assert len(model.decoder) == 2
    params = model.parameters()
    assert params["dense.w"].shape == (512, 5002)  # 5000 subwords + BOS/EOS
    assert params["encoder.0.attn.wq.w"].shape == (512, 512)
    assert model.cfg.ff_dim == 2048 and model.cfg.heads == 4
