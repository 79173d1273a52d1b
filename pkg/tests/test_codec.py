import hashlib

import numpy as np
import pytest

from conftest import smooth_images
from mgbvq import CodecConfig, Model, small_config, table_i_256, table_i_512, train_model
from mgbvq.bench import stream_bpp
from mgbvq.codec import decode, encode, encode_full, fit_to_grid
from mgbvq.config import TABLE_I_256, loads
from mgbvq.errors import ConfigError, FormatError, InvalidInputError, TrainingError
from mgbvq.pyramid import forward_decompose, lanczos_upsample


@pytest.fixture(scope="module")
def tiny():
    """3-grid config trained on 20 synthetic 32x32 images."""
    cfg = small_config(N=5)
    assert list(cfg.grids) == [3, 4, 5]
    return train_model(smooth_images(20, 32, seed=1), cfg)


def test_smoke_round_trip(tiny):
    img = smooth_images(1, 32, seed=99)[0]
    res = encode_full(tiny, img)
    out = decode(tiny, res.stream, clamp=False)
    np.testing.assert_array_equal(out, res.recon)
    assert np.mean((out - img) ** 2) == pytest.approx(np.mean(res.residual ** 2), abs=1e-6)
    assert decode(tiny, res.stream).dtype == np.uint8


def test_decoder_matches_every_encoder_grid(small_model, test_images_64):
    res = encode_full(small_model, test_images_64[3])
    cfg = small_model.config
    for k, n in enumerate(range(cfg.n_dc, cfg.N + 1)):
        got = decode(small_model, res.stream, max_grid=n, clamp=False)
        want = res.grid_recons[k]
        while want.shape[0] < got.shape[0]:
            want = lanczos_upsample(want)
        np.testing.assert_array_equal(got, want)


def test_feedback_conservation(small_model, test_images_64):
    img = test_images_64[5]
    res = encode_full(small_model, img)
    pyr = forward_decompose(img, small_model.config.n_dc)
    prev = pyr.dc - np.rint(pyr.dc)
    for code in res.codes:
        np.testing.assert_allclose(code.recon + code.residual, pyr.ac_layers[code.n] + lanczos_upsample(prev), atol=1e-9)
        prev = code.residual


def test_without_feedback_targets_are_plain_ac(small_model, test_images_64):
    img = test_images_64[5]
    res = encode_full(small_model, img, feedback=False)
    pyr = forward_decompose(img, small_model.config.n_dc)
    for code in res.codes:
        np.testing.assert_allclose(code.recon + code.residual, pyr.ac_layers[code.n], atol=1e-9)


def test_distortion_is_final_residual_energy(small_model, test_images_64):
    for img in test_images_64[:6]:
        res = encode_full(small_model, img)
        out = decode(small_model, res.stream, clamp=False)
        assert abs(np.mean((out - img) ** 2) - np.mean(res.residual ** 2)) < 1e-6


def test_constant_image_costs_only_overhead(tiny):
    img = np.full((32, 32, 3), 117.0)
    res = encode_full(tiny, img)
    for code in res.codes:
        assert code.qt.levels[0].tolist() == [0]
        assert code.indices[0].tolist() == [tiny.codebooks[(code.n, code.n)].k - 1]
        assert all(len(i) == 0 for i in code.indices[1:])
    np.testing.assert_array_equal(decode(tiny, res.stream), img.astype(np.uint8))


def test_encode_is_deterministic(tiny):
    img = smooth_images(1, 32, seed=5)[0]
    assert encode(tiny, img) == encode(tiny, img)


def test_constant_corpus_reports_every_cell():
    cfg = small_config(N=5)
    with pytest.raises(TrainingError) as exc:
        train_model([np.full((32, 32, 3), 10.0 * i) for i in range(20)], cfg)
    for cell in cfg.cells:
        assert f"C_{cell[0]},{cell[1]}" in str(exc.value)


def test_training_is_seeded():
    corpus = smooth_images(20, 32, seed=1)
    a = train_model(corpus, small_config(N=5, seed=4))
    b = train_model(corpus, small_config(N=5, seed=4))
    assert a.to_bytes() == b.to_bytes()


def test_model_file_round_trip(tiny, tmp_path):
    path = tmp_path / "m.mgbm"
    tiny.save(path)
    back = Model.load(path)
    assert back.model_id == tiny.model_id == hashlib.sha256(path.read_bytes()).digest()[:8]
    assert back.config == tiny.config
    img = smooth_images(1, 32, seed=3)[0]
    assert encode(back, img) == encode(tiny, img)


def test_model_file_errors(tiny):
    data = tiny.to_bytes()
    with pytest.raises(FormatError):
        Model.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        Model.from_bytes(data[:-3])
    with pytest.raises(FormatError):
        Model.from_bytes(data + b"\x00")


def test_resolution_and_channel_checks(tiny):
    with pytest.raises(InvalidInputError):
        encode(tiny, np.zeros((64, 64, 3)))
    with pytest.raises(InvalidInputError):
        encode(tiny, np.zeros((32, 32, 1)))
    assert fit_to_grid(np.zeros((128, 128, 3)), 5).shape == (32, 32, 3)
    with pytest.raises(InvalidInputError):
        fit_to_grid(np.zeros((16, 16, 3)), 5)


def test_table_i_profile_has_26_coded_cells():
    cfg = table_i_256()
    assert len(cfg.cells) == 26 == len(TABLE_I_256)
    spatial = sorted(c for c, (_, K) in cfg.cells.items() if K is None)
    assert spatial == [(3, 2), (4, 2), (5, 2), (6, 2), (7, 2), (8, 3)]
    assert cfg.cells[(8, 8)] == (64, 150) and cfg.cells[(7, 2)] == (128, None)
    assert cfg.msethresh == 70
    assert table_i_256(16).cells[(8, 3)] == (16, None)


def test_table_i_512_profile():
    cfg = table_i_512()
    assert cfg.N == 9
    assert cfg.cells[(9, 9)] == cfg.cells[(8, 8)]
    for m in range(3, 9):
        assert cfg.cells[(9, m)] == cfg.cells[(8, m)]


def test_config_text_round_trip():
    cfg = table_i_256(32, msethresh_cells={(8, 3): 50.0}, keep={(8, 4): (9, 18, 25, 30)})
    assert loads(cfg.dumps()) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "C_3_2 = 4,-",
        "N = 4\nC_4_4 = 4,4",
        "N = 4\nC_3_3 = 4,4\nC_3_2 = 4,-\nC_4_4 = 4,4\nC_4_2 = 4,-",
        "N = 3\nC_3_3 = 4,999\nC_3_2 = 4,-",
        "N = 3\nbogus = 1\nC_3_3 = 4,4",
        "N = 3\nC_3_3 = four,4",
    ],
)
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_feedback_flag_round_trips():
    cfg = small_config(N=5, feedback=False)
    assert loads(cfg.dumps()).feedback is False
    assert isinstance(cfg, CodecConfig)


def test_rate_falls_as_threshold_rises(tiny):
    img = smooth_images(1, 32, seed=11)[0]
    rates = [stream_bpp(encode(tiny, img, msethresh=t), 5) for t in (0, 70, 1e9)]
    assert rates[0] >= rates[1] >= rates[2]
