"""Multimedia channel tests.

The audio decode claims are checked against an independent FFT-argmax
oracle; noise calibration against a power-measurement oracle; cutout
against exact pixel counts.
"""

import numpy as np
import pytest

from triarm import media
from triarm.instruction import Difficulty, Instruction, Waypoint, sample_task
from triarm.params import load_paramset

ARTIFACT = "artifacts/encoder.tacp"


def fft_token_oracle(window: np.ndarray) -> int:
    """Classify one window by zero-padded FFT peak, nearest token band.

    Independent of the learned encoders: pads 8x for ~0.5 Hz resolution,
    then picks the token whose jitter band contains (or sits nearest to)
    the peak frequency.
    """
    spec = np.abs(np.fft.rfft(window, n=8 * media.WINDOW))
    freqs = np.fft.rfftfreq(8 * media.WINDOW, d=1.0 / media.SAMPLE_RATE)
    peak = freqs[int(np.argmax(spec))]
    lo = media.TOKEN_FREQS * (1 - media.FREQ_JITTER)
    hi = media.TOKEN_FREQS * (1 + media.FREQ_JITTER)
    inside = np.flatnonzero((peak >= lo) & (peak <= hi))
    if inside.size:
        return int(inside[0])
    return int(np.argmin(np.abs(media.TOKEN_FREQS - peak)))


# -- rendering ---------------------------------------------------------------

def test_audio_length_and_amplitude():
    rng = np.random.default_rng(0)
    for m in (1, 4, 10):
        clip = media.render_audio(list(range(m)), rng)
        assert clip.shape == (media.WINDOW * (m + 1),)
        assert np.max(np.abs(clip)) <= 1.0


def test_zero_jitter_fft_peak_matches_token_frequency():
    rng = np.random.default_rng(1)
    clip = media.render_audio([3], rng, jitter=0.0)
    window = clip[: media.WINDOW]
    spec = np.abs(np.fft.rfft(window))
    freqs = np.fft.rfftfreq(media.WINDOW, d=1.0 / media.SAMPLE_RATE)
    peak = freqs[int(np.argmax(spec))]
    assert abs(peak - media.TOKEN_FREQS[3]) < media.SAMPLE_RATE / media.WINDOW


def test_fft_oracle_decodes_clean_audio_exactly():
    # bands are disjoint at the configured jitter, so the spectral peak
    # identifies every window including STOP
    rng = np.random.default_rng(2)
    for _ in range(50):
        toks = list(rng.integers(0, 12, size=rng.integers(1, 11)))
        clip = media.render_audio(toks, rng)
        windows = clip.reshape(-1, media.WINDOW)
        decoded = [fft_token_oracle(w) for w in windows]
        assert decoded == toks + [media.STOP]


def test_token_bands_disjoint():
    lo = media.TOKEN_FREQS * (1 - media.FREQ_JITTER)
    hi = media.TOKEN_FREQS * (1 + media.FREQ_JITTER)
    assert np.all(hi[:-1] < lo[1:])


def test_render_frames_uses_glyphs():
    frames = media.render_frames([0, 7])
    assert frames.shape == (3, 16, 16)
    assert np.array_equal(frames[0], media.GLYPHS[0])
    assert np.array_equal(frames[2], media.GLYPHS[media.STOP])
    assert set(np.unique(frames)) <= {0.0, 1.0}


def test_glyph_pairwise_hamming():
    flat = media.GLYPHS.reshape(13, -1)
    for i in range(13):
        for j in range(i + 1, 13):
            assert np.sum(flat[i] != flat[j]) >= 32


# -- noise models ------------------------------------------------------------

def test_noise_variance_matches_snr_formula():
    # unit sinusoid has power 1/2; 20 dB -> sigma^2 = 0.005
    rng = np.random.default_rng(3)
    clip = np.sin(2 * np.pi * 500 * np.arange(8 * media.WINDOW) / media.SAMPLE_RATE)
    noise = media.add_audio_noise(clip, rng) - clip
    assert abs(np.var(noise) - 0.005) < 0.0005


def test_measured_snr_within_half_db():
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(1000):
        clip = media.render_audio([int(rng.integers(0, 12))], rng)
        noisy = media.add_audio_noise(clip, rng)
        noise = noisy - clip
        ratios.append(np.mean(clip**2) / np.mean(noise**2))
    snr_db = 10 * np.log10(np.mean(ratios))
    assert abs(snr_db - 20.0) < 0.5


def test_infinite_snr_is_identity():
    rng = np.random.default_rng(5)
    clip = media.render_audio([2], rng)
    assert np.array_equal(media.add_audio_noise(clip, rng, np.inf), clip)


def test_silent_clip_rejected():
    with pytest.raises(ValueError):
        media.add_audio_noise(np.zeros(media.WINDOW), np.random.default_rng(0))


def test_noisy_samples_stay_bounded():
    rng = np.random.default_rng(6)
    clip = media.render_audio(list(range(10)), rng)
    noisy = media.add_audio_noise(clip, rng, snr_db=-10.0)
    assert np.max(np.abs(noisy)) <= 2.0


@pytest.mark.parametrize("frac", [0.10, 0.125, 0.15, 0.16, 0.17, 0.20])
def test_cutout_zeroes_exact_pixel_count(frac):
    # includes prime areas (41, 43) that have no in-frame factorization
    rng = np.random.default_rng(7)
    ones = np.ones((16, 16))
    for _ in range(20):
        out = media.apply_cutout(ones, rng, frac)
        assert int(np.sum(out == 0.0)) == round(frac * 256)


def test_cutout_block_is_contiguous():
    rng = np.random.default_rng(8)
    ones = np.ones((16, 16))
    for _ in range(50):
        out = media.apply_cutout(ones, rng)
        rows = np.flatnonzero((out == 0).any(axis=1))
        assert np.array_equal(rows, np.arange(rows[0], rows[-1] + 1))


def test_cutout_leaves_input_untouched():
    rng = np.random.default_rng(9)
    frame = media.GLYPHS[0].copy()
    before = frame.copy()
    media.apply_cutout(frame, rng)
    assert np.array_equal(frame, before)


def test_cutout_bad_shape():
    with pytest.raises(ValueError):
        media.apply_cutout(np.ones((8, 8)), np.random.default_rng(0))


# -- token maps --------------------------------------------------------------

def test_token_roundtrip():
    for tok in range(12):
        arm, slot = media.arm_slot_of(tok)
        assert media.token_of(arm, slot) == tok
    with pytest.raises(ValueError):
        media.arm_slot_of(media.STOP)


def test_tokens_of_instruction():
    ins = Instruction([Waypoint.from_slot(2, "A"), Waypoint.from_slot(3, "D")])
    assert media.tokens_of(ins) == [4, 11]


# -- embeddings and fusion ---------------------------------------------------

def test_embeddings_unit_norm():
    rng = np.random.default_rng(10)
    params = media.init_encoder_params(rng)
    clip = media.render_audio([1, 2], rng)
    for emb in (media.encode_audio(clip, params),
                media.encode_visual(media.render_frames([1, 2]), params),
                media.encode_symbolic([1, 2], params)):
        assert emb.shape == (3, media.LATENT_DIM)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-9)


def test_fuse_single_modality_passthrough():
    rng = np.random.default_rng(11)
    emb = rng.standard_normal((4, 32))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    np.testing.assert_allclose(media.fuse(emb, None), emb, atol=1e-12)
    np.testing.assert_allclose(media.fuse(None, emb), emb, atol=1e-12)
    with pytest.raises(ValueError):
        media.fuse(None, None)


def test_fuse_mean_renormalizes():
    a = np.array([[1.0, 0.0]] )
    v = np.array([[0.0, 1.0]])
    fused = media.fuse(np.pad(a, ((0, 0), (0, 30))), np.pad(v, ((0, 0), (0, 30))))
    np.testing.assert_allclose(np.linalg.norm(fused, axis=1), 1.0)
    assert fused[0, 0] == pytest.approx(fused[0, 1])


def test_fuse_shape_mismatch():
    with pytest.raises(ValueError):
        media.fuse(np.ones((2, 32)), np.ones((3, 32)))


# -- decoding ----------------------------------------------------------------

def test_decode_truncates_at_stop():
    rng = np.random.default_rng(12)
    params = media.init_encoder_params(rng)
    emb = media.encode_symbolic([0, 5], params)  # appends STOP row
    # symbolic branch is untrained here, so classify through the table
    # directly: craft embeddings equal to normalized table rows and give
    # the head an identity-like mapping via the table itself
    preds = media.classify(emb, params)
    result = media.decode(emb, params)
    stops = np.flatnonzero(preds == media.STOP)
    cut = stops[0] if stops.size else len(preds)
    assert result.tokens == [int(p) for p in preds[:min(cut, 10)]]


def test_decode_no_stop_within_ten_truncates_and_flags():
    rng = np.random.default_rng(13)
    params = media.init_encoder_params(rng)
    table = params["sym.table"]
    table = table / np.linalg.norm(table, axis=1, keepdims=True)
    emb = np.tile(table[3], (14, 1))  # 14 identical content windows
    # force argmax 3 for these rows regardless of head: check precondition
    preds = media.classify(emb, params)
    if not np.all(preds == preds[0]) or preds[0] == media.STOP:
        pytest.skip("random head does not map the row consistently")
    result = media.decode(emb, params)
    assert result.truncated
    assert len(result.tokens) <= 10


def test_decode_empty_input_rejected():
    params = media.init_encoder_params(np.random.default_rng(14))
    with pytest.raises(ValueError):
        media.decode(np.empty((0, 32)), params)


# -- trained artifact --------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    return load_paramset(ARTIFACT)


def test_artifact_symbolic_roundtrip_exact(trained):
    for m in (1, 5, 10):
        toks = list(np.random.default_rng(m).integers(0, 12, m))
        emb = media.encode_symbolic(toks, trained)
        result = media.decode(emb, trained)
        assert result.tokens == toks
        assert not result.truncated
        assert media.tokens_of(result.instruction) == toks


def test_artifact_clean_window_accuracy(trained):
    # train postcondition: >= 95% per-window accuracy on clean inputs
    rng = np.random.default_rng(99)
    labels = rng.integers(0, 13, 1000)
    t = np.arange(media.WINDOW) / media.SAMPLE_RATE
    audio = np.empty((1000, media.WINDOW))
    for i, tok in enumerate(labels):
        f = media.TOKEN_FREQS[tok] * (1 + rng.uniform(-media.FREQ_JITTER,
                                                      media.FREQ_JITTER))
        audio[i] = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    a_emb = media._encode(media._audio_branch_g, trained, audio)
    v_emb = media._encode(media._visual_branch_g, trained,
                          media.GLYPHS[labels].astype(float))
    assert (media.classify(a_emb, trained) == labels).mean() >= 0.95
    assert (media.classify(v_emb, trained) == labels).mean() >= 0.95


def test_artifact_agrees_with_fft_oracle_on_clean_audio(trained):
    rng = np.random.default_rng(100)
    mismatches = 0
    total = 0
    for _ in range(30):
        task = sample_task(rng, Difficulty.MEDIUM)
        toks = media.tokens_of(task.instruction)
        clip = media.render_audio(toks, rng)
        emb = media.encode_audio(clip, trained)
        net = list(media.classify(emb, trained))
        oracle = [fft_token_oracle(w) for w in clip.reshape(-1, media.WINDOW)]
        assert oracle == toks + [media.STOP]
        total += len(net)
        mismatches += sum(a != b for a, b in zip(net, oracle))
    assert mismatches / total < 0.05


def test_audio_pipeline_roundtrip(trained):
    rng = np.random.default_rng(101)
    for _ in range(20):
        task = sample_task(rng, Difficulty.EASY)
        toks = media.tokens_of(task.instruction)
        result, dt = media.run_pipeline(trained, media.render_audio(toks, rng),
                                        media.render_frames(toks))
        assert result.tokens == toks
        assert dt < 0.6


# -- dataset io --------------------------------------------------------------

def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    ds = media.make_window_dataset(rng, 40)
    media.save_dataset(tmp_path / "ds", ds)
    back = media.load_dataset(tmp_path / "ds")
    assert np.array_equal(back.audio, ds.audio)
    assert np.array_equal(back.frames, ds.frames)
    assert np.array_equal(back.labels, ds.labels)


def test_dataset_manifest_is_text(tmp_path):
    rng = np.random.default_rng(16)
    media.save_dataset(tmp_path / "ds", media.make_window_dataset(rng, 8))
    text = (tmp_path / "ds" / "manifest.txt").read_text()
    assert "audio 8 2048" in text
    assert "labels" in text


def test_dataset_incomplete_manifest(tmp_path):
    d = tmp_path / "ds"
    d.mkdir()
    (d / "manifest.txt").write_text("labels 1 2\n")
    with pytest.raises(ValueError):
        media.load_dataset(d)


# -- training ----------------------------------------------------------------

@pytest.mark.slow
def test_training_loss_decreases_and_aligns():
    rng = np.random.default_rng(17)
    ds = media.make_window_dataset(rng, 600)
    init = media.init_encoder_params(np.random.default_rng(17))
    gap_before = media.alignment_gap(init, ds)
    params, report = media.train_encoders(ds, epochs=8,
                                          rng=np.random.default_rng(17))
    losses = report["epoch_losses"]
    assert losses[-1] < losses[0]
    assert all(np.isfinite(v) for v in losses)
    assert media.alignment_gap(params, ds) < gap_before


@pytest.mark.slow
def test_training_without_alignment_term():
    rng = np.random.default_rng(18)
    ds = media.make_window_dataset(rng, 300)
    params, report = media.train_encoders(ds, epochs=3, rng=rng,
                                          lambda_align=0.0)
    assert np.isfinite(report["epoch_losses"][-1])


def test_benchmark_shape_and_determinism():
    params = load_paramset(ARTIFACT)
    a = media.benchmark(params, Difficulty.EASY, "audio", False, n=5, seeds=2)
    b = media.benchmark(params, Difficulty.EASY, "audio", False, n=5, seeds=2)
    assert set(a) == {"acc_mean", "acc_std", "time_mean", "time_std"}
    assert a["acc_mean"] == b["acc_mean"]
    assert 0.0 <= a["acc_mean"] <= 1.0
