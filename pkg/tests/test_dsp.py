import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asetm.dsp import (ComplexSpectrogram, StftConfig, Waveform, convolve, hann_window, istft,
                       power_spectrum_db, read_wav, resample, stft, write_wav)


def test_hann_window_endpoints_and_symmetry():
    w = hann_window(400)
    assert w[0] == 0.0
    assert w[200] == pytest.approx(1.0)
    # periodic: w[k] == w[N - k]
    np.testing.assert_allclose(w[1:], w[1:][::-1], atol=1e-15)


def test_hann_too_short():
    with pytest.raises(ValueError):
        hann_window(1)


def test_stft_shapes_paper_config():
    spec = stft(np.random.default_rng(0).standard_normal(32000), StftConfig())
    assert spec.frames.shape == (321, 201)


def test_round_trip(rng):
    x = rng.standard_normal(16000)
    cfg = StftConfig()
    y = istft(stft(x, cfg), x.size).samples
    assert np.max(np.abs(x - y)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(n=st.integers(min_value=500, max_value=5000), seed=st.integers(0, 2 ** 16))
def test_round_trip_any_length(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    y = istft(stft(x), n).samples
    assert np.max(np.abs(x - y)) < 1e-9


def test_parseval_single_frame(rng):
    # one frame, rectangular-free: sum |X_k|^2 with Hermitian weighting equals N sum x^2
    cfg = StftConfig(win_len=400, hop_len=100, fft_len=400)
    frame = rng.standard_normal(400) * cfg.window()
    spec = np.fft.rfft(frame)
    weights = np.full(spec.size, 2.0)
    weights[0] = weights[-1] = 1.0
    lhs = np.sum(weights * np.abs(spec) ** 2) / 400
    assert abs(lhs - np.sum(frame ** 2)) / np.sum(frame ** 2) < 1e-12


def test_stft_of_impulse_is_flat():
    cfg = StftConfig()
    x = np.zeros(1000)
    x[500] = 1.0
    spec = stft(x, cfg)
    # the frame centred on the impulse sees it at the window peak
    frame = spec.frames[5]
    np.testing.assert_allclose(np.abs(frame), 1.0, atol=1e-12)


def test_convolve_identity_and_delay(rng):
    x = rng.standard_normal(300)
    np.testing.assert_array_equal(convolve(x, [1.0], mode="same_leading"), x)
    y = convolve(x, [0, 0, 1.0], mode="same_leading")
    np.testing.assert_allclose(y[2:], x[:-2])
    assert y[0] == y[1] == 0


def test_convolve_fft_matches_direct(rng):
    x, h = rng.standard_normal(5000), rng.standard_normal(512)
    a = convolve(x, h, method="fft")
    b = convolve(x, h, method="direct")
    assert np.sqrt(np.mean((a - b) ** 2)) < 1e-10


def test_convolve_errors():
    with pytest.raises(ValueError):
        convolve([], [1.0])
    with pytest.raises(ValueError):
        convolve([1.0], [1.0], mode="valid")


def test_complex_spectrogram_validation():
    with pytest.raises(ValueError):
        ComplexSpectrogram(np.zeros((3, 10)), StftConfig())
    with pytest.raises(ValueError):
        ComplexSpectrogram(np.full((3, 201), np.nan), StftConfig())


def test_stft_config_validation():
    with pytest.raises(ValueError):
        StftConfig(win_len=400, hop_len=500, fft_len=400)


def test_power_spectrum_of_tone_peaks_at_bin():
    fs = 16000
    t = np.arange(fs) / fs
    p = power_spectrum_db(np.sin(2 * np.pi * 1000 * t))
    assert int(np.argmax(p)) == 25  # 1000 Hz / 40 Hz per bin


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.zeros((2, 2)), 16000)
    with pytest.raises(ValueError):
        Waveform(np.array([np.inf]), 16000)
    with pytest.raises(ValueError):
        Waveform(np.zeros(3), 0)


def test_resample_preserves_tone():
    fs = 48000
    t = np.arange(fs) / fs
    w = resample(Waveform(np.sin(2 * np.pi * 440 * t), fs), 16000)
    assert w.sample_rate_hz == 16000 and len(w) == 16000
    ref = np.sin(2 * np.pi * 440 * np.arange(16000) / 16000)
    assert np.max(np.abs(w.samples[200:-200] - ref[200:-200])) < 1e-3


def test_wav_round_trip(tmp_path, rng):
    x = 0.5 * rng.standard_normal(1000).clip(-1, 1)
    p = write_wav(tmp_path / "a.wav", Waveform(x, 16000))
    back = read_wav(p)
    assert back.sample_rate_hz == 16000
    np.testing.assert_allclose(back.samples, x.astype(np.float32), atol=1e-7)
    write_wav(tmp_path / "b.wav", Waveform(x, 16000), fmt="pcm16")
    assert np.max(np.abs(read_wav(tmp_path / "b.wav").samples - x)) < 1e-4


def test_float_wav_keeps_peaks_above_full_scale(tmp_path):
    x = np.array([0.5, 1.75, -2.5])
    np.testing.assert_array_equal(read_wav(write_wav(tmp_path / "a.wav", Waveform(x, 16000))).samples, x)
    pcm = read_wav(write_wav(tmp_path / "b.wav", Waveform(x, 16000), fmt="pcm16")).samples
    assert np.max(np.abs(pcm)) <= 1.0
