import math

import numpy as np
import pytest

from asetm.degradations import pink_noise, synth_speechlike
from asetm.metrics import EvalReport, nmse, seg_snr, stoi, write_spectrum_csv

pystoi = pytest.importorskip("pystoi")


@pytest.fixture(scope="module")
def speech():
    return synth_speechlike(0, 32000).samples


def test_nmse_examples(speech):
    assert nmse(speech, np.zeros_like(speech)) == pytest.approx(0.0, abs=1e-12)
    assert nmse(speech, speech) == pytest.approx(-120.0)
    d = np.random.default_rng(0).standard_normal(speech.size)
    d *= math.sqrt(0.01 * np.sum(speech ** 2) / np.sum(d ** 2))
    assert abs(nmse(speech, speech + d) + 20.0) < 1e-9
    with pytest.raises(ValueError):
        nmse(np.zeros(10), np.ones(10))
    with pytest.raises(ValueError):
        nmse(speech, speech[:-1])


@pytest.mark.parametrize("alpha", [1e-3, 0.01, 0.3, 1.0])
def test_nmse_relative_scaling(speech, alpha):
    assert abs(nmse(speech, speech + alpha * speech) - 20 * math.log10(alpha)) < 1e-9
    assert nmse(3 * speech, 3 * (speech + alpha * speech)) == pytest.approx(nmse(speech, speech + alpha * speech))


def test_stoi_identity_and_gain(speech):
    assert abs(stoi(speech, speech) - 1.0) < 1e-6
    assert abs(stoi(speech, 0.5 * speech) - 1.0) < 1e-6
    noisy = speech + 0.3 * pink_noise(1, speech.size).samples
    assert abs(stoi(speech, 3.0 * noisy) - stoi(speech, noisy)) < 1e-6


def test_stoi_white_noise_low(speech):
    scores = [stoi(speech, np.random.default_rng(s).standard_normal(speech.size)) for s in range(4)]
    assert np.mean(scores) < 0.3


@pytest.mark.parametrize("level", [0.1, 0.3, 1.0])
def test_stoi_matches_reference_implementation(speech, level):
    noisy = speech + level * pink_noise(2, speech.size).samples
    ours = stoi(speech, noisy)
    ref = pystoi.stoi(speech, noisy, 16000, extended=False)
    # only the 16 -> 10 kHz resampling filters differ
    assert abs(ours - ref) < 1e-4


@pytest.mark.parametrize("level", [0.1, 1.0])
def test_stoi_at_native_rate_matches_reference(level):
    s = synth_speechlike(0, 20000, rate=10000).samples
    noisy = s + level * pink_noise(2, s.size, 10000).samples
    assert abs(stoi(s, noisy, 10000) - pystoi.stoi(s, noisy, 10000)) < 1e-12


def test_stoi_too_short():
    with pytest.raises(ValueError):
        stoi(np.ones(100), np.ones(100))
    with pytest.raises(ValueError):
        stoi(synth_speechlike(0, 4000).samples, synth_speechlike(0, 4000).samples)


def test_seg_snr_examples(speech):
    assert seg_snr(speech, speech) == pytest.approx(35.0)
    assert seg_snr(speech, np.zeros_like(speech)) == pytest.approx(0.0)
    assert seg_snr(speech, 0.9 * speech) == pytest.approx(20.0, abs=1e-9)


def test_report_means_and_csv(tmp_path, speech):
    rep = EvalReport()
    for k, g in enumerate((0.9, 0.5)):
        rep.add(f"u{k}", "noise", 0.15, math.inf, speech, g * speech)
    assert rep.nmse_db == pytest.approx(np.mean([r["nmse_db"] for r in rep.rows]), abs=1e-9)
    assert rep.stoi == pytest.approx(1.0, abs=1e-6)
    write_spectrum_csv(tmp_path / "s.csv", [0.0, 40.0], [1, 2], [3, 4], [5, 6])
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "freq_hz,clean_db,degraded_db,enhanced_db"
    with pytest.raises(ValueError):
        EvalReport().mean("stoi")
