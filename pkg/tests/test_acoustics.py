import math

import numpy as np
import pytest

from asetm.acoustics import (LAMBDA_SQ_GRID, T60_GRID, AcousticScene, Rir, RoomSpec, apply_lookahead,
                             causality_margin, direct_path_delay, estimate_t60, propagate, read_rir,
                             render_ase, sef, sef_derivative, simulate_rir, write_rir)
from asetm.dsp import Waveform


def onset_peak(h):
    """Index of the first peak reaching half the global maximum (the direct arrival)."""
    i = int(np.argmax(h >= 0.5 * h.max()))
    while i + 1 < h.size and h[i + 1] > h[i]:
        i += 1
    return i


def test_direct_path_delay_random_geometries():
    rng = np.random.default_rng(1)
    room = RoomSpec((3.0, 4.0, 2.0), t60_s=0.2)
    for _ in range(20):
        src = tuple(rng.uniform(0.2, np.array(room.dims_m) - 0.2))
        mic = tuple(rng.uniform(0.2, np.array(room.dims_m) - 0.2))
        expected = math.dist(src, mic) * 16000 / 343.0
        n = int(expected) + 200
        h = np.abs(simulate_rir(room, src, mic, n, highpass=False).taps)
        assert abs(onset_peak(h) - expected) <= 3


@pytest.mark.parametrize("t60", T60_GRID)
def test_schroeder_t60(t60):
    room = RoomSpec((3.0, 4.0, 2.0), t60_s=t60)
    h = simulate_rir(room, (1.5, 1.0, 1.0), (1.5, 3.0, 1.0), int(1.2 * t60 * 16000)).taps
    est = estimate_t60(h, 16000)
    assert 0.6 * t60 <= est <= 1.4 * t60


def test_rir_deterministic():
    room = RoomSpec()
    a = simulate_rir(room, (1, 1, 1), (2, 2, 1), 256).taps
    b = simulate_rir(room, (1, 1, 1), (2, 2, 1), 256).taps
    np.testing.assert_array_equal(a, b)


def test_rir_errors():
    room = RoomSpec()
    with pytest.raises(ValueError):
        simulate_rir(room, (5, 1, 1), (1, 1, 1), 64)
    with pytest.raises(ValueError):
        simulate_rir(room, (1, 1, 1), (1, 1, 1), 64)
    with pytest.raises(ValueError):
        RoomSpec(t60_s=5.0)
    with pytest.raises(ValueError):
        AcousticScene(room=RoomSpec(), speaker_pos=(1.5, 4.5, 1.0))


def test_sef_identity_and_limits():
    y = np.linspace(-50, 50, 1001)
    np.testing.assert_array_equal(sef(y, math.inf), y)
    for lam in LAMBDA_SQ_GRID[:-1]:
        assert abs(sef(np.array([1e6]), lam)[0] - math.sqrt(math.pi * lam / 2)) < 1e-4
        # small-signal slope is one
        assert sef(np.array([1e-6]), lam)[0] == pytest.approx(1e-6, rel=1e-6)
    assert np.all(np.diff(sef(y, 0.1)) >= 0)


def test_sef_derivative_matches_differences():
    y = np.linspace(-3, 3, 61)
    h = 1e-6
    fd = (sef(y + h, 0.5) - sef(y - h, 0.5)) / (2 * h)
    np.testing.assert_allclose(sef_derivative(y, 0.5), fd, atol=1e-8)


def test_render_identities():
    scene = AcousticScene()
    rirs = scene.paths()
    x = Waveform(np.random.default_rng(0).standard_normal(4000), 16000)
    out = render_ase(x, Waveform(np.zeros(4000), 16000), scene, rirs)
    np.testing.assert_array_equal(out["eh"].samples, out["d"].samples)
    np.testing.assert_array_equal(out["d"].samples, propagate(x, rirs[0]).samples)


def test_lookahead_shift():
    y = Waveform(np.arange(10.0), 16000)
    out = apply_lookahead(y, 3).samples
    np.testing.assert_array_equal(out[:7], np.arange(3.0, 10.0))
    np.testing.assert_array_equal(out[7:], 0.0)
    assert apply_lookahead(y, 0) is y
    with pytest.raises(ValueError):
        apply_lookahead(y, 10)


def test_causality_margin_paper_geometry():
    assert causality_margin(AcousticScene()) == pytest.approx(0.5 / 343.0 * 3, abs=1e-12)
    assert abs(causality_margin(AcousticScene()) - 0.004373) < 1e-6


def test_direct_path_delay():
    room = RoomSpec()
    assert direct_path_delay(room, (1, 1, 1), (1, 2, 1)) == pytest.approx(16000 / 343.0)


def test_rir_file_round_trip(tmp_path):
    r = Rir(np.array([1.0, -0.5, 0.25]), "secondary")
    write_rir(tmp_path / "s.rir", r, {"t60_s": 0.2})
    back, meta = read_rir(tmp_path / "s.rir")
    np.testing.assert_array_equal(back.taps, r.taps)
    assert back.role == "secondary" and meta == {"t60_s": "0.2"}
    (tmp_path / "bad.rir").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_rir(tmp_path / "bad.rir")
