import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from musca.coding import ConvRepetitionCodec
from musca.core import ConfigurationError, FrameConfig, InvalidInputError
from musca.phy import load_phy
from musca.protocols import get_code, make_plan, make_transmissions, parse_scheme
from musca.receiver import Status, run_sic
from musca.waveform import (awgn, default_codecs, dump_waveform, load_waveform, qpsk_modulate,
                            qpsk_soft_demod, signal_layout, simulate_signal_frame, subtract_reconstructed,
                            superpose, transmit_frame, user_waveform)

REF = parse_scheme("MUSCA(refconv-1/38)")
REF_CODE = get_code("refconv-1/38")


def ref_plans(slot_lists, num_slots=8):
    cfg = FrameConfig(num_slots)
    return [make_plan(REF, u, s, REF_CODE, cfg) for u, s in enumerate(slot_lists)]


# -- QPSK and noise ------------------------------------------------------------------

def test_qpsk_constellation():
    pts = qpsk_modulate([0, 0, 0, 1, 1, 1, 1, 0])
    assert len(set(np.round(pts, 12))) == 4
    assert np.allclose(np.abs(pts), 1.0)
    # Gray: neighbours differ in one bit
    assert np.isclose(abs(pts[0] - pts[1]), math.sqrt(2))
    with pytest.raises(InvalidInputError):
        qpsk_modulate([0, 1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40).map(lambda b: b + b))
def test_llr_signs_noiseless(bits):
    llr = qpsk_soft_demod(qpsk_modulate(bits), 1e-9)
    assert np.array_equal(llr < 0, np.asarray(bits, dtype=bool))


def test_demod_rejects_zero_variance():
    with pytest.raises(InvalidInputError):
        qpsk_soft_demod(qpsk_modulate([0, 0]), 0.0)


def test_uncoded_ber_at_7db():
    rng = np.random.default_rng(4)
    n = 400_000
    bits = rng.integers(0, 2, 2 * n)
    y = awgn(qpsk_modulate(bits), 7.0, rng)
    ber = np.mean((qpsk_soft_demod(y, 10 ** -0.7) < 0) != bits)
    expected = norm.sf(math.sqrt(10 ** 0.7))
    assert ber == pytest.approx(expected, rel=0.05)


def test_awgn_statistics():
    rng = np.random.default_rng(9)
    n = 10**6
    noise = awgn(np.zeros(n), 4.0, rng)
    n0 = 10 ** -0.4
    assert np.mean(np.abs(noise) ** 2) == pytest.approx(n0, rel=0.01)
    sigma = math.sqrt(n0 / 2 / n)
    assert abs(noise.real.mean()) < 3 * sigma and abs(noise.imag.mean()) < 3 * sigma
    x = qpsk_modulate([0, 1] * 50)
    assert np.max(np.abs(awgn(x, math.inf, rng) - x)) <= 1e-12
    with pytest.raises(InvalidInputError):
        awgn(x, math.nan, rng)


# -- superposition and subtraction ----------------------------------------------------

def _sig(seed, n=64):
    r = np.random.default_rng(seed)
    return r.standard_normal(n) + 1j * r.standard_normal(n)


def test_superpose_examples():
    a = _sig(1)
    assert np.array_equal(superpose([a]), a)
    assert np.max(np.abs(superpose([a, -a]))) == 0
    with pytest.raises(InvalidInputError):
        superpose([a, a[:10]])
    with pytest.raises(InvalidInputError):
        superpose([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31), st.integers(0, 2**31))
def test_superpose_commutative_associative(s1, s2, s3):
    a, b, c = _sig(s1), _sig(s2), _sig(s3)
    assert np.allclose(superpose([a, b]), superpose([b, a]), atol=1e-12)
    assert np.allclose(superpose([superpose([a, b]), c]), superpose([a, superpose([b, c])]),
                       atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31))
def test_subtract_inverts_superpose(s1, s2):
    a, b = _sig(s1), _sig(s2)
    noise = _sig(s1 ^ s2) * 0.1
    received = superpose([a, b, noise])
    assert np.allclose(subtract_reconstructed(received, a), b + noise, atol=1e-12)


def test_subtract_exact_single_user():
    a = _sig(7)
    assert np.max(np.abs(subtract_reconstructed(a, a))) <= 1e-12
    with pytest.raises(InvalidInputError):
        subtract_reconstructed(a, a[:3])


def test_subtracting_true_component_lowers_energy():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = qpsk_modulate(rng.integers(0, 2, 200))
        b = qpsk_modulate(rng.integers(0, 2, 200))
        r = awgn(superpose([a, b]), 20.0, rng)
        assert np.sum(np.abs(subtract_reconstructed(r, a)) ** 2) < np.sum(np.abs(r) ** 2)


# -- frame construction ------------------------------------------------------------

def test_layout_geometry():
    layout = signal_layout(8, 3, ConvRepetitionCodec())
    assert layout.payload_symbols == 102
    # 2 pointers of 3 bits, fragment byte and check byte: 22 bits, 4 words of 6 bits
    assert layout.signaling_bits == 22
    assert layout.segments == 4 and layout.signaling_symbols == 128
    assert layout.config.burst_symbols == 8 + 128 + 102


def test_waveform_dump_round_trip(tmp_path):
    codec = ConvRepetitionCodec()
    layout = signal_layout(8, 3, codec)
    plans = ref_plans([(0, 3, 5), (3, 6, 7)])
    rng = np.random.default_rng(1)
    users = [user_waveform(p, rng.integers(0, 2, 16), codec, layout,
                           rng.uniform(0, 6, 3), 0.05) for p in plans]
    frame = transmit_frame(users, layout)
    assert frame.shape == (8, layout.config.burst_symbols)
    assert not frame[1].any()
    path = tmp_path / "frame.c64"
    dump_waveform(frame, path)
    assert path.stat().st_size == frame.size * 8
    back = load_waveform(path, layout.config.burst_symbols)
    assert np.array_equal(back, frame.astype(np.complex64))
    raw = np.fromfile(path, dtype="<f4")
    assert raw[0] == np.float32(frame[0, 0].real) and raw[1] == np.float32(frame[0, 0].imag)
    with pytest.raises(InvalidInputError):
        load_waveform(path, 5)


# -- signal-level SIC ---------------------------------------------------------------

def test_single_user_noiseless_residual():
    res = simulate_signal_frame(ref_plans([(1, 4, 6)]), None, default_codecs(), math.inf,
                                np.random.default_rng(0))
    assert res.outcome.status == {0: Status.DECODED}
    energy = np.sum(np.abs(res.received) ** 2)
    assert np.sum(np.abs(res.residual) ** 2) <= 1e-10 * energy


@pytest.mark.parametrize("seed", range(10))
def test_full_overlap_signal_level(seed):
    res = simulate_signal_frame(ref_plans([(1, 2, 3), (1, 2, 3)]), None, default_codecs(), 15.0,
                                np.random.default_rng(seed))
    assert res.outcome.decoded() == {0, 1}
    assert res.undetected_errors == 0


def test_collision_free_frame_is_independent_links():
    rng = np.random.default_rng(3)
    res = simulate_signal_frame(ref_plans([(0, 1, 2), (3, 4, 5), (6, 7, 8)], 9), None,
                                default_codecs(), 6.0, rng)
    assert res.outcome.decoded() == {0, 1, 2}
    assert res.phantoms == 0


def test_signal_path_rejects_mismatched_setup():
    rng = np.random.default_rng(0)
    crdsa = [make_plan(parse_scheme("CRDSA(3)"), 0, (0, 1, 2), REF_CODE)]
    with pytest.raises(ConfigurationError):
        simulate_signal_frame(crdsa, None, default_codecs(), 10.0, rng)
    turbo = [make_plan(parse_scheme("MUSCA"), 0, (0, 1, 2))]
    with pytest.raises(ConfigurationError):
        simulate_signal_frame(turbo, None, default_codecs(), 10.0, rng)
    with pytest.raises(ConfigurationError):
        simulate_signal_frame(turbo, None, {"turbo-1/6": ConvRepetitionCodec()}, 10.0, rng)
    with pytest.raises(InvalidInputError):
        simulate_signal_frame([], None, default_codecs(), 10.0, rng)


def test_abstract_and_signal_level_agree_on_small_frames():
    phy = load_phy("sinr-mi")
    rng = np.random.default_rng(5)
    agree = 0
    for _ in range(30):
        ns, nu = int(rng.integers(8, 21)), int(rng.integers(1, 11))
        cfg = FrameConfig(ns)
        plans = make_transmissions(REF, nu, cfg, rng, REF_CODE)
        a = run_sic(plans, cfg, phy, rng, 15.0).decoded()
        b = simulate_signal_frame(plans, cfg, default_codecs(), 15.0, rng).outcome.decoded()
        agree += a == b
    assert agree >= 28
