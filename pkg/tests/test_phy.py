import itertools
import logging
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from musca.core import ConfigurationError, InvalidInputError
from musca.phy import (FER_FLOOR, FerTable, PhyModel, PhyVariant, SnrPoint, burst_sinr,
                       calibrate_margin, canonical_pattern, capacity_gap_table, dominates,
                       esn0_from_ebn0, fer_lookup, fifty_percent_point, load_phy, mi_bits,
                       mi_per_symbol_qpsk, read_fer_tables, resolve_data_path, write_fer_table)
from musca.protocols import CodeSpec, get_code, payload_partition

T16 = get_code("turbo-1/6")


def qpsk_mi_monte_carlo(sinr: float, n: int, seed: int = 0) -> float:
    """I(X;Y) for equiprobable unit-energy QPSK in complex AWGN, by direct sampling."""
    rng = np.random.default_rng(seed)
    pts = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2)
    x = pts[rng.integers(0, 4, n)]
    n0 = 1.0 / sinr
    y = x + math.sqrt(n0 / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    metric = -np.abs(y[:, None] - pts[None, :]) ** 2 / n0
    own = -np.abs(y - x) ** 2 / n0
    return float(2.0 - np.mean(logsumexp(metric, axis=1) - own) / math.log(2))


# -- SNR arithmetic -----------------------------------------------------------

def test_burst_sinr_examples():
    assert burst_sinr(7.0, 0) == pytest.approx(10 ** 0.7)
    assert burst_sinr(0.0, 1) == pytest.approx(0.5)
    assert 10 * math.log10(burst_sinr(0.0, 1)) == pytest.approx(-3.0103, abs=1e-4)
    values = [burst_sinr(10.0, d) for d in range(0, 200)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1 / 198
    with pytest.raises(InvalidInputError):
        burst_sinr(0.0, -1)


def test_burst_sinr_infinite_snr():
    assert burst_sinr(math.inf, 0) == math.inf
    assert burst_sinr(math.inf, 2) == 0.5


def test_esn0_from_ebn0():
    assert esn0_from_ebn0(3.0, get_code("conv-1/2")) == pytest.approx(3.0)
    assert esn0_from_ebn0(3.0, T16) == pytest.approx(3.0 - 4.771212547, abs=1e-8)
    snr = SnrPoint.for_code(esn0_from_ebn0(2.5, T16), T16)
    assert snr.eb_n0_db == pytest.approx(2.5)


# -- mutual information ---------------------------------------------------------

def test_mi_boundaries():
    assert mi_per_symbol_qpsk(0.0) == 0.0
    assert mi_per_symbol_qpsk(math.inf) == 2.0
    assert mi_per_symbol_qpsk(1e6) == 2.0
    with pytest.raises(InvalidInputError):
        mi_per_symbol_qpsk(-1.0)


def test_mi_zero_db_against_sampling_oracle():
    exact = mi_per_symbol_qpsk(1.0)
    assert 0.95 < exact < 1.05
    assert exact == pytest.approx(qpsk_mi_monte_carlo(1.0, 10**6), abs=5e-3)


@pytest.mark.parametrize("db", [-6.0, 3.0, 8.0])
def test_mi_matches_sampling_oracle(db):
    s = 10 ** (db / 10)
    assert mi_per_symbol_qpsk(s) == pytest.approx(qpsk_mi_monte_carlo(s, 400_000, 1), abs=6e-3)


def test_mi_monotone():
    grid = np.logspace(-3, 3, 300)
    vals = [mi_per_symbol_qpsk(float(x)) for x in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(2.0, abs=1e-6)


# -- decode models --------------------------------------------------------------

def test_mixed_pattern_sinr_mi_succeeds_at_10db():
    # oracle: Gaussian-input information 460 * log2(1 + SINR) per burst is an upper
    # bound on QPSK; the QPSK sum itself must still clear (1 + margin) * k
    per_burst = payload_partition(T16, 3).total_symbols / 3
    gauss = sum(per_burst * math.log2(1 + burst_sinr(10.0, d)) for d in (0, 1, 2))
    qpsk = mi_bits((0, 1, 2), 10.0, per_burst, 2)
    assert qpsk <= gauss
    assert qpsk >= (1 + T16.mi_margin) * 456
    phy = PhyModel(PhyVariant.SINR_MI)
    assert phy.codeword_decode_prob((0, 1, 2), 10.0, T16, n_b=3) == 1.0


def test_fer_table_model_examples():
    phy = PhyModel(PhyVariant.DEGREE_FER_TABLE)
    assert phy.codeword_decode_prob((0, 0, 0), 10.0, T16) >= 1 - 1e-4
    assert phy.codeword_decode_prob((3, 3, 3), 10.0, T16) == 0.0
    p = phy.codeword_decode_prob((1, 1, 1), 10.0, T16)
    table = phy.table_for(T16)
    assert p == pytest.approx(1 - table.fer((1, 1, 1), 10.0))


def test_collision_erasure_rules():
    phy = PhyModel(PhyVariant.COLLISION_ERASURE)
    code = get_code("turbo-1/6")
    assert phy.codeword_decode_prob((1, 1, 1), 30.0, code, replicas=True) == 0.0
    assert phy.codeword_decode_prob((5, 0, 1), 30.0, code, replicas=True) == 1.0
    assert phy.codeword_decode_prob((0, 0, 1), 30.0, code) == 0.0
    assert phy.codeword_decode_prob((0, 0, 0), -30.0, code) == 1.0


def test_pattern_size_checked():
    phy = PhyModel(PhyVariant.SINR_MI)
    with pytest.raises(InvalidInputError):
        phy.codeword_decode_prob((0, 0), 10.0, T16, n_b=3)
    with pytest.raises(InvalidInputError):
        phy.codeword_decode_prob((), 10.0, T16)


def test_unknown_variant():
    with pytest.raises(ConfigurationError):
        PhyModel.from_name("capture")


@settings(max_examples=150, deadline=None)
@given(st.sampled_from(list(PhyVariant)), st.booleans(),
       st.lists(st.integers(0, 4), min_size=3, max_size=3), st.integers(0, 2),
       st.floats(-6.0, 14.0))
def test_decode_prob_monotone_in_pattern(variant, replicas, pattern, which, esn0):
    phy = PhyModel(variant)
    better = list(pattern)
    if better[which] == 0:
        return
    better[which] -= 1
    p_worse = phy.codeword_decode_prob(pattern, esn0, T16, replicas=replicas)
    p_better = phy.codeword_decode_prob(better, esn0, T16, replicas=replicas)
    assert 0.0 <= p_worse <= p_better <= 1.0


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(list(PhyVariant)), st.lists(st.integers(0, 3), min_size=3, max_size=3),
       st.floats(-6.0, 12.0), st.floats(0.1, 3.0))
def test_decode_prob_monotone_in_snr(variant, pattern, esn0, step):
    phy = PhyModel(variant)
    assert (phy.codeword_decode_prob(pattern, esn0, T16)
            <= phy.codeword_decode_prob(pattern, esn0 + step, T16))


@pytest.mark.parametrize("n_b", [1, 2, 3, 4])
@pytest.mark.parametrize("k,rate", [(8, 1 / 2), (12, 1 / 3), (6, 1 / 6)])
def test_sinr_mi_infinite_snr_boundary(n_b, k, rate):
    """At infinite Es/N0, with erased or clean bursts only and the margin that makes
    the model demand the full codeword (k/R bits), decoding succeeds exactly when the
    clean bursts carry at least k/R coded bits."""
    code = CodeSpec("toy", Fraction(rate).limit_denominator(12), k * n_b * 2,
                    erasure_degree_threshold=2)
    coded = code.coded_bits
    phy = PhyModel(PhyVariant.SINR_MI, margin=float(1 / code.rate) - 1.0)
    per_burst_bits = 2 * payload_partition(code, 1).total_symbols / n_b
    for pattern in itertools.product((0, 3), repeat=n_b):
        clean = pattern.count(0)
        brute = clean * per_burst_bits >= coded
        got = phy.codeword_decode_prob(pattern, math.inf, code)
        assert (got == 1.0) == brute, pattern


# -- FER tables ---------------------------------------------------------------

def _table(rows):
    t = FerTable("t")
    for pat, (x, f) in rows.items():
        t.rows[pat] = (np.array(x, float), np.array(f, float))
    return t


def test_fer_lookup_examples():
    t = _table({(0, 0, 0): ([0.0, 1.0, 2.0], [0.5, 0.1, 0.001])})
    assert fer_lookup(t, (0, 0, 0), 1.0) == 0.1
    mid = fer_lookup(t, (0, 0, 0), 1.5)
    assert 0.001 < mid < 0.1
    assert mid == pytest.approx(math.sqrt(0.1 * 0.001))
    assert fer_lookup(t, (0, 0, 0), -5.0) == 0.5
    assert fer_lookup(t, (0, 0, 0), 50.0) == 0.001


def test_fer_floor():
    t = _table({(0,): ([0.0, 1.0], [0.5, 0.0])})
    assert fer_lookup(t, (0,), 5.0) == FER_FLOOR


def test_fer_lookup_missing_row(caplog):
    t = _table({(0, 0, 0): ([0.0], [0.5])})
    with pytest.raises(InvalidInputError):
        fer_lookup(t, (1, 1, 1), 0.0)
    with caplog.at_level(logging.WARNING, logger="musca.phy"):
        assert fer_lookup(t, (1, 1, 1), 0.0, fallback=lambda p, x: 0.25) == 0.25
    assert "no FER row" in caplog.text
    with pytest.raises(ConfigurationError):
        fer_lookup(FerTable("empty"), (0,), 0.0)


def test_shipped_table_high_snr_floor():
    table = read_fer_tables(resolve_data_path("fer_turbo_1_6.csv"))["turbo-1/6"]
    assert fer_lookup(table, (0, 0, 0), 10.0) <= 1e-4
    assert set(table.patterns()) == {(0, 0, 0), (1, 1, 1), (2, 2, 2)}
    assert table.violations() == []


def test_table_validation_rejects(tmp_path):
    bad_rise = _table({(0,): ([0.0, 1.0], [0.1, 0.2])})
    assert any("rises" in m for m in bad_rise.violations())
    bad_dom = _table({(0,): ([0.0], [0.3]), (1,): ([0.0], [0.2])})
    assert any("1 has fer" in m for m in bad_dom.violations())
    bad_range = _table({(0,): ([0.0], [1.5])})
    assert bad_range.violations()
    path = tmp_path / "t.csv"
    write_fer_table(bad_rise, path)
    with pytest.raises(ConfigurationError):
        read_fer_tables(path)
    assert read_fer_tables(path, validate=False)["t"].violations()
    path.write_text("code,pattern,snr,fer\n")
    with pytest.raises(ConfigurationError):
        read_fer_tables(path)


def test_table_round_trip(tmp_path):
    t = capacity_gap_table(T16, 3, 1.2, 0.3, np.arange(-8, 4, 0.5))
    path = tmp_path / "fer.csv"
    write_fer_table(t, path)
    back = read_fer_tables(path)["turbo-1/6"]
    for pat in t.patterns():
        assert np.array_equal(back.rows[pat][0], t.rows[pat][0])
        assert np.array_equal(back.rows[pat][1], t.rows[pat][1])


def test_canonical_pattern_and_dominance():
    assert canonical_pattern((5, 0, 2), 2) == (0, 2, 3)
    assert dominates((1, 1, 1), (0, 1, 0))
    assert not dominates((0, 2), (1, 1))
    assert not dominates((1,), (0, 0))


def test_calibration_reproduces_fifty_percent_points():
    table = read_fer_tables(resolve_data_path("fer_turbo_1_6.csv"))["turbo-1/6"]
    margin, detail = calibrate_margin(table, T16)
    assert margin == pytest.approx(T16.mi_margin, abs=5e-4)
    for d in detail.values():
        assert d["model_db"] == pytest.approx(d["esn0_50_db"], abs=0.15)
    assert fifty_percent_point(table, (0, 0, 0)) == pytest.approx(detail["0-0-0"]["esn0_50_db"])


def test_load_phy(tmp_path):
    phy = load_phy("sinr-mi", margin=0.5)
    assert phy.variant is PhyVariant.SINR_MI and phy.margin_for(T16) == 0.5
    assert load_phy("fer-table").margin_for(T16) == T16.mi_margin
    with pytest.raises(OSError):
        load_phy("fer-table", fer_table=tmp_path / "missing.csv")
