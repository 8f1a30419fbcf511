"""Lattice enumeration, exact rational PMF, and the dyadic prefix code.

The reference values here are computed from first principles: dyadic
codewords by hand, tail masses from the closed-form geometric sums, and
codeword lengths from an independent integer-only ceiling log.
"""

import json
import math
from fractions import Fraction

import pytest

from _oracles import ceil_neg_log2
from quantlqg.codec import (
    Codeword,
    LatticeEnumeration,
    LatticePmf,
    build_pmf,
    decode,
    decode_stream,
    encode,
    enumerate_index,
    enumerate_point,
    expected_length,
    geometric_pmf,
)
from quantlqg.errors import (
    BadParameter,
    DimensionMismatch,
    EmptyHistogram,
    MalformedCodeword,
    ParseError,
    PrecisionExhausted,
)


def dyadic_pmf():
    # masses 1/2, 1/4, 1/4 at 0, -1, +1; every quantity is hand-checkable
    core = {(0,): Fraction(1, 2), (-1,): Fraction(1, 4), (1,): Fraction(1, 4)}
    return LatticePmf(m=1, Delta=1.0, core=core, tail_epsilon=0.0, tail_decay=0.5)


class TestEnumeration:
    def test_one_dimensional_order(self):
        e = LatticeEnumeration(1)
        assert [e.point_at(i) for i in range(5)] == [(0,), (-1,), (1,), (-2,), (2,)]
        assert e.index_of((0,)) == 0
        assert e.index_of((-1,)) == 1
        assert e.index_of((1,)) == 2
        assert e.index_of((-2,)) == 3

    def test_two_dimensional_first_shell(self):
        e = LatticeEnumeration(2)
        shell = [e.point_at(i) for i in range(1, 9)]
        assert shell == [(-1, -1), (-1, 0), (-1, 1), (0, -1),
                         (0, 1), (1, -1), (1, 0), (1, 1)]

    def test_round_trip(self):
        for m in (1, 2, 3):
            e = LatticeEnumeration(m)
            for i in range(300):
                assert e.index_of(e.point_at(i)) == i

    def test_far_points_round_trip(self):
        e = LatticeEnumeration(2)
        for pt in [(40, -7), (-100, 100), (0, 313)]:
            assert e.point_at(e.index_of(pt)) == pt

    def test_shells_are_contiguous(self):
        e = LatticeEnumeration(2)
        radii = [max(abs(c) for c in e.point_at(i)) if i else 0 for i in range(200)]
        assert radii == sorted(radii)

    def test_module_level_helpers(self):
        assert enumerate_index((0, 0)) == 0
        p = enumerate_point(4, 2, Delta=0.5)
        assert p.Delta == 0.5
        assert enumerate_index(p.coords) == 4


class TestPmfConstruction:
    def test_core_mixes_with_tail(self):
        pmf = build_pmf({(0,): 99}, tail_epsilon=0.01, tail_decay=0.5)
        eps = Fraction(0.01)
        # tail mass at the origin is (1-rho)/(1+rho) = 1/3 for rho = 1/2
        assert pmf.mass((0,)) == (1 - eps) + eps * Fraction(1, 3)
        assert pmf.mass((5,)) == eps * Fraction(1, 3) * Fraction(1, 2) ** 5

    def test_masses_sum_to_one_exactly(self):
        pmf = build_pmf({(0,): 5, (1,): 3, (-2,): 2}, tail_epsilon=0.125,
                        tail_decay=0.5)
        # the 201 points of radius <= 100 cover everything but the far tail
        total = sum(pmf.mass(pmf._enum.point_at(i)) for i in range(201))
        tail_beyond = Fraction(0.125) * 2 * Fraction(1, 2) ** 101 / Fraction(3, 2)
        assert total == 1 - tail_beyond

    def test_two_dimensional_tail_is_a_product(self):
        pmf = geometric_pmf(2, 1.0, decay=0.5)
        g = Fraction(1, 3)
        for pt in [(0, 0), (1, 0), (2, -3), (-1, -1)]:
            want = g * g * Fraction(1, 2) ** (abs(pt[0]) + abs(pt[1]))
            assert pmf.mass(pt) == want

    def test_histogram_validation(self):
        with pytest.raises(EmptyHistogram):
            build_pmf({})
        with pytest.raises(BadParameter):
            build_pmf({(0,): 1}, tail_epsilon=0.0)
        with pytest.raises(BadParameter):
            build_pmf({(0,): 1}, tail_epsilon=1.0)
        with pytest.raises(BadParameter):
            build_pmf({(0,): 1}, tail_decay=1.0)
        with pytest.raises(BadParameter):
            build_pmf({(0,): -2, (1,): 3})

    def test_mixed_dimension_keys_rejected(self):
        with pytest.raises(DimensionMismatch):
            build_pmf({(0,): 1, (0, 0): 1})

    def test_top_symbols_ranked_by_mass(self):
        pmf = geometric_pmf(1, 1.0, decay=0.5)
        top = pmf.top_symbols(5)
        assert top[0] == (0,)
        masses = [pmf.mass_float(k) for k in top]
        assert masses == sorted(masses, reverse=True)


class TestCumulative:
    def test_axis_cumulative_matches_brute_force(self):
        pmf = geometric_pmf(1, 1.0, decay=0.5)
        e = pmf._enum
        running = Fraction(0)
        for i in range(64):
            pt = e.point_at(i)
            assert pmf.cumulative_before(pt) == running
            running += pmf.mass(pt)

    def test_fbar_is_the_interval_midpoint(self):
        pmf = dyadic_pmf()
        for pt in [(0,), (-1,), (1,)]:
            lo = pmf.cumulative_before(pt)
            assert pmf.fbar(pt) == lo + pmf.mass(pt) / 2

    def test_fbar_strictly_increasing(self):
        pmf = build_pmf({(0,): 7, (2,): 1}, tail_epsilon=0.25, tail_decay=0.5)
        e = pmf._enum
        vals = [pmf.fbar(e.point_at(i)) for i in range(50)]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestDyadicCode:
    def test_hand_computed_codewords(self):
        pmf = dyadic_pmf()
        # F-bar 1/4 -> length 2 -> floor(1/4 * 4) = 1 -> "01"
        assert encode((0,), pmf).bits == "01"
        # F-bar 5/8 -> length 3 -> "101"; F-bar 7/8 -> "111"
        assert encode((-1,), pmf).bits == "101"
        assert encode((1,), pmf).bits == "111"

    def test_decode_inverts_encode(self):
        pmf = dyadic_pmf()
        for pt in [(0,), (-1,), (1,)]:
            word = encode(pt, pmf)
            got, used = decode(word.bits, pmf)
            assert got.coords == pt
            assert used == word.length

    def test_unused_prefix_is_malformed(self):
        with pytest.raises(MalformedCodeword):
            decode("00", dyadic_pmf())
        with pytest.raises(MalformedCodeword):
            decode("", dyadic_pmf())
        with pytest.raises(MalformedCodeword):
            decode("01x", dyadic_pmf())

    def test_streaming_round_trip(self):
        pmf = dyadic_pmf()
        bits = "".join(encode(p, pmf).bits for p in [(0,), (-1,), (1,)])
        assert bits == "01101111"
        pts, used = decode_stream(bits, pmf)
        assert [p.coords for p in pts] == [(0,), (-1,), (1,)]
        assert used == len(bits)
        with pytest.raises(MalformedCodeword):
            decode_stream(bits, pmf, count=4)

    def test_expected_length_of_dyadic_code(self):
        pmf = dyadic_pmf()
        law = {(0,): 0.5, (-1,): 0.25, (1,): 0.25}
        assert expected_length(pmf, law) == pytest.approx(2.5)
        entropy = 1.5
        assert expected_length(pmf, law) <= entropy + 2.0
        with pytest.raises(BadParameter):
            expected_length(pmf, {(0,): 1.0, (1,): 0.25})

    def test_lengths_match_integer_ceiling_log(self):
        pmf = geometric_pmf(1, 1.0, decay=0.9)
        for k in pmf.top_symbols(200):
            want = ceil_neg_log2(pmf.mass(k)) + 1
            assert pmf.codeword_length(k) == want
            assert encode(k, pmf).length == want

    def test_kraft_sum_within_budget(self):
        pmf = geometric_pmf(1, 1.0, decay=0.9)
        kraft = sum(Fraction(1, 2 ** pmf.codeword_length(k))
                    for k in pmf.top_symbols(2000))
        assert kraft <= 1

    def test_prefix_free_over_top_symbols(self):
        pmf = build_pmf({(0,): 60, (1,): 25, (-1,): 10, (3,): 5},
                        tail_epsilon=0.05, tail_decay=0.7)
        words = sorted(encode(k, pmf).bits for k in pmf.top_symbols(300))
        for a, b in zip(words, words[1:]):
            assert not b.startswith(a), f"{a} prefixes {b}"

    def test_round_trip_far_from_the_core(self):
        # lengths past 256 force the precision ladder to climb
        pmf = geometric_pmf(1, 1.0, decay=0.5)
        for pt in [(300,), (-300,), (700,)]:
            word = encode(pt, pmf)
            assert word.length > 256
            got, used = decode(word.bits, pmf)
            assert got.coords == pt and used == word.length

    def test_vanishing_mass_exhausts_precision(self):
        pmf = geometric_pmf(1, 1.0, decay=0.5)
        with pytest.raises(PrecisionExhausted):
            encode((140_000,), pmf)

    def test_codeword_validation(self):
        w = Codeword(bits="0101", length=4)
        assert w.length == 4
        with pytest.raises(BadParameter):
            Codeword(bits="012", length=3)
        with pytest.raises(BadParameter):
            Codeword(bits="01", length=3)


class TestSerialization:
    def test_json_round_trip_is_exact(self):
        pmf = build_pmf({(0,): 9, (-1,): 6, (2,): 1}, tail_epsilon=0.01,
                        tail_decay=0.6)
        clone = LatticePmf.from_json(pmf.to_json())
        for i in range(100):
            pt = pmf._enum.point_at(i)
            assert clone.mass(pt) == pmf.mass(pt)
        for pt in [(0,), (-1,), (2,), (7,)]:
            assert encode(pt, clone).bits == encode(pt, pmf).bits

    def test_save_load(self, tmp_path):
        pmf = geometric_pmf(2, 0.5, decay=0.8)
        path = tmp_path / "pmf.json"
        pmf.save(path)
        clone = LatticePmf.load(path)
        assert clone.m == 2 and clone.Delta == 0.5
        assert clone.mass((1, -1)) == pmf.mass((1, -1))

    def test_malformed_documents_rejected(self):
        with pytest.raises(ParseError):
            LatticePmf.from_json("not json")
        good = json.loads(geometric_pmf(1, 1.0).to_json())
        bad = dict(good, format="something-else")
        with pytest.raises(ParseError):
            LatticePmf.from_json(json.dumps(bad))
        bad = json.loads(geometric_pmf(1, 1.0).to_json())
        bad["core"] = [[[0], "3/0"]]
        bad["count"] = 1
        with pytest.raises(ParseError):
            LatticePmf.from_json(json.dumps(bad))
