"""Range coder: lossless round trips, length bounds, and damage tolerance."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcodec import entropy as E
from nvcodec import rangecoder as RC
from nvcodec.errors import BitstreamError, DataError
from nvcodec.tensor import Tensor


def _params(mu, sigma):
    return E.GaussianParams(mu=Tensor(np.asarray(mu, dtype=np.float64)),
                            sigma=Tensor(np.asarray(sigma, dtype=np.float64)))


def _single_symbol_table():
    return E.CdfTable(rows=np.array([[0, E.CDF_TOTAL]], dtype=np.int64), offset=0)


class TestRoundTrip:
    def test_zero_entropy_stream(self):
        symbols = np.zeros(1000, dtype=np.int64)
        segment = RC.range_encode(symbols, _single_symbol_table())
        assert len(segment) - 4 <= 8
        out = RC.range_decode(segment, _single_symbol_table(), 1000)
        assert np.array_equal(out, symbols)

    def test_large_random_round_trip(self):
        rng = np.random.default_rng(70)
        n = 100_000
        mu = rng.uniform(-8, 8, n)
        sigma = rng.uniform(0.2, 6.0, n)
        tables = E.build_cdf_table(_params(mu, sigma), -32, 32)
        symbols = E.clamp_symbols(np.round(rng.normal(mu, sigma)), -32, 32)
        segment = RC.range_encode(symbols, tables)
        out = RC.range_decode(segment, tables, n)
        assert np.array_equal(out, symbols)

    def test_shared_single_row_table(self):
        rng = np.random.default_rng(71)
        tables = E.build_cdf_table(_params([0.0], [3.0]), -16, 16)
        symbols = E.clamp_symbols(np.round(rng.normal(0, 3, 5000)), -16, 16)
        segment = RC.range_encode(symbols, tables)
        assert np.array_equal(RC.range_decode(segment, tables, 5000), symbols)

    @given(st.lists(st.integers(-8, 8), min_size=0, max_size=200), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_any_inrange_sequence(self, values, seed):
        rng = np.random.default_rng(seed)
        n = len(values)
        sigma = rng.uniform(0.15, 5.0, max(n, 1))
        mu = rng.uniform(-4, 4, max(n, 1))
        tables = E.build_cdf_table(_params(mu[:n] if n else mu, sigma[:n] if n else sigma), -8, 8)
        symbols = np.asarray(values, dtype=np.int64)
        if n == 0:
            tables = E.build_cdf_table(_params([0.0], [1.0]), -8, 8)
        segment = RC.range_encode(symbols, tables)
        assert np.array_equal(RC.range_decode(segment, tables, n), symbols)

    def test_adaptive_tables_round_trip(self):
        # table for position i computed from the previously coded symbol, the
        # contract autoregressive decoding relies on
        rng = np.random.default_rng(72)
        symbols = E.clamp_symbols(np.round(rng.normal(0, 2, 400)), -16, 16)
        enc = RC.RangeEncoder()
        prev = 0
        for s in symbols:
            table = E.build_cdf_table(_params([0.5 * prev], [1.5]), -16, 16)
            row = table.rows[0]
            idx = int(s) - table.offset
            enc.encode(int(row[idx]), int(row[idx + 1]))
            prev = int(s)
        payload = enc.finish()
        dec = RC.RangeDecoder(payload)
        prev = 0
        decoded = []
        for _ in range(symbols.size):
            table = E.build_cdf_table(_params([0.5 * prev], [1.5]), -16, 16)
            idx = dec.decode(table.rows[0])
            prev = idx + table.offset
            decoded.append(prev)
        assert np.array_equal(np.asarray(decoded), symbols)


class TestLengthBounds:
    def test_payload_near_ideal_code_length(self):
        rng = np.random.default_rng(73)
        n = 100_000
        mu = rng.uniform(-4, 4, n)
        sigma = rng.uniform(0.3, 5.0, n)
        tables = E.build_cdf_table(_params(mu, sigma), -32, 32)
        symbols = E.clamp_symbols(np.round(rng.normal(mu, sigma)), -32, 32)
        segment = RC.range_encode(symbols, tables)
        quant = tables.quantized_pmf()
        probs = quant[np.arange(n), symbols - tables.offset]
        ideal_bits = float(-np.log2(probs).sum())
        payload_len = len(segment) - 4
        assert payload_len <= ideal_bits / 8.0 + 32
        est = E.estimate_rate(Tensor(symbols.astype(np.float64)), _params(mu, sigma)).item()
        assert payload_len <= est * 1.01 / 8.0 + 32

    def test_empty_stream_overhead(self):
        segment = RC.range_encode(np.zeros(0, dtype=np.int64), _single_symbol_table())
        assert len(segment) == 4 + 5  # length prefix plus coder flush
        out = RC.range_decode(segment, _single_symbol_table(), 0)
        assert out.size == 0


class TestErrors:
    def test_symbol_out_of_range(self):
        tables = E.build_cdf_table(_params([0.0], [1.0]), -4, 4)
        with pytest.raises(DataError, match="outside"):
            RC.range_encode(np.array([9]), tables)

    def test_row_count_mismatch(self):
        tables = E.build_cdf_table(_params([0.0, 0.0], [1.0, 1.0]), -4, 4)
        with pytest.raises(DataError, match="rows"):
            RC.range_encode(np.array([0, 0, 0]), tables)

    def test_truncated_payload(self):
        tables = E.build_cdf_table(_params([0.0], [2.0]), -16, 16)
        rng = np.random.default_rng(74)
        symbols = E.clamp_symbols(np.round(rng.normal(0, 2, 2000)), -16, 16)
        segment = RC.range_encode(symbols, tables)
        clipped = segment[: len(segment) // 2]
        with pytest.raises(BitstreamError):
            RC.range_decode(clipped, tables, 2000)

    def test_declared_length_beyond_buffer(self):
        bogus = struct.pack("<I", 100) + b"\x00" * 10
        with pytest.raises(BitstreamError, match="declares"):
            RC.range_decode(bogus, _single_symbol_table(), 1)

    def test_short_header(self):
        with pytest.raises(BitstreamError):
            RC.range_decode(b"\x01\x00", _single_symbol_table(), 1)

    @given(st.integers(0, 2**31), st.integers(0, 60), st.integers(0, 255))
    @settings(max_examples=60, deadline=None)
    def test_corruption_never_reads_past_buffer(self, seed, position, value):
        rng = np.random.default_rng(seed)
        tables = E.build_cdf_table(_params([0.0], [2.0]), -16, 16)
        symbols = E.clamp_symbols(np.round(rng.normal(0, 2, 64)), -16, 16)
        segment = bytearray(RC.range_encode(symbols, tables))
        index = 4 + position % (len(segment) - 4)
        segment[index] = value
        try:
            RC.range_decode(bytes(segment), tables, 64)
        except BitstreamError:
            pass  # acceptable: detected damage; anything else must not escape
