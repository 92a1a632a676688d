import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from quakemfcc.waveform import (
    DatasetEntry, Waveform, WavFormatError, encode_wav_pcm, interpolation_filter, load_wav,
    normalize, quantize, read_csv, read_manifest, read_wav, save_wav, upsample, write_csv,
    write_manifest, write_wav,
)


def wav_bytes(pcm, rate=200, fmt=1, channels=1, bits=16):
    payload = np.asarray(pcm, dtype="<i2").tobytes()
    return struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16,
                       fmt, channels, rate, rate * 2, 2, bits, b"data", len(payload)) + payload


class TestWaveform:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Waveform([0.0, np.nan], 100)

    @pytest.mark.parametrize("rate", [0, -5, 10.5])
    def test_rejects_bad_rate(self, rate):
        with pytest.raises(ValueError):
            Waveform([0.0], rate)

    def test_samples_are_read_only(self):
        w = Waveform([1.0, 2.0], 10)
        with pytest.raises(ValueError):
            w.samples[0] = 3.0

    def test_window_slices_and_checks_bounds(self):
        w = Waveform(np.arange(100.0), 10)
        assert np.array_equal(w.window(2.0, 1.0).samples, np.arange(20.0, 30.0))
        with pytest.raises(ValueError):
            w.window(9.5, 1.0)


class TestWav:
    def test_scaling_example(self):
        w = read_wav(wav_bytes([0, 16384, -32768], 200))
        assert w.sample_rate == 200
        assert w.samples.tolist() == [0.0, 0.5, -1.0]

    def test_empty_data_chunk_is_valid(self):
        assert len(read_wav(wav_bytes([], 200))) == 0

    def test_write_rejects_empty(self):
        with pytest.raises(ValueError):
            write_wav(Waveform([], 100))

    def test_positive_full_scale_clips(self):
        payload = write_wav(Waveform([1.0], 100))[44:]
        assert np.frombuffer(payload, "<i2").tolist() == [32767]

    def test_zero_sample(self):
        assert np.frombuffer(write_wav(Waveform([0.0], 100))[44:], "<i2").tolist() == [0]

    def test_round_half_away_from_zero(self):
        q = quantize(np.array([0.5, -0.5, 1.5, -1.5, 2.5]) / 32768)
        assert q.tolist() == [1, -1, 2, -2, 3]

    def test_out_of_range_is_clipped(self):
        assert quantize([3.0, -3.0]).tolist() == [32767, -32768]

    @given(arrays(np.int16, st.integers(0, 300)), st.integers(1, 96000))
    def test_bytes_round_trip(self, pcm, rate):
        data = encode_wav_pcm(pcm, rate)
        w = read_wav(data)
        if len(w):
            assert write_wav(w) == data
        else:
            assert w.sample_rate == rate

    @given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-1, 1)))
    def test_sample_round_trip_within_one_lsb(self, x):
        w = read_wav(write_wav(Waveform(x, 1000)))
        assert np.max(np.abs(w.samples - x)) <= 1 / 32768

    def test_extra_chunks_and_padding_are_skipped(self):
        base = wav_bytes([1, 2, 3], 100)
        extra = b"LIST" + struct.pack("<I", 3) + b"abc" + b"\0"
        data = base[:12] + extra + base[12:]
        data = data[:4] + struct.pack("<I", len(data) - 8) + data[8:]
        assert read_wav(data).samples.tolist() == [1 / 32768, 2 / 32768, 3 / 32768]

    @pytest.mark.parametrize("mutate, message", [
        (lambda b: b"RIFX" + b[4:], "RIFF"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b[:12], "fmt"),
    ])
    def test_malformed(self, mutate, message):
        with pytest.raises(WavFormatError, match=message):
            read_wav(mutate(wav_bytes([1, 2, 3])))

    @pytest.mark.parametrize("kw", [{"fmt": 3}, {"channels": 2}, {"bits": 8}])
    def test_unsupported_encoding(self, kw):
        with pytest.raises(WavFormatError):
            read_wav(wav_bytes([1, 2], **kw))

    def test_missing_data_chunk(self):
        b = wav_bytes([1, 2])
        with pytest.raises(WavFormatError, match="data"):
            read_wav(b[:36])

    def test_file_helpers(self, tmp_path):
        w = Waveform([0.25, -0.5], 200)
        save_wav(tmp_path / "a.wav", w)
        back = load_wav(tmp_path / "a.wav")
        assert back.samples.tolist() == [0.25, -0.5]
        assert back.source_id.endswith("a.wav")


class TestCsv:
    def test_header_rate(self):
        w = read_csv("# rate=200\n0.0\n0.1\n")
        assert w.sample_rate == 200 and w.samples.tolist() == [0.0, 0.1]

    def test_bad_line_is_named(self):
        with pytest.raises(ValueError, match="line 1"):
            read_csv("abc", sample_rate=10)

    def test_missing_rate(self):
        with pytest.raises(ValueError, match="rate"):
            read_csv("0.1\n")

    def test_generator_round_trip(self):
        from quakemfcc.synth import quake_trace
        w = quake_trace(np.random.default_rng(3), 1000, duration=1.0).waveform
        assert len(w) == 1000
        assert read_csv(write_csv(w)) == w

    @given(arrays(np.float64, st.integers(0, 50), elements=st.floats(-1e6, 1e6)))
    def test_round_trip_exact(self, x):
        assert np.array_equal(read_csv(write_csv(Waveform(x, 50))).samples, x)


class TestManifest:
    def test_round_trip(self):
        entries = [DatasetEntry("a.wav", "earthquake", "train", 11.5, 12.0),
                   DatasetEntry("b.wav", "non_earthquake", "test")]
        assert read_manifest(write_manifest(entries)) == entries

    def test_three_column_manifest(self):
        e = read_manifest("path,label,split\nx.wav,earthquake,test\n")
        assert e == [DatasetEntry("x.wav", "earthquake", "test")]

    def test_duplicate_paths_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            read_manifest("path,label,split\nx,earthquake,test\nx,earthquake,train\n")

    @pytest.mark.parametrize("row", ["x,quake,test", "x,earthquake,dev"])
    def test_bad_enum(self, row):
        with pytest.raises(ValueError, match="line 2"):
            read_manifest("path,label,split\n" + row + "\n")

    def test_missing_column(self):
        with pytest.raises(ValueError, match="split"):
            read_manifest("path,label\nx,earthquake\n")


class TestNormalize:
    def test_examples(self):
        assert normalize(Waveform([0.5, -0.25], 1)).samples.tolist() == [1.0, -0.5]
        assert normalize(Waveform([1.0], 1)).samples.tolist() == [1.0]

    @pytest.mark.parametrize("x", [[], [0.0, 0.0]])
    def test_rejects_degenerate(self, x):
        with pytest.raises(ValueError):
            normalize(Waveform(x, 1))

    @given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e3, 1e3)))
    def test_peak_is_exactly_one_and_idempotent(self, x):
        if not np.any(x):
            return
        n = normalize(Waveform(x, 10))
        assert np.max(np.abs(n.samples)) == 1.0
        assert normalize(n) == n


class TestUpsample:
    def test_identity(self):
        w = Waveform(np.random.default_rng(0).normal(size=50), 200)
        assert upsample(w, 200) == w

    def test_length_200_to_1000(self):
        w = Waveform(np.random.default_rng(0).normal(size=400), 200)
        out = upsample(w, 1000)
        assert out.sample_rate == 1000
        assert abs(len(out) - 2000) <= 1

    @pytest.mark.parametrize("src, dst, n", [(200, 1000, 401), (200, 300, 77), (44, 1000, 30)])
    def test_duration_within_one_output_period(self, src, dst, n):
        out = upsample(Waveform(np.ones(n), src), dst)
        assert abs(out.duration - n / src) <= 1 / dst

    def test_rejects_downsampling_and_empty(self):
        with pytest.raises(ValueError):
            upsample(Waveform([1.0, 2.0], 1000), 200)
        with pytest.raises(ValueError):
            upsample(Waveform([], 200), 1000)

    def test_filter_has_unit_dc_gain_per_phase(self):
        h = interpolation_filter(5)
        assert h.size % 2 == 1
        assert np.allclose([h[p::5].sum() for p in range(5)], 1.0, atol=1e-3)

    def test_tone_spectrum(self):
        t = np.arange(600) / 200
        out = upsample(Waveform(np.sin(2 * np.pi * 10 * t), 200), 1000)
        interior = out.samples[1000:2000]  # one second, ten whole cycles
        p = oracles.dft_power(interior, 1000)
        freqs = np.arange(p.size)
        assert freqs[np.argmax(p)] == 10
        out_of_band = p[freqs > 100].sum() / p.sum()
        assert 10 * np.log10(out_of_band) <= -60

    @pytest.mark.parametrize("f", [3.0, 17.0, 40.0, 44.0])
    def test_tone_amplitude_and_phase(self, f):
        t = np.arange(800) / 200
        out = upsample(Waveform(np.sin(2 * np.pi * f * t + 0.3), 200), 1000)
        tt = np.arange(len(out)) / 1000
        ref = np.sin(2 * np.pi * f * tt + 0.3)
        mid = slice(800, len(out) - 800)
        assert np.max(np.abs(out.samples[mid] - ref[mid])) < 0.01

    def test_original_samples_are_kept(self):
        x = np.sin(2 * np.pi * 7 * np.arange(400) / 200)
        out = upsample(Waveform(x, 200), 1000)
        assert np.max(np.abs(out.samples[::5][50:-50] - x[50:-50])) < 1e-3
