import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from puffgrammar.dataset import (Stream, WindowSet, balance, build_dataset, encode_targets, extract_region_windows,
                                 extract_windows, ingest, majority_label, partition_sizes, read_metadata, split,
                                 write_stream_csv, default_metadata, meta_path)
from puffgrammar.errors import DataError, ParseError
from puffgrammar.synth import SynthConfig, generate


def make_stream(n, label=1, rate=25.0, seed=0):
    rng = np.random.default_rng(seed)
    return Stream(np.arange(n) / rate, rng.normal(size=(n, 3)), np.full(n, label))


def test_ingest_three_rows():
    text = "t,x,y,z,label\n0.0,1,2,3,1\n0.04,1,2,3,2\n0.08,1,2,3,3\n"
    (stream,) = ingest(io.StringIO(text))
    assert len(stream) == 3
    assert list(stream.labels) == [1, 2, 3]
    assert list(stream.samples())[1] == (0.04, 1.0, 2.0, 3.0, 2)


def test_ingest_short_row_names_line():
    with pytest.raises(ParseError, match="line 3"):
        ingest(io.StringIO("t,x,y,z\n0.0,1,2,3\n0.04,1\n"))


def test_ingest_rejects_non_monotone_time():
    with pytest.raises(DataError):
        ingest(io.StringIO("t,x,y,z\n0.0,1,2,3\n0.0,1,2,3\n"))


def test_ingest_rejects_bad_label_and_rate():
    with pytest.raises(ParseError):
        ingest(io.StringIO("t,x,y,z,label\n0.0,1,2,3,7\n"))
    with pytest.raises(DataError, match="Hz"):
        ingest(io.StringIO("t,x,y,z\n0.0,1,2,3\n0.1,1,2,3\n0.2,1,2,3\n"))
    (s,) = ingest(io.StringIO("t,x,y,z\n0.0,1,2,3\n0.1,1,2,3\n"), check_sample_rate=False)
    assert s.labels is None


def test_export_ingest_round_trip(tmp_path):
    res = generate(SynthConfig(seed=3, puffs=3, distractors=1))
    stream = res.stream
    stream = Stream(stream.t[:1000], stream.xyz[:1000], stream.labels[:1000])
    path = tmp_path / "s.csv"
    write_stream_csv(stream, path, default_metadata(seed=3))
    (back,) = ingest(path)
    assert np.array_equal(back.t, stream.t)
    assert np.array_equal(back.xyz, stream.xyz)
    assert np.array_equal(back.labels, stream.labels)
    assert read_metadata(meta_path(path))["seed"] == "3"


def test_window_counts():
    assert len(extract_windows(make_stream(20))) == 1
    assert len(extract_windows(make_stream(39))) == 20
    assert len(extract_windows(make_stream(19))) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 120), st.integers(1, 30), st.integers(1, 9))
def test_window_count_formula(n, window, stride):
    expected = max(0, (n - window) // stride + 1)
    assert len(extract_windows(make_stream(n), window, stride)) == expected


def test_feature_order_interleaved():
    s = make_stream(25)
    w = extract_windows(s, stride=5)
    assert np.array_equal(w.starts, [0, 5])
    assert np.array_equal(w.features[1], s.xyz[5:25].reshape(-1))
    assert np.array_equal(w.features[1][:3], s.xyz[5])


def test_missing_labels_is_error():
    s = Stream(np.arange(30) / 25, np.zeros((30, 3)))
    with pytest.raises(DataError):
        extract_windows(s)
    assert extract_windows(s, require_labels=False).labels is None


def test_majority_and_ties():
    assert majority_label([1] * 11 + [2] * 9) == 1
    assert majority_label([1] * 10 + [2] * 10) == 2
    assert majority_label([3] * 10 + [2] * 10) == 2
    assert majority_label([3] * 10 + [4] * 10) == 3


def test_mixed_windows_use_majority():
    labels = np.array([1] * 15 + [2] * 20)
    s = Stream(np.arange(35) / 25, np.zeros((35, 3)), labels)
    w = extract_windows(s)
    expected = [majority_label(labels[k:k + 20]) for k in range(16)]
    assert list(w.labels) == expected


def test_region_windows_from_exact_gestures():
    # 172 hand-to-lip gestures of exactly 20 samples, separated by rest
    labels = np.concatenate([np.r_[np.full(20, 2), np.full(7, 1)] for _ in range(172)])
    s = Stream(np.arange(len(labels)) / 25, np.zeros((len(labels), 3)), labels)
    assert extract_region_windows(s).class_counts()[2] == 172


def windows_with_counts(counts):
    labels = np.concatenate([np.full(n, c) for c, n in counts.items()])
    n = len(labels)
    return WindowSet(np.arange(n, dtype=float)[:, None] * np.ones((1, 60)), labels, np.zeros(n, int), np.arange(n))


def test_balance_reference_counts():
    ws = windows_with_counts({2: 172, 3: 5054, 4: 172, 1: 5854})
    out = balance(ws, 30, (2, 4))
    assert out.class_counts() == {1: 5854, 2: 5160, 3: 5054, 4: 5160}
    assert len(out) == 21228


def test_balance_order_and_identity():
    ws = windows_with_counts({1: 2, 2: 2})
    assert np.array_equal(balance(ws, 1).source, ws.source)
    out = balance(ws, 3)
    assert list(out.source) == [0, 1, 2, 3, 2, 2, 3, 3]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=40), st.integers(1, 6))
def test_balance_multiplicity(labels, factor):
    n = len(labels)
    ws = WindowSet(np.arange(n, dtype=float)[:, None] * np.ones((1, 60)), np.array(labels), np.zeros(n, int),
                   np.arange(n))
    out = balance(ws, factor)
    mult = np.bincount(out.source, minlength=n)
    for i, c in enumerate(labels):
        assert mult[i] == (factor if c in (2, 4) else 1)


def test_encode_targets():
    assert encode_targets([2]).tolist() == [[0, 1, 0, 0]]
    assert encode_targets([1]).tolist() == [[1, 0, 0, 0]]
    t = encode_targets([1, 2, 3, 4, 4])
    assert np.all(t.sum(axis=1) == 1)
    with pytest.raises(DataError):
        encode_targets([5])


def test_partition_sizes():
    assert partition_sizes(21228) == (14859, 3184, 3185)
    assert partition_sizes(100) == (70, 15, 15)
    with pytest.raises(DataError):
        partition_sizes(2)
    with pytest.raises(ValueError):
        partition_sizes(10, (0.5, 0.5, 0.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 5000), st.integers(0, 2**32))
def test_split_exact_disjoint_exhaustive(n, seed):
    tags = split(n, seed=seed)
    assert len(tags) == n
    assert tuple(int(np.sum(tags == k)) for k in range(3)) == partition_sizes(n)
    assert np.array_equal(tags, split(n, seed=seed))


def test_no_leak_mode_keeps_copies_in_train():
    ws = windows_with_counts({1: 50, 2: 20, 3: 40, 4: 20})
    ds = build_dataset(ws, seed=5, leak_mode="no_leak", factor=30)
    train = set(ds.partition("train").source.tolist())
    held = ds.partition("val").source.tolist() + ds.partition("test").source.tolist()
    assert not train & set(held)
    assert len(held) == len(set(held))
    first = build_dataset(ws, seed=5, leak_mode="balance_first", factor=30)
    assert first.sizes() == partition_sizes(50 + 40 + 30 * 40)
    train_p = set(first.partition("train").source.tolist())
    assert train_p & set(first.partition("test").source.tolist())
