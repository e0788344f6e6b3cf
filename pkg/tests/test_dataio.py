import numpy as np
import pytest

from kronsub.dataio import (
    LabeledDataset,
    dumps,
    dumps_dicts,
    load_dict_file,
    load_tensor_file,
    loads,
    loads_dicts,
    read_comments,
    save_dict_file,
    save_tensor_file,
    synth_dataset,
)
from kronsub.errors import ParseError, ShapeMismatch
from kronsub.model import Dims, RngStream, sample_ensemble


def _data(seed, K=5, m1=3, m2=4, L=3):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.standard_normal((K, m1, m2)) * 10.0 ** rng.integers(-8, 8), rng.integers(0, L, K), L)


def test_synth_examples():
    ens = sample_ensemble(Dims(4, 4, 2, 2, 2), RngStream(0))
    d = synth_dataset(ens, 1, 0.1, RngStream(1))
    assert len(d) == 2 and d.labels.tolist() == [0, 1]
    d = synth_dataset(ens, 7, 0.1, RngStream(1))
    assert np.bincount(d.labels).tolist() == [7, 7]
    assert dumps(d) == dumps(synth_dataset(ens, 7, 0.1, RngStream(1)))
    with pytest.raises(ValueError):
        synth_dataset(ens, 0, 0.1, RngStream(1))


def test_round_trip_many_seeds():
    for seed in range(100):
        d = _data(seed)
        assert loads(dumps(d)).equals(d)


def test_file_round_trip_with_comments(tmp_path):
    d = _data(1)
    p = tmp_path / "d.kst"
    save_tensor_file(p, d, comments=["hello", "manifest {}"])
    assert load_tensor_file(p).equals(d)
    assert read_comments(p) == ["hello", "manifest {}"]


def test_header_layout():
    text = dumps(LabeledDataset(np.zeros((2, 1, 2)), [0, 1], 2))
    assert text == "kst 1 2 1 2 2\n0 1\n\n0 0\n\n0 0\n"


def test_truncated_file_names_block():
    text = dumps(_data(2))
    cut = "\n".join(text.splitlines()[:-2]) + "\n"
    with pytest.raises(ParseError, match="block 4"):
        loads(cut)


def test_label_count_mismatch():
    lines = dumps(_data(3)).splitlines()
    lines[1] = lines[1] + " 0"
    with pytest.raises(ShapeMismatch):
        loads("\n".join(lines))


def test_body_longer_than_header():
    text = dumps(_data(4)) + "\n1 2 3 4\n"
    with pytest.raises(ShapeMismatch):
        loads(text)


def test_malformed_entries():
    lines = dumps(_data(5)).splitlines()
    bad = list(lines)
    bad[3] = bad[3].replace(bad[3].split()[0], "abc", 1)
    with pytest.raises(ParseError, match="line 4"):
        loads("\n".join(bad))
    bad = list(lines)
    bad[3] = bad[3] + " 1.0"
    with pytest.raises(ParseError, match="block 0"):
        loads("\n".join(bad))
    with pytest.raises(ParseError):
        loads("kst 2 1 1 1 1\n0\n\n1\n")
    with pytest.raises(ParseError):
        loads("tsk 1 1 1 1 1\n0\n\n1\n")
    with pytest.raises(ParseError):
        loads("kst 1 1 1 1 1\n0\n\nnan\n")
    with pytest.raises(ShapeMismatch):
        loads("kst 1 1 1 1 1\n3\n\n1\n")


def test_dataset_invariants():
    with pytest.raises(ShapeMismatch):
        LabeledDataset(np.zeros((2, 2, 2)), [0], 2)
    with pytest.raises(ShapeMismatch):
        LabeledDataset(np.zeros((2, 2, 2)), [0, 2], 2)
    d = LabeledDataset(np.zeros((0, 2, 3)), [], 1)
    assert loads(dumps(d)).equals(d)


def test_dict_file_round_trip(tmp_path):
    ens = sample_ensemble(Dims(5, 4, 2, 3, 3), RngStream(3))
    p = tmp_path / "e.ksd"
    save_dict_file(p, ens, {"kind": "ensemble", "x": 1.5}, comments=["c"])
    classes, meta = load_dict_file(p)
    assert meta == {"kind": "ensemble", "x": 1.5}
    for a, b in zip(classes, ens):
        assert np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B)
    text = dumps_dicts(ens)
    with pytest.raises(ParseError, match="B_2"):
        loads_dicts("\n".join(text.splitlines()[:-1]))
    with pytest.raises(ParseError):
        loads_dicts(text.replace("meta {}", "meta {oops"))
