"""Exact retrieval index tests, including the brute-force scan oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retrodiff.dataset import generate_dataset
from retrodiff.encoders import FrozenEncoders, L_TEXT
from retrodiff.retrieval import (Index, PairStore, assemble_conditions,
                                 build_index, load_index, query_topk,
                                 save_index)
from retrodiff.tensor import ContractError


def brute_force_topk(ids, embs, query, k, exclude_id=None):
    """Independent oracle: full scan, explicit sort on (-score, id)."""
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    rows = []
    for sid, e in zip(ids, embs):
        if exclude_id is not None and sid == exclude_id:
            continue
        rows.append((-float(e @ q / np.linalg.norm(e)), int(sid)))
    rows.sort()
    return [sid for _, sid in rows[:k]]


@pytest.fixture(scope="module")
def small_world():
    train, test = generate_dataset(0, 32, 1.0, 120, 20, 0.1)
    enc = FrozenEncoders(32, seed=7)
    return train, test, enc, build_index(train, enc)


# -- build_index --------------------------------------------------------------

def test_index_size_matches_train_split(small_world):
    train, _, _, index = small_world
    assert len(index) == len(train.samples)


def test_index_rebuild_identical(small_world):
    train, _, enc, index = small_world
    again = build_index(train, enc)
    np.testing.assert_array_equal(index.embeddings, again.embeddings)
    np.testing.assert_array_equal(index.sample_ids, again.sample_ids)


def test_self_query_returns_self_with_unit_score(small_world):
    train, _, enc, index = small_world
    sid, cap, _ = train.samples[17]
    ids, scores = query_topk(index, enc.encode_text_global(cap), 1)
    assert ids[0] == sid
    assert abs(scores[0] - 1.0) < 1e-6


# -- query_topk ---------------------------------------------------------------

def test_exhaustive_k_with_exclusion(small_world):
    train, _, enc, index = small_world
    sid, cap, _ = train.samples[0]
    q = enc.encode_text_global(cap)
    ids, scores = query_topk(index, q, len(index) - 1, exclude_id=sid)
    assert sid not in ids
    assert len(ids) == len(index) - 1
    assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_excluded_own_id_absent(small_world):
    train, _, enc, index = small_world
    for row in (3, 50, 100):
        sid, cap, _ = train.samples[row]
        ids, _ = query_topk(index, enc.encode_text_global(cap), 5,
                            exclude_id=sid)
        assert sid not in ids


def test_query_matches_brute_force_oracle_randomized():
    rng = np.random.default_rng(0)
    for trial in range(100):
        n, d = 1000, 32
        embs = rng.normal(size=(n, d))
        ids = rng.permutation(5000)[:n]
        index = Index(ids, embs)
        q = rng.normal(size=d)
        k = int(rng.choice([1, 5, 10]))
        exclude = int(ids[rng.integers(n)]) if trial % 3 == 0 else None
        got, _ = query_topk(index, q, k, exclude_id=exclude)
        ref = brute_force_topk(ids, embs, q, k, exclude)
        assert list(got) == ref


def test_tie_break_is_ascending_id():
    e = np.eye(4)[[0, 0, 0, 1]]           # three identical embeddings
    index = Index(np.array([30, 10, 20, 5]), e)
    ids, scores = query_topk(index, np.array([1.0, 0, 0, 0]), 3)
    assert list(ids) == [10, 20, 30]
    np.testing.assert_allclose(scores, 1.0)


def test_query_contract_violations(small_world):
    _, _, enc, index = small_world
    with pytest.raises(ContractError):
        query_topk(index, np.ones(index.dim), 0)
    with pytest.raises(ContractError):
        query_topk(index, np.ones(index.dim), len(index) + 1)


def test_query_count_increments(small_world):
    _, _, _, index = small_world
    before = index.query_count
    query_topk(index, np.ones(index.dim), 1)
    assert index.query_count == before + 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8))
def test_query_oracle_property(seed, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(k + 1, 50))
    embs = rng.normal(size=(n, 8))
    ids = np.arange(100, 100 + n)
    index = Index(ids, embs)
    q = rng.normal(size=8)
    got, _ = query_topk(index, q, k)
    assert list(got) == brute_force_topk(ids, embs, q, k)


# -- conditions ---------------------------------------------------------------

def test_single_pair_condition_is_its_audio_embedding(small_world):
    train, _, enc, index = small_world
    store = PairStore(train, enc)
    sid, cap, _ = train.samples[4]
    ids, scores = query_topk(index, enc.encode_text_global(cap), 1,
                             exclude_id=sid)
    pairs = store.pairs(ids, scores)
    cond = assemble_conditions(pairs)
    np.testing.assert_array_equal(cond.audio, pairs[0].audio_seq)
    assert cond.k == 1


def test_condition_row_counts(small_world):
    train, _, enc, index = small_world
    store = PairStore(train, enc)
    sid, cap, _ = train.samples[9]
    ids, scores = query_topk(index, enc.encode_text_global(cap), 3,
                             exclude_id=sid)
    cond = assemble_conditions(store.pairs(ids, scores))
    assert cond.text.shape[0] == 3 * L_TEXT == 24
    assert cond.audio.shape[0] == 3 * 64


def test_condition_block_order_follows_pair_order(small_world):
    train, _, enc, index = small_world
    store = PairStore(train, enc)
    sid, cap, _ = train.samples[11]
    ids, scores = query_topk(index, enc.encode_text_global(cap), 2,
                             exclude_id=sid)
    fwd = assemble_conditions(store.pairs(ids, scores))
    rev = assemble_conditions(store.pairs(ids[::-1], scores[::-1]))
    L = fwd.audio.shape[0] // 2
    np.testing.assert_array_equal(fwd.audio[:L], rev.audio[L:])
    np.testing.assert_array_equal(fwd.audio[L:], rev.audio[:L])


# -- persistence --------------------------------------------------------------

def test_index_file_round_trip(tmp_path, small_world):
    _, _, _, index = small_world
    p = str(tmp_path / "index.bin")
    save_index(p, index)
    back = load_index(p)
    assert len(back) == len(index)
    np.testing.assert_array_equal(back.sample_ids, index.sample_ids)
    np.testing.assert_allclose(back.embeddings, index.embeddings,
                               atol=1e-6)   # f32 storage
