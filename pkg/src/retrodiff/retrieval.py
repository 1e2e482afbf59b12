"""Exact top-k retrieval over the training split's caption embeddings.

The index is a single contiguous (n, d) matrix of unit-norm caption
embeddings, so a query is one matvec plus an argpartition. Search is
exact by design: the desk-scale index makes approximate structures
pointless and exactness lets every query be checked against a
brute-force scan.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dataset import ConfigError, Dataset
from .encoders import (EMB_KIND_AUDIO_SEQ, EMB_KIND_TEXT_SEQ, FrozenEncoders,
                       L_TEXT)
from .tensor import ContractError, DimensionError


@dataclass
class RetrievalPair:
    """One retrieved neighbor with its cached embeddings."""
    sample_id: int
    caption: object
    spectrogram: np.ndarray
    text_seq: np.ndarray       # L_TEXT x D_RETR
    audio_seq: np.ndarray      # L_audio x D_RETR
    score: float


@dataclass
class RetrievalCondition:
    """Concatenated neighbor embeddings, block i = rank-i neighbor."""
    audio: np.ndarray          # (k * L_audio) x D_RETR
    text: np.ndarray           # (k * L_TEXT) x D_RETR
    k: int


class Index:
    """Immutable exact-search index over (sample_id, caption embedding)."""

    def __init__(self, sample_ids: np.ndarray, embeddings: np.ndarray):
        self.sample_ids = np.ascontiguousarray(sample_ids, dtype=np.int64)
        self.embeddings = np.ascontiguousarray(embeddings, dtype=np.float64)
        if self.embeddings.shape[0] != self.sample_ids.shape[0]:
            raise DimensionError("id/embedding count mismatch")
        self.query_count = 0

    def __len__(self):
        return self.sample_ids.shape[0]

    @property
    def dim(self):
        return self.embeddings.shape[1]


def build_index(train: Dataset, encoders: FrozenEncoders) -> Index:
    """Embed every training caption once; single pass, contiguous storage."""
    if not train.samples:
        raise ConfigError("cannot build an index over an empty dataset")
    ids = np.array([sid for sid, _, _ in train.samples], dtype=np.int64)
    embs = np.stack([encoders.encode_text_global(cap)
                     for _, cap, _ in train.samples])
    return Index(ids, embs)


def query_topk(index: Index, query: np.ndarray, k: int,
               exclude_id: int | None = None):
    """Exact cosine top-k, excluded id removed, ties broken by smaller id.

    Returns (sample_ids, scores) sorted by descending (score, -sample_id).
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    n_avail = len(index) - (1 if exclude_id in index.sample_ids else 0)
    if k > n_avail:
        raise ContractError(f"k={k} exceeds available entries {n_avail}")
    index.query_count += 1
    q = np.asarray(query, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq > 0:
        q = q / nq
    norms = np.linalg.norm(index.embeddings, axis=1)
    norms[norms == 0] = 1.0
    scores = (index.embeddings @ q) / norms
    mask = np.ones(len(index), dtype=bool)
    if exclude_id is not None:
        mask &= index.sample_ids != exclude_id
    cand = np.nonzero(mask)[0]
    # sort key: descending score, then ascending sample_id
    order = np.lexsort((index.sample_ids[cand], -scores[cand]))
    top = cand[order[:k]]
    return index.sample_ids[top].copy(), scores[top].copy()


class PairStore:
    """Cached per-sample embeddings for assembling retrieval conditions."""

    def __init__(self, train: Dataset, encoders: FrozenEncoders):
        self.by_id = {}
        for sid, cap, grid in train.samples:
            self.by_id[sid] = (cap, grid,
                               encoders.encode_text_sequence(cap),
                               encoders.encode_audio(grid))

    def pairs(self, sample_ids, scores):
        out = []
        for sid, sc in zip(sample_ids, scores):
            cap, grid, tseq, aseq = self.by_id[int(sid)]
            out.append(RetrievalPair(int(sid), cap, grid, tseq, aseq,
                                     float(sc)))
        return out


def assemble_conditions(pairs) -> RetrievalCondition:
    """Stack neighbor blocks in rank order: audio blocks then text blocks."""
    if not pairs:
        return RetrievalCondition(audio=np.zeros((0, 0)),
                                  text=np.zeros((0, 0)), k=0)
    a_shape = pairs[0].audio_seq.shape
    t_shape = pairs[0].text_seq.shape
    for p in pairs:
        if p.audio_seq.shape != a_shape or p.text_seq.shape != t_shape:
            raise ContractError("inconsistent embedding dims across pairs")
    return RetrievalCondition(
        audio=np.concatenate([p.audio_seq for p in pairs], axis=0),
        text=np.concatenate([p.text_seq for p in pairs], axis=0),
        k=len(pairs))


# -- persistence ------------------------------------------------------------

def save_index(path: str, index: Index):
    """Header (count, dim as u32) then per entry u64 id + f32 vector."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", len(index), index.dim))
        for sid, emb in zip(index.sample_ids, index.embeddings):
            fh.write(struct.pack("<Q", int(sid)))
            fh.write(emb.astype("<f4").tobytes())


def load_index(path: str) -> Index:
    with open(path, "rb") as fh:
        count, dim = struct.unpack("<II", fh.read(8))
        ids = np.empty(count, dtype=np.int64)
        embs = np.empty((count, dim))
        for i in range(count):
            (ids[i],) = struct.unpack("<Q", fh.read(8))
            embs[i] = np.frombuffer(fh.read(dim * 4), dtype="<f4")
    return Index(ids, embs)
