"""Frozen deterministic encoders and the invertible latent compressor.

Three frozen random-projection encoders stand in for large pretrained
models: a global caption embedding (retrieval key + generator condition),
a per-token caption sequence embedding, and a patch-wise spectrogram
embedding. Projections are seeded and never trained, so every similarity
structure they induce is reproducible. The latent "compressor" is an
exact space-to-depth rearrangement: round-trips are bit-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .dataset import Caption
from .tensor import ContractError, DimensionError

D_TEXT = 32          # global text embedding dim
D_RETR = 32          # retrieval feature dim (text rows and audio rows)
L_TEXT = 8           # fixed caption sequence length (pad/truncate)
PATCH = 8            # audio patch edge
COMPRESS = 4         # space-to-depth block edge
ONSET_DECAY = 0.9    # per-position weight on caption tokens

EMB_KIND_TEXT_SEQ = 1
EMB_KIND_AUDIO_SEQ = 2
EMB_KIND_TEXT_GLOBAL = 3


class FrozenEncoders:
    """All projection matrices, fixed by (encoder_seed, V, grid dims)."""

    def __init__(self, V: int, T: int = 64, F: int = 64, seed: int = 7):
        if T % PATCH or F % PATCH:
            raise ContractError("grid dims must be divisible by patch size")
        self.V = V
        self.T = T
        self.F = F
        self.seed = seed
        self.L_audio = (T // PATCH) * (F // PATCH)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE0C]))
        # text side
        self.R_text = rng.normal(0, 1, size=(V, D_TEXT)) / np.sqrt(D_TEXT)
        self.class_seq = rng.normal(0, 1, size=(V, D_RETR)) / np.sqrt(D_RETR)
        self.pos_seq = rng.normal(0, 0.3, size=(L_TEXT, D_RETR))
        # audio side; positional scale kept small so patch content is not
        # swamped in pooled features
        self.R_audio = rng.normal(
            0, 1, size=(PATCH * PATCH, D_RETR)) / np.sqrt(D_RETR)
        self.pos_audio = rng.normal(0, 0.15, size=(self.L_audio, D_RETR))

    # -- text -------------------------------------------------------------

    def _multi_hot(self, caption: Caption) -> np.ndarray:
        v = np.zeros(self.V)
        for pos, tok in enumerate(caption.tokens):
            v[tok] += ONSET_DECAY ** pos
        return v

    def encode_text_global(self, caption: Caption) -> np.ndarray:
        """Unit-norm caption embedding: onset-order-weighted multi-hot
        through the frozen projection."""
        e = self._multi_hot(caption) @ self.R_text
        return e / np.linalg.norm(e)

    def encode_text_sequence(self, caption: Caption) -> np.ndarray:
        """L_TEXT x D_RETR matrix: per-class row + positional row,
        zero-padded past the caption length."""
        out = np.zeros((L_TEXT, D_RETR))
        for pos, tok in enumerate(caption.tokens[:L_TEXT]):
            out[pos] = self.class_seq[tok] + self.pos_seq[pos]
        return out

    # -- audio ------------------------------------------------------------

    def _patches(self, spectrogram: np.ndarray) -> np.ndarray:
        if spectrogram.shape != (self.T, self.F):
            raise DimensionError(
                f"expected {(self.T, self.F)} grid, got {spectrogram.shape}")
        tp, fp = self.T // PATCH, self.F // PATCH
        p = spectrogram.reshape(tp, PATCH, fp, PATCH)
        return p.transpose(0, 2, 1, 3).reshape(tp * fp, PATCH * PATCH)

    def encode_audio(self, spectrogram: np.ndarray) -> np.ndarray:
        """L_audio x D_RETR: each 8x8 patch projected, plus a frozen 2-D
        positional embedding per patch."""
        return self._patches(np.asarray(spectrogram, dtype=np.float64)) \
            @ self.R_audio + self.pos_audio

    def pooled_audio(self, spectrogram: np.ndarray) -> np.ndarray:
        """Mean over patch rows, L2-normalized; the 'audio embedding' used
        by the alignment metric."""
        m = self.encode_audio(spectrogram).mean(axis=0)
        n = np.linalg.norm(m)
        return m / n if n > 0 else m


# -- latent compressor -----------------------------------------------------

def compress(spectrogram: np.ndarray) -> np.ndarray:
    """Space-to-depth with 4x4 blocks: (T, F) -> (T/4, F/4, 16).

    A pure permutation of entries, so decompress is an exact inverse and
    energy is preserved.
    """
    x = np.asarray(spectrogram)
    T, F = x.shape
    if T % COMPRESS or F % COMPRESS:
        raise ContractError("grid dims must be divisible by 4")
    t, f = T // COMPRESS, F // COMPRESS
    return (x.reshape(t, COMPRESS, f, COMPRESS)
             .transpose(0, 2, 1, 3)
             .reshape(t, f, COMPRESS * COMPRESS))


def decompress(latent: np.ndarray) -> np.ndarray:
    """Exact inverse of compress."""
    z = np.asarray(latent)
    t, f, c = z.shape
    if c != COMPRESS * COMPRESS:
        raise ContractError("latent channel count must be 16")
    return (z.reshape(t, f, COMPRESS, COMPRESS)
             .transpose(0, 2, 1, 3)
             .reshape(t * COMPRESS, f * COMPRESS))


# -- embedding cache file ---------------------------------------------------

def save_embedding(path: str, kind: int, emb: np.ndarray):
    """Write `<sample_id>.emb`: three u32 (kind, rows, cols) + f32 data."""
    emb = np.atleast_2d(np.asarray(emb))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", kind, emb.shape[0], emb.shape[1]))
        fh.write(emb.astype("<f4").tobytes())


def load_embedding(path: str):
    """Read back (kind, matrix)."""
    with open(path, "rb") as fh:
        kind, rows, cols = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    if data.size != rows * cols:
        raise ContractError(f"truncated embedding file {path}")
    return kind, data.reshape(rows, cols).astype(np.float64)
