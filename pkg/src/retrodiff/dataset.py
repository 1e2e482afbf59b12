"""Deterministic long-tailed caption/spectrogram dataset.

Event classes are parametric band-limited chirp patches painted onto a
T x F grid. Class sampling weights follow a Zipf law so a handful of head
classes dominate and most classes are rare, which is what the long-tail
experiments need. Everything is a pure function of (seed, config).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from itertools import combinations

import numpy as np


class ConfigError(ValueError):
    """Invalid dataset configuration."""


T_DEFAULT = 64
F_DEFAULT = 64
NOISE_SIGMA = 0.02
MIN_ONSET_GAP = 4
MAX_TOKENS = 4
MAX_DURATION = 21   # longest event patch, time steps; onsets keep events in-grid


@dataclass(frozen=True)
class EventClass:
    """One sound-event class and its render parameters.

    Each class renders as a chord of narrow frequency bands. The bands'
    positions modulo 8 form a distinct residue subset per class, so class
    identity survives 8x8 patch pooling regardless of onset; durations
    are multiples of 8 time steps for the same reason.
    """
    id: int
    band_centers: tuple     # band centers, in frequency bins
    bandwidth: float        # gaussian band half-width, bins
    chirp_slope: float      # bins drifted per time step
    duration_frac: float    # patch length as a fraction of T
    weight: float = 0.0     # target sampling probability

    @property
    def freq_center(self) -> float:
        return self.band_centers[0]


@dataclass(frozen=True)
class Caption:
    """Ordered event tokens with one onset per token (fractions of T)."""
    tokens: tuple
    onsets: tuple

    def __post_init__(self):
        if not 1 <= len(self.tokens) <= MAX_TOKENS:
            raise ConfigError("caption must carry 1..4 tokens")
        if len(self.onsets) != len(self.tokens):
            raise ConfigError("one onset per token required")
        if any(b <= a for a, b in zip(self.onsets, self.onsets[1:])):
            raise ConfigError("onsets must be strictly increasing")


@dataclass
class Dataset:
    samples: list                      # (sample_id, Caption, np.ndarray grid)
    class_frequency: dict              # class id -> train occurrence count
    heldout_classes: set
    vocabulary: list                   # list[EventClass]
    T: int = T_DEFAULT
    F: int = F_DEFAULT


BIN_LABELS = ("zero", "[1,10)", "[10,100)", "[100,1000)", ">=1000")


def frequency_bin(class_frequency: dict, class_id: int) -> str:
    """Bin a class by its train-split occurrence count."""
    if class_id not in class_frequency:
        raise KeyError(f"unknown class id {class_id}")
    n = class_frequency[class_id]
    if n == 0:
        return "zero"
    if n < 10:
        return "[1,10)"
    if n < 100:
        return "[10,100)"
    if n < 1000:
        return "[100,1000)"
    return ">=1000"


def _residue_subsets(n: int):
    """First n of the size-3 then size-4 subsets of the 8 frequency
    residues; distinct subsets overlap in at most 2 (3 across sizes)."""
    subsets = list(combinations(range(8), 3)) + \
        list(combinations(range(8), 4))
    if n > len(subsets):
        raise ConfigError(f"at most {len(subsets)} classes supported")
    return subsets[:n]


def build_vocabulary(seed: int, V: int, zipf_s: float) -> list:
    """Create V event classes with Zipf sampling weights rank^(-zipf_s).

    Render parameters are deterministic in (seed, id): each class gets a
    distinct residue subset for its chord, band octaves strided so the
    unfolded templates spread over the frequency axis, and bandwidth /
    chirp / duration cycling at different periods.
    """
    if V < 8:
        raise ConfigError("need at least 8 classes to form head/tail bins")
    if zipf_s < 0:
        raise ConfigError("zipf_s must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A55]))
    # Shuffle which rank gets which render signature, so frequency bands
    # are not correlated with class frequency.
    perm = rng.permutation(V)
    subsets = _residue_subsets(V)
    ranks = np.arange(1, V + 1, dtype=np.float64)
    weights = ranks ** (-zipf_s)
    weights /= weights.sum()
    classes = []
    for cid in range(V):
        s = int(perm[cid])
        centers = tuple(8 * (1 + (s * 5 + 3 * k) % 6) + r + 0.5
                        for k, r in enumerate(subsets[s]))
        classes.append(EventClass(
            id=cid,
            band_centers=centers,
            bandwidth=0.45 + (s % 3) * 0.1,
            chirp_slope=((s * 11) % 5 - 2) * 0.03,
            duration_frac=(8 if (s * 3) % 2 else 16) / T_DEFAULT,
            weight=float(weights[cid]),
        ))
    return classes


def sample_caption(rng: np.random.Generator, vocabulary: list,
                   heldout: set | None = None) -> Caption:
    """Draw one caption: Zipf-weighted tokens, deduplicated, spaced onsets."""
    heldout = heldout or set()
    pool = [c for c in vocabulary if c.id not in heldout]
    if not pool:
        raise ConfigError("no classes left after heldout removal")
    w = np.array([c.weight for c in pool])
    w /= w.sum()
    n = int(rng.integers(1, MAX_TOKENS + 1))
    ids = [pool[i].id for i in rng.choice(len(pool), size=n, p=w)]
    tokens = tuple(dict.fromkeys(ids))           # dedupe, keep draw order
    onsets = _draw_onsets(rng, len(tokens))
    return Caption(tokens=tokens, onsets=onsets)


def _draw_onsets(rng: np.random.Generator, n: int, T: int = T_DEFAULT):
    """Strictly increasing onsets, >= MIN_ONSET_GAP time steps apart."""
    span = T - (n - 1) * MIN_ONSET_GAP - MAX_DURATION
    raw = np.sort(rng.uniform(0, max(span, 1), size=n))
    steps = raw + np.arange(n) * MIN_ONSET_GAP
    return tuple(float(s) / T for s in steps)


EVENT_AMP = 0.8


def render_event(cls: EventClass, onset_frac: float, T: int = T_DEFAULT,
                 F: int = F_DEFAULT) -> np.ndarray:
    """Noiseless render of a single event onto an empty T x F grid:
    a constant-envelope chord of slowly chirping narrow bands."""
    grid = np.zeros((T, F))
    dur = max(int(round(cls.duration_frac * T)), 4)
    t0 = int(round(onset_frac * T))
    t = np.arange(t0, min(t0 + dur, T))
    if t.size == 0:
        return grid
    rel = (t - t0)[:, None]
    f = np.arange(F)[None, :]
    for c in cls.band_centers:
        center = c + cls.chirp_slope * rel
        grid[t, :] += EVENT_AMP * np.exp(
            -0.5 * ((f - center) / cls.bandwidth) ** 2)
    return np.clip(grid, 0.0, 1.0)


def render_spectrogram(caption: Caption, rng: np.random.Generator,
                       vocabulary: list, T: int = T_DEFAULT,
                       F: int = F_DEFAULT, noise_sigma: float = NOISE_SIGMA
                       ) -> np.ndarray:
    """Paint each token's chirp patch; overlaps add and clip to 1, then
    additive Gaussian observation noise."""
    by_id = {c.id: c for c in vocabulary}
    grid = np.zeros((T, F))
    for tok, onset in zip(caption.tokens, caption.onsets):
        grid += render_event(by_id[tok], onset, T, F)
    grid = np.clip(grid, 0.0, 1.0)
    if noise_sigma > 0:
        grid = grid + rng.normal(0.0, noise_sigma, size=grid.shape)
    return grid


def generate_dataset(seed: int, V: int = 64, zipf_s: float = 1.1,
                     n_train: int = 5000, n_test: int = 500,
                     heldout_fraction: float = 0.1):
    """Build disjoint train/test splits.

    Heldout classes never appear in training captions; the test split ends
    with a zero-shot slice whose captions each contain at least one heldout
    class. class_frequency is computed over the train split only.
    """
    if n_train < 1 or n_test < 1:
        raise ConfigError("need at least one train and one test sample")
    if heldout_fraction >= 0.5:
        raise ConfigError("heldout_fraction must be < 0.5")
    if heldout_fraction < 0:
        raise ConfigError("heldout_fraction must be >= 0")
    vocab = build_vocabulary(seed, V, zipf_s)
    n_held = int(heldout_fraction * V)
    rng_split = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    heldout = set(int(i) for i in
                  rng_split.choice(V, size=n_held, replace=False))

    def make_samples(offset, count, slice_heldout, zero_shot=False):
        out = []
        for i in range(count):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, offset + i]))
            if zero_shot:
                cap = _sample_zero_shot_caption(rng, vocab, heldout)
            else:
                cap = sample_caption(rng, vocab, slice_heldout)
            grid = render_spectrogram(cap, rng, vocab)
            out.append((offset + i, cap, grid.astype(np.float32)))
        return out

    train_samples = make_samples(0, n_train, heldout)
    n_zero = int(round(n_test * 0.2)) if heldout else 0
    test_samples = make_samples(n_train, n_test - n_zero, heldout)
    test_samples += make_samples(n_train + n_test - n_zero, n_zero,
                                 heldout, zero_shot=True)

    freq = {c.id: 0 for c in vocab}
    for _, cap, _ in train_samples:
        for tok in cap.tokens:
            freq[tok] += 1
    train = Dataset(train_samples, freq, heldout, vocab)
    test = Dataset(test_samples, freq, heldout, vocab)
    return train, test


def _sample_zero_shot_caption(rng, vocab, heldout) -> Caption:
    """Caption guaranteed to contain at least one heldout class."""
    held_pool = [c for c in vocab if c.id in heldout]
    forced = held_pool[int(rng.integers(len(held_pool)))]
    base = sample_caption(rng, vocab, heldout)
    tokens = (base.tokens + (forced.id,))[-MAX_TOKENS:]
    tokens = tuple(dict.fromkeys(tokens))
    onsets = _draw_onsets(rng, len(tokens))
    return Caption(tokens=tokens, onsets=onsets)


def zero_shot_ids(dataset: Dataset) -> set:
    """Sample ids in the zero-shot slice (caption touches a heldout class)."""
    return {sid for sid, cap, _ in dataset.samples
            if any(t in dataset.heldout_classes for t in cap.tokens)}


# -- on-disk format --------------------------------------------------------

def save_dataset(path: str, train: Dataset, test: Dataset):
    """Write manifest.tsv, vocab.tsv and one .f32 raw grid per sample."""
    os.makedirs(path, exist_ok=True)
    lines = []
    for split, ds in (("train", train), ("test", test)):
        for sid, cap, grid in ds.samples:
            toks = ",".join(str(t) for t in cap.tokens)
            ons = ",".join(f"{o:.17g}" for o in cap.onsets)
            lines.append(f"{sid}\t{toks}\t{ons}\t{split}")
            grid.astype("<f4").tofile(os.path.join(path, f"{sid}.f32"))
    with open(os.path.join(path, "manifest.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, "vocab.tsv"), "w") as fh:
        for c in train.vocabulary:
            centers = ",".join(f"{b:.4f}" for b in c.band_centers)
            held = int(c.id in train.heldout_classes)
            fh.write(f"{c.id}\t{centers}\t{c.bandwidth:.4f}\t"
                     f"{c.chirp_slope:.4f}\t{c.duration_frac:.4f}\t"
                     f"{c.weight:.8e}\t{train.class_frequency[c.id]}\t"
                     f"{held}\n")


def load_dataset(path: str, T: int = T_DEFAULT, F: int = F_DEFAULT):
    """Inverse of save_dataset."""
    vocab = []
    freq = {}
    heldout = set()
    with open(os.path.join(path, "vocab.tsv")) as fh:
        for line in fh:
            cid, fc, bw, sl, df, w, n, held = line.rstrip("\n").split("\t")
            centers = tuple(float(x) for x in fc.split(","))
            vocab.append(EventClass(int(cid), centers, float(bw),
                                    float(sl), float(df), float(w)))
            freq[int(cid)] = int(n)
            if held == "1":
                heldout.add(int(cid))
    train_samples, test_samples = [], []
    with open(os.path.join(path, "manifest.tsv")) as fh:
        for line in fh:
            sid, toks, ons, split = line.rstrip("\n").split("\t")
            cap = Caption(tuple(int(t) for t in toks.split(",")),
                          tuple(float(o) for o in ons.split(",")))
            grid = np.fromfile(os.path.join(path, f"{sid}.f32"),
                               dtype="<f4").reshape(T, F)
            dest = train_samples if split == "train" else test_samples
            dest.append((int(sid), cap, grid))
    train = Dataset(train_samples, freq, heldout, vocab, T, F)
    test = Dataset(test_samples, freq, heldout, vocab, T, F)
    return train, test
