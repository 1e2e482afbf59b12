"""Generation quality metrics.

Four metrics mirror the usual generative-audio evaluation battery at desk
scale: a Frechet distance over frozen audio features, a KL divergence and
an inception score over matched-filter class posteriors, and a
text-audio alignment cosine. The matched-filter classifier is closed
form: every event class has a known noiseless template, so no pretrained
network is needed anywhere in the metric path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import (BIN_LABELS, Caption, EventClass, frequency_bin,
                      render_event)
from .encoders import FrozenEncoders
from .tensor import ContractError, DimensionError

KL_TEMPERATURE = 0.1


@dataclass
class FeatureStats:
    """Gaussian fit of a feature set: mean, covariance, sample count."""
    mean: np.ndarray
    cov: np.ndarray
    count: int


def feature_stats(features: np.ndarray) -> FeatureStats:
    f = np.asarray(features, dtype=np.float64)
    n, d = f.shape
    if n < d + 1:
        warnings.warn(f"only {n} samples for {d}-dim covariance; "
                      "estimate is rank-deficient", stacklevel=2)
    mu = f.mean(axis=0)
    cov = np.cov(f, rowvar=False, ddof=1) if n > 1 else np.zeros((d, d))
    return FeatureStats(mu, cov, n)


# -- matched-filter classifier ---------------------------------------------

class MatchedFilterBank:
    """Per-class noiseless templates; score = max-over-onset normalized
    cross-correlation."""

    def __init__(self, vocabulary: list, T: int = 64, F: int = 64):
        self.T = T
        self.F = F
        self.templates = []
        for cls in sorted(vocabulary, key=lambda c: c.id):
            dur = max(int(round(cls.duration_frac * T)), 4)
            tmpl = render_event(cls, 0.0, T, F)[:dur]
            self.templates.append((dur, tmpl,
                                   float(np.linalg.norm(tmpl))))

    def scores(self, spectrogram: np.ndarray) -> np.ndarray:
        x = np.asarray(spectrogram, dtype=np.float64)
        if x.shape != (self.T, self.F):
            raise DimensionError(
                f"expected {(self.T, self.F)}, got {x.shape}")
        out = np.empty(len(self.templates))
        for v, (dur, tmpl, tnorm) in enumerate(self.templates):
            wins = sliding_window_view(x, dur, axis=0)   # (n, F, dur)
            num = np.einsum("tfd,df->t", wins, tmpl)
            wnorm = np.sqrt(np.einsum("tfd,tfd->t", wins, wins))
            denom = wnorm * tnorm
            with np.errstate(invalid="ignore", divide="ignore"):
                ncc = np.where(denom > 0, num / denom, 0.0)
            out[v] = ncc.max()
        return out

    def posterior(self, spectrogram: np.ndarray,
                  tau: float = KL_TEMPERATURE) -> np.ndarray:
        s = self.scores(spectrogram) / tau
        s -= s.max()
        e = np.exp(s)
        return e / e.sum()


# -- distribution metrics ---------------------------------------------------

def _sym_sqrt(m: np.ndarray, clamp: float = 1e-8) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    if w.min() < -clamp:
        raise ContractError(
            f"matrix has significantly negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T

def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The cross square root is taken as eig of Sa^(1/2) Sb Sa^(1/2), which
    is symmetric PSD whenever the inputs are, so no complex arithmetic.
    """
    if a.mean.shape != b.mean.shape:
        raise DimensionError("feature dims differ")
    for s in (a.cov, b.cov):
        if not np.allclose(s, s.T, atol=1e-9):
            raise ContractError("covariance not symmetric")
    sa_half = _sym_sqrt(a.cov)
    inner = sa_half @ b.cov @ sa_half
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    if w.min() < -1e-8:
        raise ContractError(
            f"cross term has negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov)
                 - 2.0 * np.sqrt(w).sum())


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with hard zero handling via a tiny floor."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    eps = 1e-12
    return float(np.sum(p * (np.log(p + eps) - np.log(q + eps))))


def kl_metric(generated: np.ndarray, reference: np.ndarray,
              bank: MatchedFilterBank, tau: float = KL_TEMPERATURE) -> float:
    """KL(posterior(reference) || posterior(generated))."""
    if np.asarray(generated).shape != np.asarray(reference).shape:
        raise DimensionError("generated/reference dims differ")
    return kl_divergence(bank.posterior(reference, tau),
                         bank.posterior(generated, tau))


def inception_score(posteriors) -> float:
    """exp(mean KL(p(y|x) || marginal)); in [1, V]."""
    ps = np.asarray(list(posteriors), dtype=np.float64)
    if ps.size == 0:
        raise ContractError("inception_score needs at least one posterior")
    marginal = ps.mean(axis=0)
    kls = [kl_divergence(p, marginal) for p in ps]
    return float(np.exp(np.mean(kls)))


# -- alignment --------------------------------------------------------------

class AlignmentScorer:
    """Cosine between a sample's pooled audio embedding and its prompt's
    text embedding mapped into audio-feature space.

    The text-to-audio map is frozen and fit-free, built in closed form
    from the encoders alone: the caption embedding is decoded back to
    per-class weights by least squares against the frozen class text
    directions, then re-expanded over each class's canonical audio
    direction (pooled embedding of its noiseless template, centered
    against the across-class mean so the shared energy component drops
    out). No data is fitted anywhere.
    """

    ONSET_PROBES = (0.0, 0.25, 0.5)

    def __init__(self, encoders: FrozenEncoders, vocabulary: list):
        self.encoders = encoders
        pos_mean = encoders.pos_audio.mean(axis=0)
        dirs = []
        for cls in sorted(vocabulary, key=lambda c: c.id):
            acc = np.zeros(encoders.pos_audio.shape[1])
            for onset in self.ONSET_PROBES:
                grid = render_event(cls, onset, encoders.T, encoders.F)
                acc += encoders.encode_audio(grid).mean(axis=0) - pos_mean
            acc /= len(self.ONSET_PROBES)
            dirs.append(acc / np.linalg.norm(acc))
        dirs = np.array(dirs)
        dirs -= dirs.mean(axis=0)
        self.audio_dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        text_dirs = encoders.R_text / np.linalg.norm(
            encoders.R_text, axis=1, keepdims=True)
        gram_inv = np.linalg.inv(
            text_dirs.T @ text_dirs + 1e-6 * np.eye(text_dirs.shape[1]))
        # caption embedding -> class weights -> audio-space target
        self.text_to_audio = self.audio_dirs.T @ text_dirs @ gram_inv

    def score(self, generated: np.ndarray, prompt: Caption) -> float:
        a = self.encoders.pooled_audio(generated)
        t = self.text_to_audio @ self.encoders.encode_text_global(prompt)
        tn = np.linalg.norm(t)
        if tn == 0:
            return 0.0
        return float(np.dot(a, t / tn))


# -- reporting --------------------------------------------------------------

def per_bin_report(scores, class_frequency):
    """Group (class_id, score) pairs by frequency bin.

    Returns an ordered list of (bin_label, mean_score, count) for the
    populated bins, in BIN_LABELS order.
    """
    if not scores:
        raise ContractError("per_bin_report needs at least one score")
    grouped = {}
    for cid, sc in scores:
        grouped.setdefault(frequency_bin(class_frequency, cid),
                           []).append(sc)
    return [(label, float(np.mean(grouped[label])), len(grouped[label]))
            for label in BIN_LABELS if label in grouped]
