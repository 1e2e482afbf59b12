"""Retrieval-augmented latent diffusion on a synthetic long-tailed
spectrogram modality: dataset, frozen encoders, exact top-k retrieval,
diffusion generator, metrics, and the experiment CLI."""

__version__ = "0.1.0"
