"""Sequential recommendation with graph-contrastive item embeddings, GAN
sequence augmentation, and multi-interest capsule scoring."""

__version__ = "0.1.0"
