"""Learning-speed aware sampling for self-supervised contrastive pretraining."""

__version__ = "0.1.0"
