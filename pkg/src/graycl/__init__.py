"""Self-supervised contrastive learning pipeline for grayscale images.

From-scratch numeric stack (tensor autodiff, residual encoder, NT-Xent
loss, LARS), linear-probe fine-tuning, classification metrics, and
Grad-CAM explanations, exposed as a library and a batch CLI.
"""

__version__ = "0.1.0"
