"""Synthetic-to-real domain adaptation for semantic segmentation.

Per-class pixel-wise domain discriminators drive adversarial feature
alignment on top of a dense/dilated segmentation network; supporting
pieces cover RGB-D ingestion, noise augmentation, depth inpainting,
metrics, a procedural two-domain toy benchmark, and a voxel-voting
3D label-fusion back-end.
"""

__version__ = "0.1.0"
