"""Interest-conditioned multi-modal clustering from precomputed embeddings.

The engine learns one textual proxy per sample as a convex mixture of
candidate-word embeddings, fuses visual and text streams through gated
cross-attention, prunes the candidate pool against the evolving proxy
clusters, and clusters the fused features with deterministic K-means.
"""

__version__ = "0.1.0"
