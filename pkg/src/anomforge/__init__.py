"""anomforge: synthetic context-dependent anomaly datasets end to end.

Generates anomalous indoor-scene images by inpainting out-of-place objects
into masked regions of base photos, filters the generations with joint
visual-language embeddings, and evaluates both a similarity-based detector
and arbitrary VQA backends on the result.
"""

__version__ = "0.1.0"

from anomforge.errors import AnomforgeError, ProviderError, StorageError, ValidationError

__all__ = [
    "AnomforgeError",
    "ValidationError",
    "ProviderError",
    "StorageError",
    "__version__",
]
