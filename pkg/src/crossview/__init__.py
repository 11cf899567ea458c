"""Training-free street-to-satellite retrieval toolkit.

Core pieces: embedding collection IO (EMB1/CSV), PCA-whitening feature
refinement, exhaustive cosine top-k search, Recall@k and Haversine
localization metrics, mockable geo-service clients, and the satellite
query generation pipeline tying them together.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
