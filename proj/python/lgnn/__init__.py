"""Python surface of the training toolkit; the heavy lifting stays in C++."""

try:
    # installed layout: the extension sits inside the package
    from ._lgnn import (
        closest_square_dims,
        evaluate,
        gaussian_kernel,
        gram_matrix,
        magnitude_stats,
        neighbor_similarity,
        sigma_at_epoch,
        smooth_gradients,
        som_demo,
        synthetic_blobs,
        train,
    )
except ImportError:
    # build-tree layout: the extension is on the path by itself
    from _lgnn import (
        closest_square_dims,
        evaluate,
        gaussian_kernel,
        gram_matrix,
        magnitude_stats,
        neighbor_similarity,
        sigma_at_epoch,
        smooth_gradients,
        som_demo,
        synthetic_blobs,
        train,
    )

__all__ = [
    "closest_square_dims",
    "evaluate",
    "gaussian_kernel",
    "gram_matrix",
    "magnitude_stats",
    "neighbor_similarity",
    "sigma_at_epoch",
    "smooth_gradients",
    "som_demo",
    "synthetic_blobs",
    "train",
]
