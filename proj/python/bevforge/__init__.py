from ._core import (  # noqa: F401
    BevforgeError,
    bev_cross_entropy,
    bilinear_sample,
    composite_depth,
    generate_mask,
    generate_scene,
    matmul,
    matmul_with_grads,
    miou,
    positional_encoding,
    project,
    unproject,
    __version__,
)
