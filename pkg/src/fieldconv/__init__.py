"""Field convolutions: isometry-commuting convolutions on tangent vector
fields of triangle meshes, with the layers, a small reverse-mode autodiff
engine and task pipelines built on top."""

from .errors import FieldConvError
from .intrinsic import IntrinsicCache, compute_cache, load_cache, save_cache
from .mesh import TriMesh, load_mesh, normalize_unit_area
from .operator import FCFilter, brute_force_convolve, count_parameters, field_convolve

__version__ = "0.1.0"

__all__ = [
    "FCFilter", "FieldConvError", "IntrinsicCache", "TriMesh", "brute_force_convolve", "compute_cache",
    "count_parameters", "field_convolve", "load_cache", "load_mesh", "normalize_unit_area", "save_cache",
]
