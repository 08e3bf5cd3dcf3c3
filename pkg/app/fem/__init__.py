from app.fem.mesh import Mesh, build_rect_mesh
from app.fem.refinement import adapt_mesh, common_refinement, finest_common_mesh, refine, uniform_refine
from app.fem.spaces import FeSpace, Field, constant_field, function_space, interpolate, taylor_hood
from app.fem.assembly import Operator, assemble
from app.fem.transfer import (
    connected_components, inner_product, integral, l2_error, l2_project, prolongate, restrict, transfer,
)

__all__ = [
    "Mesh", "build_rect_mesh",
    "adapt_mesh", "common_refinement", "finest_common_mesh", "refine", "uniform_refine",
    "FeSpace", "Field", "constant_field", "function_space", "interpolate", "taylor_hood",
    "Operator", "assemble",
    "connected_components", "inner_product", "integral", "l2_error", "l2_project",
    "prolongate", "restrict", "transfer",
]
