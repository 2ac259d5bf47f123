"""Gauss-Markov random field priors: meshes, SPDE/RW1 precisions, sampling."""
from .factor import SparseCholesky
from .mesh import Mesh2D, build_mesh_2d, grid_mesh
from .precision import (MaternHyper, SparsePrecision, fem_matrices_1d, fem_matrices_2d,
                        iid_precision, kriging_correction, matern_correlation, projector,
                        projector_1d, projector_2d, rw1_precision, sample_gmrf,
                        spde_precision_1d, spde_precision_2d)

__all__ = [
    "Mesh2D", "MaternHyper", "SparseCholesky", "SparsePrecision", "build_mesh_2d",
    "fem_matrices_1d", "fem_matrices_2d", "grid_mesh", "iid_precision", "kriging_correction",
    "matern_correlation", "projector", "projector_1d", "projector_2d", "rw1_precision",
    "sample_gmrf", "spde_precision_1d", "spde_precision_2d",
]
