"""Differentiable SDF volume rendering on a triplane with positional encoding."""
from .field import AnalyticField, AnalyticSdf, ModelConfig, SdfModel, laplace_density, sdf_to_density
from .fitting import FitConfig, MultiViewDataset, fit_scene, schedule
from .geometry import Camera, Ray, TriangleMesh
from .meshing import extract_mesh, marching_cubes, sample_sdf_grid
from .metrics import evaluate_meshes
from .renderer import SamplerConfig, composite, render_image, render_ray

__version__ = "0.1.0"

__all__ = [
    "AnalyticField", "AnalyticSdf", "Camera", "FitConfig", "ModelConfig", "MultiViewDataset",
    "Ray", "SamplerConfig", "SdfModel", "TriangleMesh", "composite", "evaluate_meshes",
    "extract_mesh", "fit_scene", "laplace_density", "marching_cubes", "render_image",
    "render_ray", "sample_sdf_grid", "schedule", "sdf_to_density",
]
