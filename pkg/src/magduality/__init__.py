"""Equivalent induction-based and magnetization-based magnetostatic energies on a periodic box."""
from .grid import GridSpec, Region, ScalarField, VectorField
from .materials import material_from_dict

__version__ = "0.1.0"

__all__ = ["GridSpec", "Region", "ScalarField", "VectorField", "material_from_dict"]
