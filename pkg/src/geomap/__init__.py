"""Quasi-conformal and density-equalizing maps: field synthesis, a
resolution-free neural surrogate, classical oracle solvers, and evaluation."""

__version__ = "0.1.0"

from .fields import (
    ParamField,
    SynthSpec,
    default_spec,
    encode_input,
    sobol_jitter,
    synth_beltrami_2d,
    synth_density,
    test_density,
    test_map,
)
from .geometry import (
    BeltramiField,
    MapField,
    SimplicialGrid,
    beltrami_energy,
    beltrami_per_element,
    build_grid,
    compose_beltrami,
    element_density,
    element_population,
    identity_map,
    jacobian_det,
    maximal_dilatation,
    metric_tensor,
)

__all__ = [
    "__version__",
    "ParamField",
    "SynthSpec",
    "default_spec",
    "encode_input",
    "sobol_jitter",
    "synth_beltrami_2d",
    "synth_density",
    "test_density",
    "test_map",
    "BeltramiField",
    "MapField",
    "SimplicialGrid",
    "beltrami_energy",
    "beltrami_per_element",
    "build_grid",
    "compose_beltrami",
    "element_density",
    "element_population",
    "identity_map",
    "jacobian_det",
    "maximal_dilatation",
    "metric_tensor",
]
