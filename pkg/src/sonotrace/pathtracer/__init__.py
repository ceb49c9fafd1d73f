"""Monte Carlo acoustic path tracing."""

from .intensity import Boundary, IntensityMap, deposit, scatter_event
from .params import RayState, RngStream, SimParams, load_sim_params
from .physics import (Interface, attenuate, boundary_echo, reflection_transmission,
                      sample_cone_direction, sample_cone_directions)
from .tracer import trace_frame

__all__ = [
    "Boundary", "IntensityMap", "Interface", "RayState", "RngStream", "SimParams",
    "attenuate", "boundary_echo", "deposit", "load_sim_params", "reflection_transmission",
    "sample_cone_direction", "sample_cone_directions", "scatter_event", "trace_frame",
]
