"""FFT-based elastodynamics with prescribed displacements on embedded point sets."""

from .material import (ALUMINIUM, CATALOGUE, IRON, NICKEL, URANIUM, CubicCrystal, IsotropicMaterial,
                       MaterialError, Microstructure, build_framed, build_layered,
                       build_voronoi_polycrystal, get_material, homogeneous)
from .spectral import ConvergenceError, SpectralOperator, make_frequency_grid, solve_pcg
from .greens import GreensCache, GreensError, GreensMatrix, Manifold, assemble_greens
from .integrate import (CentralDifference, ImplicitNewmark, InstabilityError, NewmarkParams, PulseSpec,
                        WaveState, stable_dt, total_energy)

__version__ = "0.1.0"
