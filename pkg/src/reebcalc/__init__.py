"""Computational exterior calculus transversal to Reeb flows.

The package provides, over explicit contact fixtures:

* an exact symbolic expression core with batched (numba or numpy)
  evaluation of compiled expression tapes,
* exterior algebra and calculus of expression-backed differential forms,
* contact verification, Reeb field extraction and basicness verdicts,
* the compatible transversal (metric, complex structure) pair with stars,
  co-derivatives, Laplacians and Lefschetz operators,
* Reeb flow integration with frame transport and growth-law checks,
* quadrature of forms over parametrized chains, Stokes and Legendrian
  machinery,
* Galerkin computation of basic harmonic dimensions on closed fixtures,
* a fixture catalog and a deterministic batch CLI (``reebcalc``).
"""

__version__ = "0.1.0"

from . import expr
from .engine import Tape, compile_tape, resolve_backend
from .manifold import ChartBox, CoordSpec, LevelSet, ManifoldRep, Point, box
from .forms import (FormField, FrameK, SmoothMap, VectorField,
                    exterior_derivative, interior_product, lie_derivative,
                    pullback, wedge, wedge_power)
from .contact import (BasicVerdict, ContactData, check_contact, is_basic,
                      reeb_field, symplectic_frame, immersion_naturality)
from .hodge import TransversalHodge
from .flow import (FlowSegment, check_linear_growth, detect_trapped,
                   integrate_flow, transport_frame, verify_antiderivative_chain,
                   verify_lyapunov)
from .chains import (Chain, ParamPatch, asymptotic_cycle_pairing, check_stokes,
                     integrate_form, is_legendrian,
                     legendrian_boundary_identity, theta_functional)
from .catalog import Fixture, load_fixture, perturb_fixture
from .spectral import (GalerkinSpace, SpectralSuite, build_galerkin_space,
                       harmonic_dimension, hodge_decompose,
                       hard_lefschetz_check, star_duality_check)
