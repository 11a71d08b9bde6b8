"""Learned, query-conditioned compositions of numerical PDE sub-flows."""
from .errors import *  # noqa: F401,F403
from .fields import Boundary, Field, Grid, dft, gradient, idft, integrate
from .primitives import (Mechanism, PdeParams, PrimitiveSpec, SystemTag, apply_primitive,
                         dictionary, dummy_reaction, primitive_convergence_order,
                         swap_boundary_variant)
from .reference import (reference_solution, solve_coupled_finestep, solve_exact_ad,
                        solve_ks_etdrk4)
from .features import FeatureVector, extract_features, raw_ic_features
from .policy import (DurationMode, PolicyArch, PolicyParams, Program, decode_program,
                     load_checkpoint, save_checkpoint)
from .executor import execute, execute_multi_time, strang_schedule
from .es import EsConfig, rank_shape, train
from .metrics import (NotApplicable, brmse, crmse, error_decomposition, frmse_bands,
                      ks_attractor_metrics, max_err, rel_l2, rmse)
from .datagen import BenchmarkSpec, build_dataset, default_spec, load_dataset, sample_ic

__version__ = "0.1.0"
