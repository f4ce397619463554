"""Weyl-Titchmarsh analysis of linear Hamiltonian nabla systems on Sturmian time scales."""

__version__ = "0.1.0"

from .errors import (BoundaryError, ClassificationInconclusive, CoefficientError, ConfigError,
                     DefinitenessError, EvaluationError, ExprSyntaxError, HamtsError,
                     NotInTimeScale, NumericalError, SturmianViolation, TimeScaleError)
from .timescale import (Grid, TimeScale, arithmetic, build_timescale, geometric, interval,
                        make_grid, nabla_integrate, points)
from .exprfield import (CoefficientField, build_coefficients, eval_expr, from_sturm_liouville,
                        parse_expr, pretty)
from .system import apply_shift, assemble_S, check_definiteness, check_regressivity
from .propagate import (Trajectory, lagrange_residual, liouville_residual, nabla_exponential,
                        propagate_fundamental, symplectic_residual)
from .regular import (BoundaryPair, EigenList, char_det, find_eigenvalues, gram_K,
                      validate_boundary, weighted_inner_product)
from .weyl import (ClassificationReport, LimitReport, WeylBasis, WeylData, WeylDisk, build_Y,
                   classify, count_square_summable, disk_membership, limit_disk, m_function,
                   weyl_disk, weyl_F)
from .config import load_config
