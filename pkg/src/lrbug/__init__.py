"""Low-rank GMRES with BUG, exponential-sum and hybrid preconditioners."""
from .lowrank import FactoredMatrix, inner, norm, round_sum, to_dense, truncated_svd
from .matequation import MultitermOperator, apply_dense, apply_lowrank, estimate_norm
from .gmres import (GmresConfig, SolveReport, dense_gmres, hybrid_rplr_gmres, lr_gmres, plr_gmres,
                    restarted_lr_gmres, rplr_gmres)
from .precond import BugPreconditioner, EsPreconditioner, bug_apply, es_apply, es_build

__version__ = "0.1.0"
