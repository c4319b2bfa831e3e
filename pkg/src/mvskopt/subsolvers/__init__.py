from .constraints import LinearConstraintSystem, PortfolioBlock, lift_l1, simplex_system
from .qp import (
    INFEASIBLE,
    MAX_ITER,
    OPTIMAL,
    UNBOUNDED,
    QpProblem,
    SubsolverResult,
    solve_lp,
    solve_qp,
)
from .qcqp import QcqpProblem, QuadraticConstraint, solve_qcqp
from .kkt import kkt_residual_lp, kkt_residual_qcqp, kkt_residual_qp
