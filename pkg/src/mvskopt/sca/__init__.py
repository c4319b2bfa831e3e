from .common import (CONVERGED, MAX_ITER, IterationRecord, SolveOptions, SolveReport, StepSchedule,
                     project_onto_feasible, projected_gradient_residual, step_size, stop_check)
from .mvsk import mm_surrogate, solve_mvsk_dc, solve_mvsk_mm, solve_mvsk_q
from .tilting import (TiltingIterate, TiltingSpec, default_tilting, eta_linear, eta_quadratic,
                      solve_tilting_l, solve_tilting_q, tilting_constraints, tilting_kkt_residual,
                      tilting_violation)
