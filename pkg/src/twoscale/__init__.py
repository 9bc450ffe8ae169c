"""Two time-scale analysis of clustered consensus networks.

Typical use::

    from twoscale import paper_example, check_assumptions, run_study

    spec = paper_example()
    print(check_assumptions(spec).to_text())
    report = run_study(spec, [1.0, 0.2, 0.04])
"""

from .assumptions import AssumptionReport, check_assumptions
from .decomposition import (BlockSystem, Decomposer, TimeRescaling, VariableSplit,
                            block_matrices, build_split, fast_time_map, reconstruct,
                            rescaled_matrices, split_state)
from .expr import ExprError, WeightExpr, evaluate, parse
from .integrate import (AggregationPath, SolverError, SolverOptions, Trajectory,
                        aggregation_weights, compute_q, fundamental_matrix, integrate)
from .network import NetworkSpec, SpecError, build_spec, load_spec, paper_example, snapshot
from .reduced import AveragedModel, average_A11, simulate_boundary_layer, simulate_slow, slow_weights
from .study import ApproximationReport, AssumptionFailure, reproduce_paper, run_study

__all__ = [name for name in dir() if not name.startswith("_")]
