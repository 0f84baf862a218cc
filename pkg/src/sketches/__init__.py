"""Composable l_p sensitivity sketches and the solvers built on them."""

from sketches.dataset import Dataset, union_all
from sketches.sensitivity import leverage_scores, lp_sensitivities, lp_sensitivity, sensitivities_against
from sketches.sketch import (
    SenSample,
    Sketch,
    SketchParams,
    create_sketch,
    merge_sketches,
    solve_embedding,
    union_for_solve,
)
from sketches.solvers import (
    LRAResult,
    RegressionResult,
    embedding_distortion,
    exact_regression,
    regression_cost,
    solve_lra,
    solve_regression,
)

__all__ = [
    'Dataset',
    'union_all',
    'leverage_scores',
    'lp_sensitivities',
    'lp_sensitivity',
    'sensitivities_against',
    'SenSample',
    'Sketch',
    'SketchParams',
    'create_sketch',
    'merge_sketches',
    'solve_embedding',
    'union_for_solve',
    'LRAResult',
    'RegressionResult',
    'embedding_distortion',
    'exact_regression',
    'regression_cost',
    'solve_lra',
    'solve_regression',
]
