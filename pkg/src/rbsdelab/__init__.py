"""Reflected-BSDE laboratory on finite event trees.

Core layers: ``lattice`` (exact trees and conditional expectations),
``drivers``/``bsde`` (backward solvers and conditional g-expectations),
``barriers`` (irregular barriers and their cadlag approximants),
``rbsde`` (reflected solvers and verification reports), ``stopping``
(the optimal-stopping oracle machinery), ``montecarlo`` (regression
cross-checks), ``scenarios`` (experiment runner), and ``service``/``cli``
(HTTP surface and thin client).
"""

from .barriers import (
    Barrier,
    CadlagBarrier,
    american_put_barrier,
    barrier_from_config,
    barrier_from_csv,
    barrier_to_csv,
    cadlag_approx_sequence,
    constant_barrier,
    embed_in_refined,
    make_barrier,
    random_irregular_barrier,
    spike_barrier,
    sup_distance,
    upper_cadlag_envelope,
)
from .bsde import (
    BsdeSolution,
    StopReward,
    g_expectation,
    g_expectation_sweep,
    path_sum_expectation,
    solve_bsde,
    solve_penalized_bsde,
)
from .drivers import (
    Driver,
    american_discount_driver,
    constant_driver,
    driver_from_config,
    linear_driver,
    lipschitz_probe,
    table_driver,
    zero_driver,
)
from .exceptions import (
    BudgetError,
    ConfigError,
    ConvergenceError,
    LipschitzViolationError,
    ModelError,
    PreconditionError,
    RbsdeLabError,
    StepSizeError,
)
from .lattice import (
    LatticeModel,
    TimeGrid,
    build_lattice,
    cond_exp,
    martingale_coeffs,
    model_to_csv,
    validate_model,
)
from .rbsde import (
    SkorokhodReport,
    SolutionQuadruple,
    check_solution_invariants,
    peng_xu_check,
    quadruple_to_csv,
    right_shift_solution,
    skorokhod_residuals,
    solve_reflected,
    solve_via_monotone_approx,
    solve_via_penalization,
)
from .slots import SlotProcess
from .stopping import (
    StoppingRule,
    ValueFamily,
    bellman_scaling_check,
    brute_force_snell,
    check_supermartingale_family,
    count_stopping_rules,
    enumerate_stopping_rules,
    hitting_rule,
    shift_envelope,
    snell_dp,
)

__version__ = "0.1.0"
