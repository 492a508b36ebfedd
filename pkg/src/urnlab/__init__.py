"""Simulation and numerical checks for balanced Polya urns with countably many colors."""

from urnlab.analysis import (
    a_series_closed_form,
    a_series_recursive,
    b_series_closed_form,
    b_series_recursive,
    conditional_covariance_exact,
    conditional_covariance_mc,
    coupling_tv,
    growth_bound_check,
    local_time_variance_check,
    mc_series_estimate,
)
from urnlab.bmc import bmc_exact_law, bmc_run, bmc_sample_colors, bmc_vertex_marginal
from urnlab.kernel import (
    build_generator,
    build_kernel,
    check_doeblin,
    fit_ergodicity_certificate,
    n_step_row,
    read_kernel_file,
    stationary_distribution,
)
from urnlab.measure import SparseMeasure, parse_measure
from urnlab.rrt import ROOT, enumerate_rrt, grow_rrt, grow_rrt_batch, tree_depth, tree_distance, tree_lca
from urnlab.starwalk import star_limits, star_walk_init, star_walk_run, star_walk_step
from urnlab.urn import expected_draw_law, normalized_config, urn_draw, urn_exact_law, urn_init, urn_run, urn_step

__all__ = [
    "ROOT",
    "SparseMeasure",
    "a_series_closed_form",
    "a_series_recursive",
    "b_series_closed_form",
    "b_series_recursive",
    "bmc_exact_law",
    "bmc_run",
    "bmc_sample_colors",
    "bmc_vertex_marginal",
    "build_generator",
    "build_kernel",
    "check_doeblin",
    "conditional_covariance_exact",
    "conditional_covariance_mc",
    "coupling_tv",
    "enumerate_rrt",
    "expected_draw_law",
    "fit_ergodicity_certificate",
    "grow_rrt",
    "grow_rrt_batch",
    "growth_bound_check",
    "local_time_variance_check",
    "mc_series_estimate",
    "n_step_row",
    "normalized_config",
    "parse_measure",
    "read_kernel_file",
    "star_limits",
    "star_walk_init",
    "star_walk_run",
    "star_walk_step",
    "stationary_distribution",
    "tree_depth",
    "tree_distance",
    "tree_lca",
    "urn_draw",
    "urn_exact_law",
    "urn_init",
    "urn_run",
    "urn_step",
]
