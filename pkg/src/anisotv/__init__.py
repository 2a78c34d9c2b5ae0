"""Anisotropic total variation (ROF) denoising on weighted graphs and grids."""

from anisotv.errors import (
    AnisoTVError,
    AuditFailure,
    ConvergenceError,
    GraphError,
    InfeasibleCertificateError,
    InvariantError,
    MembershipError,
    ParseError,
    RefinementError,
    ShapeError,
    TopologyError,
)
from anisotv.graph import (
    WeightedGraph,
    edge_differences,
    edge_pairing,
    total_variation,
    vertex_pairing,
    weighted_divergence,
    weighted_norm,
)
from anisotv.grid import (
    Grid,
    ParField,
    Partition,
    PcrFunction,
    average,
    build_graph,
    build_partition,
    iota,
    iota_inv,
    kappa,
    kappa_inv,
    par_divergence,
    refine_grid,
    sample_subgradient,
)
from anisotv.conegeom import (
    DivergenceBox,
    VertexPolytope,
    cone_directions,
    phi_min_audit,
    segment_minimizer,
    special_cone_check,
    weighted_projection,
)
from anisotv.minimality import (
    AuditReport,
    convex_catalog,
    lp_norms_report,
    minimality_audit,
    pcr_minimality_audit,
    refinement_study,
)
from anisotv.rof import (
    RofSolution,
    duality_gap,
    solve_chain_exact,
    solve_rof,
    verify_optimality,
)

__version__ = "0.1.0"
