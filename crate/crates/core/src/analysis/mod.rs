//! Ranking and flatness studies, and loss-landscape export.

mod kendall;
mod landscape;
mod studies;

pub use kendall::kendall_tau;
pub use landscape::{
    grid_axis, hessian_fd, jacobi_eigen, landscape_grid, landscape_grid_along, perturb, surrogate_hessian,
    top2_eigvecs, LandscapeGrid, LandscapeParams, Matrix, TopEigen,
};
pub use studies::{
    criterion_scores, criterion_top_k, criterion_value, flat_sharp_study, ranking_study, Criterion,
    FlatSharpConfig, FlatSharpReport, GroupSummary, RankingStudyConfig, RankingStudyReport, TauSummary,
    TopKConfig, TopKReport, EXHAUSTIVE_LIMIT,
};
