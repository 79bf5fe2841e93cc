//! Dense-matrix and rank-statistics kernels. All arithmetic is `f64` and
//! every function is pure.

mod correlation;
mod kernel;
mod matrix;

pub use correlation::{
    kendall_tau, lower_triangle, pairwise_pearson_distance, pearson, rank_transform, spearman,
    Correlation, RankVector, VARIANCE_EPS,
};
pub use kernel::{double_center, hsic, linear_kernel};
pub use matrix::{argmax, Matrix};
