//! Label merge-and-split for volumetric label maps with many labels.
//!
//! Labels whose pooled training supports are far apart and whose mean
//! volumes are similar are grouped into merged labels by greedy colouring of
//! a constraint graph ([`graph`], [`plan`]). A model then only has to
//! predict merged labels. Original labels are recovered voxel-wise from
//! influence regions derived from the training support ([`split`]).

pub mod digest;
pub mod edt;
pub mod error;
pub mod graph;
pub mod kdtree;
pub mod metrics;
pub mod nifti;
pub mod pairwise;
pub mod phantom;
pub mod plan;
pub mod split;
pub mod support;
pub mod volume;

pub use error::{Error, Result};
pub use graph::{build_graph, greedy_color, smallest_last_order, ConstraintGraph, MergeParams, SmallestLast};
pub use metrics::{dice, relative_volume_error, report, MetricsReport, MetricsRow};
pub use nifti::{load_labels, load_volume, save_labels, save_volume};
pub use pairwise::{inner_boundary, min_distance_matrix, volume_ratio_matrix, DistanceMatrix, RatioMatrix};
pub use plan::{apply_merge, build_merge_plan, plan_from_matrices, sweep, MergePlan, Provenance, SweepRow};
pub use split::{build_influence_map, build_influence_maps, split, InfluenceMap};
pub use support::{build_support_map, FudgedPrior, LabelSupport, SupportMap};
pub use volume::{GridMeta, LabelVolume, ScalarVolume, Volume};
