//! Point-level and object-level OOD evaluation.

mod dbscan;
mod object;
mod point;

pub use dbscan::dbscan;
pub use object::{
    iou, match_instances, object_eval, object_tally, InstanceSet, ObjectEval, ObjectTally,
    Provenance,
};
pub use point::{auroc, average_precision, fpr_at_tpr, point_eval, pr_curve, PointEval, PrPoint};
