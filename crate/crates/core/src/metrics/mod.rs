//! Pose distances, the nearest-neighbour prior and PCK.

mod distance;
mod knn;
mod pck;

pub use distance::{angular_dist, arc_radius_dist, geodesic_dist, DistanceKind, DistanceWeights};
pub use knn::{knn, prior_distance, prior_weights, weighted_mean_pose, PriorQueryResult};
pub use pck::{joint_wise_pck_curves, mean_pck, pck, reference_distance, PckResult, PCK_THRESHOLDS};
