//! Heatmap decoding, joint-error metrics, pinhole projection and two-view
//! triangulation.

mod camera;
mod pose;
mod posefile;

pub use camera::{jacobi_svd, project, triangulate, CameraModel};
pub use pose::{decode_heatmaps, joint_distance, mpjpe, Pose, Pose2D, Pose3D};
pub(crate) use posefile::opt_f64;
pub use posefile::{parse_pose_csv, write_pose_csv, TimedPose};
