//! Seeded stand-in for captured CSI data.
//!
//! Each subject is a point in a small latent trait space. The trait vector
//! sets a static per-cell CSI offset and perturbs a shared pose-to-CSI mixing
//! matrix, so subject identity is recoverable from raw CSI while a single
//! mapping still decodes pose for every subject. Pose enters through a random
//! Fourier lift of the joint coordinates that all subjects share.

mod csi;
mod dataset;
pub mod io;
mod pose;
mod render;
mod subjects;

pub use csi::{synth_csi, CHANNELS, CSI_LEN, SUBCARRIERS};
pub use dataset::{build_dataset, one_hot, Dataset, DatasetSplit, Sample, TRAIN_FRACTION};
pub use pose::{bones, gen_pose_sequence, Joints, PoseSequence, JOINTS, JOINT_NAMES, MAX_STEP};
pub use render::{draw_line, render_skeleton};
pub use subjects::{make_subjects, FourierLift, SubjectProfile, CELLS, FOURIER_FEATURES, TRAITS};

pub const CANVAS_H: usize = 120;
pub const CANVAS_W: usize = 160;
/// CSI frames combined into one image.
pub const WINDOW: usize = 20;
/// Default frames generated per subject.
pub const DEFAULT_FRAMES: usize = 600;
/// Default subject count: four sources plus one target.
pub const DEFAULT_SUBJECTS: usize = 5;
