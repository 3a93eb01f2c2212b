use super::csi::synth_csi;
use super::pose::gen_pose_sequence;
use super::render::render_skeleton;
use super::subjects::SubjectProfile;
use super::WINDOW;
use crate::error::{Error, Result};

/// Fraction of each subject's samples (a leading time block) used for
/// training.
pub const TRAIN_FRACTION: f64 = 0.75;

/// One CSI image with its skeleton annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject: u32,
    /// Index of the hot entry for source subjects; `None` for the target.
    pub label: Option<usize>,
    /// `30×20×4` row-major.
    pub csi: Vec<f32>,
    /// `120×160` row-major, values in {0, 1}.
    pub skeleton: Vec<u8>,
}

/// Samples ordered by subject id then frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Subjects including the target.
    pub subjects: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Width of the one-hot domain labels (number of source subjects).
    pub fn domains(&self) -> usize {
        self.subjects - 1
    }

    pub fn target_subject(&self) -> u32 {
        (self.subjects - 1) as u32
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

/// Sample indices for training and both test sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test_source: Vec<usize>,
    pub test_target: Vec<usize>,
}

pub fn one_hot(index: usize, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[index] = 1.0;
    v
}

/// Per-frame noise seed, distinct for every frame of a run.
fn frame_seed(global_seed: u64, frame: usize) -> u64 {
    global_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(frame as u64)
}

/// Generates every subject's sequence, windows it (frame `f` uses frames
/// `f-19..=f`, so the first 19 frames produce no sample) and splits it.
///
/// Source subjects train on their first 75% (by time) and test on the rest;
/// the last 25% of the target subject forms the target test set.
pub fn build_dataset(
    profiles: &[SubjectProfile],
    frames_per_subject: usize,
    global_seed: u64,
) -> Result<(Dataset, DatasetSplit)> {
    if frames_per_subject < 2 * WINDOW {
        return Err(Error::InvalidArgument(format!(
            "frames_per_subject must be at least {}, got {frames_per_subject}",
            2 * WINDOW
        )));
    }
    if profiles.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 subjects".into()));
    }
    let total = profiles.len();
    let mut samples = Vec::new();
    let mut split = DatasetSplit::default();
    for profile in profiles {
        let poses = gen_pose_sequence(profile, frames_per_subject, global_seed)?;
        let first = samples.len();
        for f in WINDOW - 1..frames_per_subject {
            let window = &poses.frames[f + 1 - WINDOW..=f];
            let target = profile.is_target(total);
            samples.push(Sample {
                subject: profile.id,
                label: (!target).then_some(profile.id as usize),
                csi: synth_csi(profile, window, frame_seed(global_seed, f))?,
                skeleton: render_skeleton(&poses.frames[f]),
            });
        }
        let count = samples.len() - first;
        let cut = (TRAIN_FRACTION * count as f64).floor() as usize;
        if profile.is_target(total) {
            split.test_target.extend(first + cut..first + count);
        } else {
            split.train.extend(first..first + cut);
            split.test_source.extend(first + cut..first + count);
        }
    }
    Ok((
        Dataset {
            subjects: total,
            samples,
        },
        split,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_subjects;
    use std::collections::HashSet;

    #[test]
    fn one_hot_places_the_index() {
        assert_eq!(one_hot(2, 4), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn windowing_and_split_arithmetic() {
        let subjects = make_subjects(0, 3).unwrap();
        let (data, split) = build_dataset(&subjects, 60, 0).unwrap();
        let per_subject = 60 - 19;
        assert_eq!(data.len(), 3 * per_subject);
        let cut = (0.75 * per_subject as f64).floor() as usize;
        assert_eq!(split.train.len(), 2 * cut);
        assert_eq!(split.test_source.len(), 2 * (per_subject - cut));
        assert_eq!(split.test_target.len(), per_subject - cut);

        let train: HashSet<_> = split.train.iter().collect();
        assert!(split.test_source.iter().all(|i| !train.contains(i)));
        assert!(split.test_target.iter().all(|i| !train.contains(i)));
        assert!(split.train.iter().all(|&i| data.samples[i].label.is_some()));
        assert!(split.test_target.iter().all(|&i| data.samples[i].label.is_none()));
        assert!(build_dataset(&subjects, 39, 0).is_err());
    }

    #[test]
    fn skeletons_are_sparse_and_binary() {
        let subjects = make_subjects(1, 2).unwrap();
        let (data, _) = build_dataset(&subjects, 40, 1).unwrap();
        for s in &data.samples {
            let on = s.skeleton.iter().filter(|&&v| v == 1).count();
            assert!(s.skeleton.iter().all(|&v| v <= 1));
            assert!((1..=5760).contains(&on), "{on}");
        }
    }
}
