use rand::Rng;
use rand_distr::StandardNormal;

use super::pose::Joints;
use super::subjects::{rng_for, SubjectProfile, CELLS, FOURIER_FEATURES, STREAM_NOISE};
use super::WINDOW;
use crate::error::{Error, Result};

pub const SUBCARRIERS: usize = 30;
pub const CHANNELS: usize = 4;
pub const CSI_LEN: usize = SUBCARRIERS * WINDOW * CHANNELS;

/// One `30×20×4` CSI image (row-major, time on the middle axis) for a window
/// of 20 consecutive poses.
///
/// Column `t` is `mixing · lift(window[t]) + offset + noise`, where cell
/// `(subcarrier s, channel c)` is row `s·4 + c` of the mixing matrix.
pub fn synth_csi(profile: &SubjectProfile, window: &[Joints], noise_seed: u64) -> Result<Vec<f32>> {
    if window.len() != WINDOW {
        return Err(Error::InvalidArgument(format!(
            "CSI windows span {WINDOW} frames, got {}",
            window.len()
        )));
    }
    let mut rng = rng_for(noise_seed, STREAM_NOISE + profile.id as u64);
    let mut image = vec![0f32; CSI_LEN];
    for (t, joints) in window.iter().enumerate() {
        let phi = profile.lift.lift(joints);
        for cell in 0..CELLS {
            let row = &profile.mixing[cell * FOURIER_FEATURES..][..FOURIER_FEATURES];
            let signal: f64 = row.iter().zip(&phi).map(|(a, b)| a * b).sum();
            let noise: f64 = rng.sample(StandardNormal);
            let (s, c) = (cell / CHANNELS, cell % CHANNELS);
            image[(s * WINDOW + t) * CHANNELS + c] = (signal + profile.offset[cell] + profile.noise * noise) as f32;
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_pose_sequence, make_subjects};

    #[test]
    fn shape_and_determinism() {
        let subjects = make_subjects(0, 3).unwrap();
        let poses = gen_pose_sequence(&subjects[0], 40, 1).unwrap();
        let window = &poses.frames[10..30];
        let a = synth_csi(&subjects[0], window, 9).unwrap();
        assert_eq!(a.len(), 30 * 20 * 4);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, synth_csi(&subjects[0], window, 9).unwrap());
        assert!(synth_csi(&subjects[0], &poses.frames[..19], 9).is_err());
    }

    #[test]
    fn noiseless_identical_poses_repeat() {
        let mut subject = make_subjects(0, 2).unwrap().remove(0);
        subject.noise = 0.0;
        let poses = gen_pose_sequence(&subject, 20, 0).unwrap();
        let window = vec![poses.frames[0]; 20];
        assert_eq!(
            synth_csi(&subject, &window, 1).unwrap(),
            synth_csi(&subject, &window, 2).unwrap()
        );
    }

    #[test]
    fn subjects_differ_on_the_same_pose() {
        let subjects = make_subjects(0, 2).unwrap();
        let poses = gen_pose_sequence(&subjects[0], 20, 0).unwrap();
        let a = synth_csi(&subjects[0], &poses.frames, 1).unwrap();
        let b = synth_csi(&subjects[1], &poses.frames, 1).unwrap();
        let gap: f64 = a.iter().zip(&b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
        assert!(gap > 0.0);
    }
}
