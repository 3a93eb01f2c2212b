//! Bounded random-walk skeleton motion.

use rand::Rng;
use rand_distr::StandardNormal;

use super::subjects::{rng_for, SubjectProfile, STREAM_POSE};
use super::{CANVAS_H, CANVAS_W};
use crate::error::{Error, Result};

pub const JOINTS: usize = 14;

/// Joint names, indexed like [`PoseSequence::frames`].
pub const JOINT_NAMES: [&str; JOINTS] = [
    "head",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
];

const NECK: usize = 1;

/// `(parent, child, rest direction in degrees, length at scale 1, swing ±deg)`.
/// Directions are image angles: 0° points right, 90° points down.
const BONES: [(usize, usize, f64, f64, f64); 13] = [
    (1, 0, -90.0, 10.0, 15.0),
    (1, 2, 180.0, 12.0, 10.0),
    (2, 3, 100.0, 16.0, 70.0),
    (3, 4, 95.0, 14.0, 80.0),
    (1, 5, 0.0, 12.0, 10.0),
    (5, 6, 80.0, 16.0, 70.0),
    (6, 7, 85.0, 14.0, 80.0),
    (1, 8, 99.5, 30.0, 8.0),
    (8, 9, 92.0, 22.0, 25.0),
    (9, 10, 90.0, 22.0, 25.0),
    (1, 11, 80.5, 30.0, 8.0),
    (11, 12, 88.0, 22.0, 25.0),
    (12, 13, 90.0, 22.0, 25.0),
];

/// Fixed skeleton topology as `(parent, child)` joint pairs.
pub fn bones() -> impl Iterator<Item = (usize, usize)> {
    BONES.iter().map(|b| (b.0, b.1))
}

/// Largest per-joint displacement allowed between consecutive frames, px.
pub const MAX_STEP: f64 = 5.0;

const ROOT_X: (f64, f64) = (55.0, 105.0);
const ROOT_Y: (f64, f64) = (14.0, 32.0);
const ANGLE_DAMPING: f64 = 0.85;
const ANGLE_KICK: f64 = 0.02;
const ROOT_DAMPING: f64 = 0.9;
const ROOT_KICK: f64 = 0.4;

pub type Joints = [[f64; 2]; JOINTS];

/// `T` frames of 14 `(x, y)` joints on the 160×120 canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub frames: Vec<Joints>,
}

#[derive(Clone)]
struct State {
    root: [f64; 2],
    root_vel: [f64; 2],
    angles: [f64; 13],
    angle_vel: [f64; 13],
}

fn place(root: [f64; 2], angles: &[f64; 13], scale: f64) -> Joints {
    let mut joints = [[0.0; 2]; JOINTS];
    joints[NECK] = root;
    // Parents precede children in BONES.
    for (b, &(parent, child, _, len, _)) in BONES.iter().enumerate() {
        let a = angles[b];
        let p = joints[parent];
        joints[child] = [p[0] + scale * len * a.cos(), p[1] + scale * len * a.sin()];
    }
    for j in joints.iter_mut() {
        j[0] = j[0].clamp(0.0, (CANVAS_W - 1) as f64);
        j[1] = j[1].clamp(0.0, (CANVAS_H - 1) as f64);
    }
    joints
}

fn max_displacement(a: &Joints, b: &Joints) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

/// Keeps `x + v` inside `[lo, hi]`, reflecting the velocity at the walls.
fn bounded(x: f64, v: &mut f64, lo: f64, hi: f64) -> f64 {
    let next = x + *v;
    if next < lo || next > hi {
        *v = -*v;
        (x + *v).clamp(lo, hi)
    } else {
        next
    }
}

impl State {
    /// Random velocity update, not yet integrated.
    fn kick(&self, rng: &mut impl Rng) -> State {
        let mut s = self.clone();
        for k in 0..2 {
            s.root_vel[k] = ROOT_DAMPING * s.root_vel[k] + ROOT_KICK * rng.sample::<f64, _>(StandardNormal);
        }
        for b in 0..BONES.len() {
            s.angle_vel[b] = ANGLE_DAMPING * s.angle_vel[b] + ANGLE_KICK * rng.sample::<f64, _>(StandardNormal);
        }
        s
    }

    fn damp(&mut self, fraction: f64) {
        for v in self.root_vel.iter_mut().chain(self.angle_vel.iter_mut()) {
            *v *= fraction;
        }
    }

    fn integrate(&mut self, fraction: f64) {
        let (rx, ry) = (self.root_vel[0] * fraction, self.root_vel[1] * fraction);
        let mut vx = rx;
        let mut vy = ry;
        self.root[0] = bounded(self.root[0], &mut vx, ROOT_X.0, ROOT_X.1);
        self.root[1] = bounded(self.root[1], &mut vy, ROOT_Y.0, ROOT_Y.1);
        if vx != rx {
            self.root_vel[0] = -self.root_vel[0];
        }
        if vy != ry {
            self.root_vel[1] = -self.root_vel[1];
        }
        for (b, &(_, _, rest, _, swing)) in BONES.iter().enumerate() {
            let (lo, hi) = ((rest - swing).to_radians(), (rest + swing).to_radians());
            let step = self.angle_vel[b] * fraction;
            let mut v = step;
            self.angles[b] = bounded(self.angles[b], &mut v, lo, hi);
            if v != step {
                self.angle_vel[b] = -self.angle_vel[b];
            }
        }
    }
}

/// Generates `frames` poses for `profile`. Deterministic per
/// `(profile, seed)`; consecutive frames move no joint more than
/// [`MAX_STEP`] pixels.
pub fn gen_pose_sequence(profile: &SubjectProfile, frames: usize, seed: u64) -> Result<PoseSequence> {
    if frames < super::WINDOW {
        return Err(Error::InvalidArgument(format!(
            "pose sequences need at least {} frames, got {frames}",
            super::WINDOW
        )));
    }
    let mut rng = rng_for(seed, STREAM_POSE + profile.id as u64);
    let mut state = State {
        root: [rng.gen_range(ROOT_X.0..ROOT_X.1), rng.gen_range(ROOT_Y.0..ROOT_Y.1)],
        root_vel: [0.0; 2],
        angles: [0.0; 13],
        angle_vel: [0.0; 13],
    };
    for (b, &(_, _, rest, _, swing)) in BONES.iter().enumerate() {
        state.angles[b] = (rest + rng.gen_range(-0.5..0.5) * swing).to_radians();
    }

    let scale = profile.body_scale;
    let mut out = Vec::with_capacity(frames);
    out.push(place(state.root, &state.angles, scale));
    while out.len() < frames {
        let prev = out.last().expect("non-empty");
        let kicked = state.kick(&mut rng);
        // Shrink the step until no joint jumps too far; a zero step
        // reproduces `prev` exactly, so this terminates.
        let mut fraction = 1.0;
        let (next, joints) = loop {
            let mut next = kicked.clone();
            next.integrate(fraction);
            let joints = place(next.root, &next.angles, scale);
            if max_displacement(prev, &joints) <= MAX_STEP {
                break (next, joints);
            }
            fraction *= 0.5;
            if fraction < 1e-9 {
                fraction = 0.0;
            }
        };
        state = next;
        if fraction < 1.0 {
            state.damp(fraction);
        }
        out.push(joints);
    }
    Ok(PoseSequence { frames: out })
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Mean bone length over all frames.
    pub fn mean_bone_length(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for f in &self.frames {
            for (p, c) in bones() {
                total += ((f[p][0] - f[c][0]).powi(2) + (f[p][1] - f[c][1]).powi(2)).sqrt();
                count += 1;
            }
        }
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_subjects;

    #[test]
    fn sequence_stays_in_canvas_and_moves_smoothly() {
        let subjects = make_subjects(0, 5).unwrap();
        for s in &subjects {
            let seq = gen_pose_sequence(s, 100, 3).unwrap();
            assert_eq!(seq.len(), 100);
            for f in &seq.frames {
                for j in f {
                    assert!((0.0..=159.0).contains(&j[0]) && (0.0..=119.0).contains(&j[1]));
                }
            }
            for w in seq.frames.windows(2) {
                assert!(max_displacement(&w[0], &w[1]) <= MAX_STEP + 1e-12);
            }
        }
        assert!(gen_pose_sequence(&subjects[0], 19, 0).is_err());
    }

    #[test]
    fn sequence_is_deterministic_and_moves() {
        let s = &make_subjects(4, 2).unwrap()[0];
        let a = gen_pose_sequence(s, 200, 11).unwrap();
        assert_eq!(a, gen_pose_sequence(s, 200, 11).unwrap());
        assert_ne!(a, gen_pose_sequence(s, 200, 12).unwrap());
        let travel = max_displacement(&a.frames[0], &a.frames[199]);
        assert!(travel > 5.0, "pose barely moves: {travel}");
    }

    #[test]
    fn bone_length_follows_body_scale() {
        let mut s = make_subjects(0, 2).unwrap().remove(0);
        s.body_scale = 1.15;
        let tall = gen_pose_sequence(&s, 300, 5).unwrap().mean_bone_length();
        s.body_scale = 0.85;
        let short = gen_pose_sequence(&s, 300, 5).unwrap().mean_bone_length();
        let ratio = tall / short;
        assert!((ratio - 1.15 / 0.85).abs() < 0.05, "{ratio}");
    }
}
