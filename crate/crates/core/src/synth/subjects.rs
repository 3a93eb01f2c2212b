use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::pose::JOINTS;
use crate::error::{Error, Result};

/// CSI cells in one time column of the image (30 subcarriers × 4 channels).
pub const CELLS: usize = 30 * 4;
pub const FOURIER_FEATURES: usize = 64;
/// Latent body/clothing traits shared by all subjects; each subject is a
/// point in this trait space.
pub const TRAITS: usize = 3;

const FOURIER_FREQUENCY: f64 = 1.5;
const MIXING_SPREAD: f64 = 0.3;
const OFFSET_SCALE: f64 = 0.5;

// RNG streams under the global seed.
const STREAM_SHARED: u64 = 1;
const STREAM_SUBJECT: u64 = 1 << 16;
pub(crate) const STREAM_POSE: u64 = 2 << 16;
pub(crate) const STREAM_NOISE: u64 = 3 << 16;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random Fourier feature lift of normalized joint coordinates; the same for
/// every subject.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierLift {
    /// `FOURIER_FEATURES × 2·JOINTS` frequencies, row-major.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl FourierLift {
    pub fn new(rng: &mut impl Rng) -> Self {
        let frequencies = normals(rng, FOURIER_FEATURES * 2 * JOINTS)
            .into_iter()
            .map(|w| w * FOURIER_FREQUENCY)
            .collect();
        let phases = (0..FOURIER_FEATURES)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        FourierLift { frequencies, phases }
    }

    /// Features of one frame of joints given in canvas pixels.
    pub fn lift(&self, joints: &[[f64; 2]; JOINTS]) -> [f64; FOURIER_FEATURES] {
        let mut u = [0.0; 2 * JOINTS];
        for (j, p) in joints.iter().enumerate() {
            u[2 * j] = 2.0 * p[0] / super::CANVAS_W as f64 - 1.0;
            u[2 * j + 1] = 2.0 * p[1] / super::CANVAS_H as f64 - 1.0;
        }
        let amp = (2.0 / FOURIER_FEATURES as f64).sqrt();
        let mut out = [0.0; FOURIER_FEATURES];
        for (f, o) in out.iter_mut().enumerate() {
            let w = &self.frequencies[f * 2 * JOINTS..][..2 * JOINTS];
            let dot: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
            *o = amp * (dot + self.phases[f]).cos();
        }
        out
    }
}

/// Everything that distinguishes one synthetic subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectProfile {
    pub id: u32,
    pub global_seed: u64,
    /// Limb length multiplier.
    pub body_scale: f64,
    /// `CELLS × FOURIER_FEATURES` map from pose features to CSI cells.
    pub mixing: Vec<f64>,
    /// Static per-cell CSI offset.
    pub offset: Vec<f64>,
    pub noise: f64,
    /// Position of the subject in the shared trait space.
    pub traits: [f64; TRAITS],
    pub lift: FourierLift,
}

impl SubjectProfile {
    pub fn is_target(&self, total: usize) -> bool {
        self.id as usize + 1 == total
    }
}

/// Shared structure every subject is built from.
struct Population {
    lift: FourierLift,
    base_mixing: Vec<f64>,
    mixing_basis: Vec<Vec<f64>>,
    offset_basis: Vec<Vec<f64>>,
}

impl Population {
    fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, STREAM_SHARED);
        let lift = FourierLift::new(&mut rng);
        let base_mixing = normals(&mut rng, CELLS * FOURIER_FEATURES);
        let mixing_basis = (0..TRAITS)
            .map(|_| normals(&mut rng, CELLS * FOURIER_FEATURES))
            .collect();
        let offset_basis = (0..TRAITS).map(|_| normals(&mut rng, CELLS)).collect();
        Population {
            lift,
            base_mixing,
            mixing_basis,
            offset_basis,
        }
    }

    fn subject(&self, seed: u64, id: u32) -> SubjectProfile {
        let mut rng = rng_for(seed, STREAM_SUBJECT + id as u64);
        let mut traits = [0.0; TRAITS];
        for t in traits.iter_mut() {
            *t = rng.sample(StandardNormal);
        }
        let body_scale = rng.gen_range(0.85..=1.15);
        let noise = rng.gen_range(0.01..=0.05);

        let mut mixing = self.base_mixing.clone();
        let mut offset = vec![0.0; CELLS];
        for (k, &s) in traits.iter().enumerate() {
            for (m, &p) in mixing.iter_mut().zip(&self.mixing_basis[k]) {
                *m += MIXING_SPREAD * s * p;
            }
            for (o, &b) in offset.iter_mut().zip(&self.offset_basis[k]) {
                *o += OFFSET_SCALE * s * b;
            }
        }
        SubjectProfile {
            id,
            global_seed: seed,
            body_scale,
            mixing,
            offset,
            noise,
            traits,
            lift: self.lift.clone(),
        }
    }
}

/// Builds `total` subjects; the last one is the held-out target.
pub fn make_subjects(global_seed: u64, total: usize) -> Result<Vec<SubjectProfile>> {
    if total < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 subjects (one source, one target), got {total}"
        )));
    }
    let population = Population::new(global_seed);
    Ok((0..total as u32)
        .map(|id| population.subject(global_seed, id))
        .collect())
}
