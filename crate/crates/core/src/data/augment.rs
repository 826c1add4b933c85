//! Rotation augmentation about each sample's current head position.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};
use crate::features::{rotate2, VruSample};

/// Rotates trajectory, poses and futures counter-clockwise by `angle` about
/// the current head position, and every map about the grid center.
pub fn rotate_sample(s: &VruSample, angle: f64) -> VruSample {
    if angle == 0.0 {
        return s.clone();
    }
    let c = s.current_position();
    let rot = |p: [f64; 2]| {
        let [x, y] = rotate2([p[0] - c[0], p[1] - c[1]], angle);
        [x + c[0], y + c[1]]
    };
    let mut out = s.clone();
    for p in &mut out.head_xy {
        *p = rot(*p);
    }
    for pose in &mut out.pose {
        for j in pose.iter_mut() {
            let [x, y] = rot([j[0], j[1]]);
            j[0] = x;
            j[1] = y;
        }
    }
    out.map_tc = s.map_tc.rotate(angle);
    for f in &mut out.futures {
        f.position = rot(f.position);
        f.map = f.map.as_ref().map(|m| m.rotate(angle));
    }
    out
}

/// `factor` rotated copies of every sample, each at an angle drawn
/// uniformly from `[0, 2 pi)`; the originals are replaced.
pub fn augment_rotations(ds: &Dataset, factor: usize, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_rotations_with(ds, factor, |_, _| rng.random_range(0.0..TAU))
}

/// As [`augment_rotations`] with angles from `angle(sample_index, copy)`.
/// Copy 0 keeps the sample id; copy `j > 0` gets the suffix `#r{j}`.
pub fn augment_rotations_with(ds: &Dataset, factor: usize, mut angle: impl FnMut(usize, usize) -> f64) -> Result<Dataset, DataError> {
    if factor == 0 {
        return Err(DataError::Config("augmentation factor must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(ds.len() * factor);
    for (i, s) in ds.samples.iter().enumerate() {
        for j in 0..factor {
            let a = angle(i, j);
            if !a.is_finite() {
                return Err(DataError::Config(format!("non-finite rotation angle {a}")));
            }
            let mut r = rotate_sample(s, a);
            if j > 0 {
                r.id = format!("{}#r{j}", s.id);
            }
            samples.push(r);
        }
    }
    Dataset::new(ds.manifest.clone(), samples)
}
