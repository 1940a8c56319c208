//! The self-supervised 3D puzzle transform: scale a cloud to the unit cube,
//! split each axis into `l` equal intervals forming `l^3` voxels, label every
//! point with its voxel, then rigidly displace each voxel's points to a
//! randomly drawn destination voxel. The per-point labels keep the ORIGINAL
//! voxel id, so a solver head predicts where each piece belongs.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{scale_unit_cube, PointCloud};

/// Tolerance for coordinates marginally outside `[0, 1]`.
const BOUNDARY_SLACK: f64 = 1e-9;

/// Number of intervals per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PuzzleConfig {
    pub l: usize,
}

impl PuzzleConfig {
    pub fn new(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::Config(format!("puzzle l must be >= 2, got {l}")));
        }
        Ok(Self { l })
    }

    pub fn num_voxels(&self) -> usize {
        self.l * self.l * self.l
    }
}

impl Default for PuzzleConfig {
    fn default() -> Self {
        Self { l: 3 }
    }
}

/// A shuffled cloud with per-point original-voxel labels and the permutation
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PuzzledSample {
    pub shuffled_points: Vec<[f64; 3]>,
    pub voxel_labels: Vec<usize>,
    pub permutation: Vec<usize>,
}

fn axis_interval(coord: f64, l: usize) -> Result<usize> {
    if !(-BOUNDARY_SLACK..=1.0 + BOUNDARY_SLACK).contains(&coord) {
        return Err(Error::Domain(format!("coordinate {coord} outside [0, 1]")));
    }
    let clamped = coord.clamp(0.0, 1.0);
    Ok(((clamped * l as f64).floor() as usize).min(l - 1))
}

/// Voxel id of a unit-cube coordinate: half-open intervals per axis, last
/// interval closed, composed as `ix + l*iy + l^2*iz`.
pub fn voxel_index(point: [f64; 3], l: usize) -> Result<usize> {
    let ix = axis_interval(point[0], l)?;
    let iy = axis_interval(point[1], l)?;
    let iz = axis_interval(point[2], l)?;
    Ok(ix + l * iy + l * l * iz)
}

/// Center of voxel `v` in the unit cube.
pub fn voxel_center(v: usize, l: usize) -> [f64; 3] {
    let (ix, iy, iz) = (v % l, (v / l) % l, v / (l * l));
    [
        (ix as f64 + 0.5) / l as f64,
        (iy as f64 + 0.5) / l as f64,
        (iz as f64 + 0.5) / l as f64,
    ]
}

/// Per-point voxel labels for an already unit-cube-scaled cloud.
pub fn assign_voxel_labels(cloud: &PointCloud, config: PuzzleConfig) -> Result<Vec<usize>> {
    cloud.points.iter().map(|&p| voxel_index(p, config.l)).collect()
}

/// Uniform permutation over all `l^3` voxels, empty ones included.
pub fn random_voxel_permutation(config: PuzzleConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..config.num_voxels()).collect();
    perm.shuffle(rng);
    perm
}

/// Fraction of points whose predicted original-voxel label is correct.
pub fn puzzle_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape {
            op: "puzzle_accuracy",
            detail: format!("{} predictions vs {} labels", predicted.len(), truth.len()),
        });
    }
    if truth.is_empty() {
        return Err(Error::Shape { op: "puzzle_accuracy", detail: "empty label arrays".into() });
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Build a puzzled variant of `cloud`: unit-cube scale, label by original
/// voxel, then translate every voxel's points by the (destination - origin)
/// center offset of a freshly drawn permutation.
pub fn apply_puzzle(cloud: &PointCloud, config: PuzzleConfig, rng: &mut ChaCha8Rng) -> Result<PuzzledSample> {
    let permutation = random_voxel_permutation(config, rng);
    apply_puzzle_with(cloud, config, &permutation)
}

/// As `apply_puzzle` with a caller-supplied permutation.
///
/// Points sitting exactly on a voxel's upper boundary are nudged by a couple
/// of ulps so the displaced point still indexes into its destination voxel;
/// the identity permutation remains a bitwise no-op.
pub fn apply_puzzle_with(cloud: &PointCloud, config: PuzzleConfig, permutation: &[usize]) -> Result<PuzzledSample> {
    let n = config.num_voxels();
    let mut seen = vec![false; n];
    if permutation.len() != n || !permutation.iter().all(|&v| v < n && !std::mem::replace(&mut seen[v], true)) {
        return Err(Error::Config(format!("permutation is not a bijection on 0..{n}")));
    }
    let scaled = scale_unit_cube(cloud)?;
    let voxel_labels = assign_voxel_labels(&scaled, config)?;
    let l = config.l;

    let mut shuffled_points = Vec::with_capacity(scaled.len());
    for (&p, &v) in scaled.points.iter().zip(&voxel_labels) {
        let dest = permutation[v];
        if dest == v {
            shuffled_points.push(p);
            continue;
        }
        let from = voxel_center(v, l);
        let to = voxel_center(dest, l);
        let mut s = [
            p[0] + (to[0] - from[0]),
            p[1] + (to[1] - from[1]),
            p[2] + (to[2] - from[2]),
        ];
        // Keep boundary points inside the destination interval per axis.
        let (dx, dy, dz) = (dest % l, (dest / l) % l, dest / (l * l));
        for (axis, want) in [(0, dx), (1, dy), (2, dz)] {
            s[axis] = s[axis].clamp(0.0, 1.0);
            while axis_interval(s[axis], l)? > want {
                s[axis] = f64_prev(s[axis]);
            }
            while axis_interval(s[axis], l)? < want {
                s[axis] = f64_next(s[axis]);
            }
        }
        shuffled_points.push(s);
    }
    Ok(PuzzledSample { shuffled_points, voxel_labels, permutation: permutation.to_vec() })
}

fn f64_next(v: f64) -> f64 {
    f64::from_bits(v.to_bits() + 1)
}

fn f64_prev(v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    f64::from_bits(v.to_bits() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Independent oracle: scan all l^3 (ix, iy, iz) interval triples and
    /// report which one contains the point.
    fn brute_force_voxel(p: [f64; 3], l: usize) -> usize {
        let mut found = [0usize; 3];
        for (axis, f) in found.iter_mut().enumerate() {
            let c = p[axis].clamp(0.0, 1.0);
            for i in 0..l {
                let lo = i as f64 / l as f64;
                let hi = (i + 1) as f64 / l as f64;
                let last = i == l - 1;
                if c >= lo && (c < hi || (last && c <= hi)) {
                    *f = i;
                    break;
                }
            }
        }
        found[0] + l * found[1] + l * l * found[2]
    }

    #[test]
    fn voxel_index_examples() {
        assert_eq!(voxel_index([0.0, 0.0, 0.0], 3).unwrap(), 0);
        assert_eq!(voxel_index([0.5, 0.5, 0.5], 2).unwrap(), 7);
        assert_eq!(voxel_index([1.0, 1.0, 1.0], 3).unwrap(), 26);
    }

    #[test]
    fn voxel_index_rejects_out_of_domain() {
        assert!(voxel_index([1.1, 0.0, 0.0], 3).is_err());
        assert!(voxel_index([-0.01, 0.0, 0.0], 3).is_err());
        // Within the boundary slack is clamped, not an error.
        assert_eq!(voxel_index([1.0 + 5e-10, 0.5, 0.5], 2).unwrap(), 7);
    }

    #[test]
    fn voxel_index_matches_brute_force() {
        let mut r = rng::stream(31, "vox");
        for &l in &[2usize, 3, 4] {
            for _ in 0..1000 {
                let p = [r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()];
                assert_eq!(voxel_index(p, l).unwrap(), brute_force_voxel(p, l), "{p:?} l={l}");
            }
            // Boundary coordinates included.
            for p in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 0.5], [1.0, 0.0, 1.0]] {
                assert_eq!(voxel_index(p, l).unwrap(), brute_force_voxel(p, l));
            }
        }
    }

    #[test]
    fn labels_all_in_one_octant() {
        let pts: Vec<[f64; 3]> = vec![[0.1, 0.2, 0.3], [0.3, 0.1, 0.4], [0.45, 0.45, 0.2]];
        let cloud = PointCloud::new(pts, "octant").unwrap();
        let labels = assign_voxel_labels(&cloud, PuzzleConfig::new(2).unwrap()).unwrap();
        assert!(labels.iter().all(|&v| v == labels[0]));
    }

    #[test]
    fn labels_bounded_by_num_voxels() {
        let mut r = rng::stream(32, "lab");
        let pts: Vec<[f64; 3]> = (0..256).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
        let cloud = PointCloud::new(pts, "r").unwrap();
        let labels = assign_voxel_labels(&cloud, PuzzleConfig::new(2).unwrap()).unwrap();
        assert!(labels.iter().all(|&v| v < 8));
    }

    #[test]
    fn permutation_is_uniform_bijection() {
        let cfg = PuzzleConfig::new(2).unwrap();
        let mut r = rng::stream(33, "perm");
        let mut hist = [0usize; 8];
        let n = 100_000;
        for _ in 0..n {
            let p = random_voxel_permutation(cfg, &mut r);
            let mut seen = [false; 8];
            for &v in &p {
                seen[v] = true;
            }
            assert!(seen.iter().all(|&s| s));
            hist[p[0]] += 1;
        }
        // pi(0) uniform over 8 destinations within 3 sigma.
        let expect = n as f64 / 8.0;
        let sigma = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for (i, &h) in hist.iter().enumerate() {
            assert!(
                (h as f64 - expect).abs() < 3.0 * sigma,
                "bin {i}: {h} vs {expect} +- {sigma}"
            );
        }
    }

    #[test]
    fn permutation_seeded_reproducible() {
        let cfg = PuzzleConfig::new(3).unwrap();
        let a = random_voxel_permutation(cfg, &mut rng::stream(5, "p"));
        let b = random_voxel_permutation(cfg, &mut rng::stream(5, "p"));
        assert_eq!(a, b);
    }

    fn random_cloud(seed: u64, k: usize) -> PointCloud {
        let mut r = rng::stream(seed, "cloud");
        let pts: Vec<[f64; 3]> = (0..k)
            .map(|_| [r.gen_range(-2.0..3.0), r.gen_range(-1.0..1.0), r.gen_range(0.0..4.0)])
            .collect();
        PointCloud::new(pts, format!("rand{seed}")).unwrap()
    }

    #[test]
    fn puzzle_consistency_and_restore() {
        for seed in 0..20u64 {
            for &l in &[2usize, 3, 4] {
                let cloud = random_cloud(seed, 96);
                let cfg = PuzzleConfig::new(l).unwrap();
                let scaled = scale_unit_cube(&cloud).unwrap();
                let mut r = rng::stream(seed, "pz");
                let puz = apply_puzzle(&cloud, cfg, &mut r).unwrap();
                assert_eq!(puz.shuffled_points.len(), cloud.len());
                for (i, (&s, &v)) in puz.shuffled_points.iter().zip(&puz.voxel_labels).enumerate() {
                    assert_eq!(
                        voxel_index(s, l).unwrap(),
                        puz.permutation[v],
                        "seed {seed} l {l} point {i}"
                    );
                    // Inverse translation restores the scaled cloud.
                    let from = voxel_center(v, l);
                    let to = voxel_center(puz.permutation[v], l);
                    let restored =
                        [s[0] - (to[0] - from[0]), s[1] - (to[1] - from[1]), s[2] - (to[2] - from[2])];
                    for a in 0..3 {
                        assert!((restored[a] - scaled.points[i][a]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_permutation_is_bitwise_noop() {
        let cloud = random_cloud(77, 64);
        let cfg = PuzzleConfig::new(3).unwrap();
        let scaled = scale_unit_cube(&cloud).unwrap();
        let identity: Vec<usize> = (0..cfg.num_voxels()).collect();
        let puz = apply_puzzle_with(&cloud, cfg, &identity).unwrap();
        assert_eq!(puz.shuffled_points, scaled.points);
    }

    #[test]
    fn non_bijective_permutation_rejected() {
        let cloud = random_cloud(1, 16);
        let cfg = PuzzleConfig::new(2).unwrap();
        assert!(apply_puzzle_with(&cloud, cfg, &[0; 8]).is_err());
        assert!(apply_puzzle_with(&cloud, cfg, &[0, 1, 2]).is_err());
    }

    #[test]
    fn within_voxel_geometry_is_rigid() {
        let cloud = random_cloud(5, 128);
        let cfg = PuzzleConfig::new(2).unwrap();
        let scaled = scale_unit_cube(&cloud).unwrap();
        let mut r = rng::stream(6, "rigid");
        let puz = apply_puzzle(&cloud, cfg, &mut r).unwrap();
        // Any two points of the same voxel keep their relative offset to
        // within a nudge of a few ulps.
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                if puz.voxel_labels[i] == puz.voxel_labels[j] {
                    for a in 0..3 {
                        let before = scaled.points[i][a] - scaled.points[j][a];
                        let after = puz.shuffled_points[i][a] - puz.shuffled_points[j][a];
                        assert!((before - after).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn fresh_permutation_per_call() {
        let cloud = random_cloud(8, 64);
        let cfg = PuzzleConfig::new(3).unwrap();
        let mut r = rng::stream(9, "fresh");
        let a = apply_puzzle(&cloud, cfg, &mut r).unwrap();
        let b = apply_puzzle(&cloud, cfg, &mut r).unwrap();
        assert_ne!(a.permutation, b.permutation);
        assert_eq!(a.voxel_labels, b.voxel_labels);
    }

    #[test]
    fn puzzle_accuracy_cases() {
        assert_eq!(puzzle_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(puzzle_accuracy(&[4, 5, 6], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(puzzle_accuracy(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(puzzle_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn empty_voxels_are_harmless() {
        // All points in one corner: 26 of 27 voxels empty.
        let pts = vec![[0.01, 0.01, 0.01], [0.02, 0.03, 0.01], [0.0, 0.05, 0.04]];
        let cloud = PointCloud::new(pts, "corner").unwrap();
        let cfg = PuzzleConfig::new(3).unwrap();
        let mut r = rng::stream(10, "empty");
        for _ in 0..50 {
            let puz = apply_puzzle(&cloud, cfg, &mut r).unwrap();
            assert_eq!(puz.voxel_labels.len(), 3);
            assert_eq!(puz.permutation.len(), 27);
        }
    }
}
