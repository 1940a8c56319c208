//! Point-cloud and mesh data model, surface sampling, normalization and the
//! training-time augmentations.

pub mod io;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unordered set of 3D points, optionally carrying a shape label and/or
/// per-point part labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub class_label: Option<usize>,
    pub part_labels: Option<Vec<usize>>,
    pub source_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, source_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "point_cloud" });
        }
        Ok(Self { points, class_label: None, part_labels: None, source_id: source_id.into() })
    }

    pub fn with_class(mut self, label: usize) -> Self {
        self.class_label = Some(label);
        self
    }

    pub fn with_parts(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::Dataset(format!(
                "{} part labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        self.part_labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Coordinates-only view of a sample: what the self-supervised stream is
/// allowed to see. There is deliberately no way to reach a main-task label
/// through this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledCloud {
    pub points: Vec<[f64; 3]>,
    pub source_id: String,
}

impl From<&PointCloud> for UnlabeledCloud {
    fn from(cloud: &PointCloud) -> Self {
        Self { points: cloud.points.clone(), source_id: cloud.source_id.clone() }
    }
}

impl UnlabeledCloud {
    /// Back to a bare cloud (still without labels) for the shared transforms.
    pub fn to_cloud(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            class_label: None,
            part_labels: None,
            source_id: self.source_id.clone(),
        }
    }
}

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let v = vertices.len();
        for f in &faces {
            if f.iter().any(|&i| i >= v) {
                return Err(Error::DegenerateMesh(format!("face {:?} indexes beyond {} vertices", f, v)));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

/// Labeled collection of clouds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<PointCloud>,
    pub class_names: Vec<String>,
    pub num_parts: Option<usize>,
    /// Part ids belonging to each class, for the category-mIoU protocol.
    pub parts_per_class: Option<Vec<Vec<usize>>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        for s in &self.samples {
            if let Some(l) = s.class_label {
                if l >= c {
                    return Err(Error::Dataset(format!(
                        "sample {} has class {} but only {} classes known",
                        s.source_id, l, c
                    )));
                }
            }
            if let (Some(parts), Some(q)) = (&s.part_labels, self.num_parts) {
                if let Some(&bad) = parts.iter().find(|&&p| p >= q) {
                    return Err(Error::Dataset(format!(
                        "sample {} has part label {} but num_parts is {}",
                        s.source_id, bad, q
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draw `k` points uniformly from the mesh surface: faces picked with
/// probability proportional to area, then a uniform barycentric point.
pub fn sample_mesh_surface(mesh: &Mesh, k: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let (cloud, _) = sample_mesh_surface_with_faces(mesh, k, rng)?;
    Ok(cloud)
}

/// As `sample_mesh_surface`, additionally returning the face index each point
/// was drawn from (used to inherit part labels).
pub fn sample_mesh_surface_with_faces(
    mesh: &Mesh,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(PointCloud, Vec<usize>)> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh("total surface area is zero".into()));
    }
    // Cumulative area table + binary search keeps the draw order stable.
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut points = Vec::with_capacity(k);
    let mut faces = Vec::with_capacity(k);
    for _ in 0..k {
        let u = rng.gen::<f64>() * total;
        let fi = cumulative.partition_point(|&c| c <= u).min(mesh.faces.len() - 1);
        let [ia, ib, ic] = mesh.faces[fi];
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        // sqrt trick: uniform over the triangle.
        let r1 = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
        faces.push(fi);
    }
    Ok((PointCloud::new(points, "mesh_sample")?, faces))
}

/// Center at the origin and scale so the farthest point sits on the unit
/// sphere. Labels are preserved.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let k = cloud.len() as f64;
    let mut centroid = [0.0; 3];
    for p in &cloud.points {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v / k;
        }
    }
    let mut max_norm = 0.0f64;
    let centered: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| {
            let q = sub(*p, centroid);
            max_norm = max_norm.max(norm(q));
            q
        })
        .collect();
    if max_norm == 0.0 {
        return Err(Error::DegenerateCloud("all points coincide".into()));
    }
    let mut out = cloud.clone();
    out.points = centered
        .into_iter()
        .map(|p| [p[0] / max_norm, p[1] / max_norm, p[2] / max_norm])
        .collect();
    Ok(out)
}

/// Translate the min corner to the origin and divide by the largest extent:
/// the cloud lands in `[0,1]^3` with the longest axis spanning the full range.
pub fn scale_unit_cube(cloud: &PointCloud) -> Result<PointCloud> {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| max[a] - min[a]).fold(0.0f64, f64::max);
    if extent == 0.0 {
        return Err(Error::DegenerateCloud("zero extent on all axes".into()));
    }
    let mut out = cloud.clone();
    out.points = cloud
        .points
        .iter()
        .map(|p| [(p[0] - min[0]) / extent, (p[1] - min[1]) / extent, (p[2] - min[2]) / extent])
        .collect();
    Ok(out)
}

/// Add clipped Gaussian noise to every coordinate. Labels are preserved.
pub fn jitter(cloud: &PointCloud, sigma: f64, clip: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if sigma < 0.0 || clip <= 0.0 {
        return Err(Error::Config(format!("jitter sigma {sigma} / clip {clip}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut out = cloud.clone();
    for p in &mut out.points {
        for v in p.iter_mut() {
            *v += normal.sample(rng).clamp(-clip, clip);
        }
    }
    Ok(out)
}

/// Rotate about the y (up) axis: `x' = x cos + z sin`, `z' = -x sin + z cos`.
pub fn rotate_y(cloud: &PointCloud, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    let mut out = cloud.clone();
    for p in &mut out.points {
        let (x, z) = (p[0], p[2]);
        p[0] = x * c + z * s;
        p[2] = -x * s + z * c;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec(), "test").unwrap()
    }

    fn unit_triangle() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn cloud_invariants() {
        assert!(matches!(PointCloud::new(vec![], "x"), Err(Error::EmptyCloud)));
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], "x").is_err());
        assert!(cloud(&[[0.0; 3]]).with_parts(vec![0, 1]).is_err());
    }

    #[test]
    fn barycentric_samples_lie_in_triangle() {
        let mesh = unit_triangle();
        let mut r = rng::stream(2, "tri");
        let pc = sample_mesh_surface(&mesh, 500, &mut r).unwrap();
        for p in &pc.points {
            // Inside the triangle x, y >= 0, x + y <= 1, z == 0.
            assert!(p[0] >= -1e-12 && p[1] >= -1e-12);
            assert!(p[0] + p[1] <= 1.0 + 1e-12);
            assert!(p[2].abs() < 1e-12);
        }
    }

    #[test]
    fn area_weighting_monte_carlo() {
        // Two triangles with area ratio 9:1.
        let mesh = Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [9.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 2.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let mut r = rng::stream(4, "areas");
        let (_, faces) = sample_mesh_surface_with_faces(&mesh, 10_000, &mut r).unwrap();
        let big = faces.iter().filter(|&&f| f == 0).count() as f64 / 10_000.0;
        assert!((big - 0.9).abs() < 0.03, "large-face fraction {big}");
    }

    #[test]
    fn sampling_respects_k_and_seed() {
        let mesh = unit_triangle();
        let a = sample_mesh_surface(&mesh, 2048, &mut rng::stream(7, "s")).unwrap();
        let b = sample_mesh_surface(&mesh, 2048, &mut rng::stream(7, "s")).unwrap();
        assert_eq!(a.len(), 2048);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn degenerate_mesh_is_an_error() {
        let mesh = Mesh::new(
            vec![[0.0; 3], [0.0; 3], [0.0; 3]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mut r = rng::stream(1, "deg");
        assert!(matches!(
            sample_mesh_surface(&mesh, 8, &mut r),
            Err(Error::DegenerateMesh(_))
        ));
    }

    #[test]
    fn normalize_unit_sphere_hand_case() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let n = normalize_unit_sphere(&pc).unwrap();
        assert_eq!(n.points, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_unit_sphere_idempotent_and_unit_norm() {
        let mut r = rng::stream(9, "sphere");
        use rand::Rng;
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|_| [r.gen_range(-3.0..5.0), r.gen_range(-1.0..1.0), r.gen_range(0.0..9.0)])
            .collect();
        let once = normalize_unit_sphere(&cloud(&pts)).unwrap();
        let max_norm = once.points.iter().map(|p| norm(*p)).fold(0.0f64, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
        let twice = normalize_unit_sphere(&once).unwrap();
        for (a, b) in once.points.iter().zip(&twice.points) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_coincident_points() {
        let pc = cloud(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
        assert!(matches!(normalize_unit_sphere(&pc), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn scale_unit_cube_hand_case() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]);
        let s = scale_unit_cube(&pc).unwrap();
        assert_eq!(s.points, vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
    }

    #[test]
    fn scale_unit_cube_bounds_and_idempotence() {
        let mut r = rng::stream(10, "cube");
        use rand::Rng;
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|_| [r.gen_range(-2.0..7.0), r.gen_range(0.0..0.5), r.gen_range(1.0..2.0)])
            .collect();
        let s = scale_unit_cube(&cloud(&pts)).unwrap();
        assert!(s.points.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
        // Longest axis touches both 0 and 1.
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &s.points {
            lo = lo.min(p[0]);
            hi = hi.max(p[0]);
        }
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
        let again = scale_unit_cube(&s).unwrap();
        assert_eq!(s.points, again.points);
    }

    #[test]
    fn scale_unit_cube_rejects_single_point() {
        let pc = cloud(&[[3.0, 3.0, 3.0]]);
        assert!(matches!(scale_unit_cube(&pc), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn jitter_identity_and_clip() {
        let pc = cloud(&[[0.5, 0.5, 0.5]; 32]).with_class(1);
        let mut r = rng::stream(12, "jit");
        let same = jitter(&pc, 0.0, 0.05, &mut r).unwrap();
        assert_eq!(same.points, pc.points);

        let moved = jitter(&pc, 0.2, 0.05, &mut r).unwrap();
        for (a, b) in moved.points.iter().zip(&pc.points) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 0.05 + 1e-15);
            }
        }
        assert_eq!(moved.class_label, Some(1));
    }

    #[test]
    fn jitter_std_monte_carlo() {
        let n = 333_334; // ~1e6 coordinates
        let pc = cloud(&vec![[0.0, 0.0, 0.0]; n]);
        let mut r = rng::stream(13, "jitmc");
        let j = jitter(&pc, 0.01, 0.05, &mut r).unwrap();
        let values: Vec<f64> = j.points.iter().flatten().copied().collect();
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / values.len() as f64;
        let std = var.sqrt();
        assert!((std - 0.01).abs() < 0.01 * 0.05, "sample std {std}");
    }

    #[test]
    fn rotate_y_conventions() {
        let pc = cloud(&[[1.0, 0.0, 0.0]]);
        let r = rotate_y(&pc, std::f64::consts::FRAC_PI_2);
        assert!(r.points[0][0].abs() < 1e-12);
        assert!(r.points[0][1].abs() < 1e-12);
        assert!((r.points[0][2] + 1.0).abs() < 1e-12);

        let id = rotate_y(&pc, 0.0);
        assert_eq!(id.points, pc.points);
    }

    #[test]
    fn rotate_y_preserves_norms() {
        let mut r = rng::stream(14, "rot");
        use rand::Rng;
        let pts: Vec<[f64; 3]> = (0..32)
            .map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)])
            .collect();
        let pc = cloud(&pts);
        let rot = rotate_y(&pc, 1.234);
        for (a, b) in pc.points.iter().zip(&rot.points) {
            assert!((norm(*a) - norm(*b)).abs() < 1e-12);
        }
    }

    #[test]
    fn augmentations_preserve_labels_and_k() {
        let pc = cloud(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
            .with_class(2)
            .with_parts(vec![0, 1])
            .unwrap();
        let mut r = rng::stream(15, "aug");
        let j = jitter(&pc, 0.01, 0.05, &mut r).unwrap();
        let rot = rotate_y(&j, 0.7);
        assert_eq!(rot.len(), 2);
        assert_eq!(rot.class_label, Some(2));
        assert_eq!(rot.part_labels, Some(vec![0, 1]));
    }
}
