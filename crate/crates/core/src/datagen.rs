//! Procedural labeled shape generator: desk-scale datasets with known classes
//! and parts, and a controllable domain gap (coordinate noise, occlusion,
//! background clutter) between a clean profile and a scan-like one.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{normalize_unit_sphere, sample_mesh_surface_with_faces, Dataset, Mesh, PointCloud};
use crate::rng;

/// Solid primitive with a pose, tessellated into triangles for sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Box { center: [f64; 3], size: [f64; 3] },
    Cylinder { center: [f64; 3], radius: f64, height: f64 },
    Sphere { center: [f64; 3], radius: f64 },
}

/// One named part of a shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub part_id: usize,
    pub primitive: Primitive,
}

fn default_size_jitter() -> f64 {
    0.1
}

/// Blueprint for one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRecipe {
    pub class_name: String,
    pub parts: Vec<PartSpec>,
    /// Relative size wobble per sample (intra-class variation).
    #[serde(default = "default_size_jitter")]
    pub size_jitter: f64,
    /// Base corruption levels for this class; combined with the profile.
    #[serde(default)]
    pub occlusion_fraction: f64,
    #[serde(default)]
    pub background_fraction: f64,
}

impl ShapeRecipe {
    pub fn part_count(&self) -> usize {
        self.parts.iter().map(|p| p.part_id + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::Config(format!("recipe {} has no parts", self.class_name)));
        }
        let n = self.part_count();
        let mut seen = vec![false; n];
        for p in &self.parts {
            seen[p.part_id] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Config(format!(
                "recipe {} part ids are not contiguous from 0",
                self.class_name
            )));
        }
        for f in [self.occlusion_fraction, self.background_fraction] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("fraction {f} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Dataset-wide corruption preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainProfile {
    pub name: String,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub occlusion_fraction: f64,
    #[serde(default)]
    pub background_fraction: f64,
}

impl DomainProfile {
    pub fn clean() -> Self {
        Self { name: "clean".into(), noise_sigma: 0.0, occlusion_fraction: 0.0, background_fraction: 0.0 }
    }

    /// Scan-like corruption: vertex noise, a missing region, background
    /// clutter.
    pub fn corrupted() -> Self {
        Self {
            name: "corrupted".into(),
            noise_sigma: 0.01,
            occlusion_fraction: 0.15,
            background_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in [self.occlusion_fraction, self.background_fraction] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("profile fraction {f} outside [0, 1)")));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn box_mesh(center: [f64; 3], size: [f64; 3]) -> Mesh {
    let h = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
    let mut vertices = Vec::with_capacity(8);
    for iz in 0..2 {
        for iy in 0..2 {
            for ix in 0..2 {
                vertices.push([
                    center[0] + if ix == 0 { -h[0] } else { h[0] },
                    center[1] + if iy == 0 { -h[1] } else { h[1] },
                    center[2] + if iz == 0 { -h[2] } else { h[2] },
                ]);
            }
        }
    }
    // Two triangles per face; vertex ids follow the (ix, iy, iz) bit layout.
    let quads = [
        [0, 1, 3, 2], // -z
        [4, 6, 7, 5], // +z
        [0, 2, 6, 4], // -x
        [1, 5, 7, 3], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
    ];
    let mut faces = Vec::with_capacity(12);
    for q in quads {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    Mesh { vertices, faces }
}

fn cylinder_mesh(center: [f64; 3], radius: f64, height: f64) -> Mesh {
    const SEGMENTS: usize = 16;
    let mut vertices = Vec::new();
    let (y0, y1) = (center[1] - height / 2.0, center[1] + height / 2.0);
    for i in 0..SEGMENTS {
        let a = 2.0 * std::f64::consts::PI * i as f64 / SEGMENTS as f64;
        let (s, c) = a.sin_cos();
        vertices.push([center[0] + radius * c, y0, center[2] + radius * s]);
        vertices.push([center[0] + radius * c, y1, center[2] + radius * s]);
    }
    let bottom_center = vertices.len();
    vertices.push([center[0], y0, center[2]]);
    let top_center = vertices.len();
    vertices.push([center[0], y1, center[2]]);

    let mut faces = Vec::new();
    for i in 0..SEGMENTS {
        let j = (i + 1) % SEGMENTS;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        faces.push([b0, b1, t1]);
        faces.push([b0, t1, t0]);
        faces.push([bottom_center, b1, b0]);
        faces.push([top_center, t0, t1]);
    }
    Mesh { vertices, faces }
}

fn sphere_mesh(center: [f64; 3], radius: f64) -> Mesh {
    const RINGS: usize = 8;
    const SEGMENTS: usize = 12;
    let mut vertices = Vec::new();
    for r in 0..=RINGS {
        let phi = std::f64::consts::PI * r as f64 / RINGS as f64;
        for s in 0..SEGMENTS {
            let theta = 2.0 * std::f64::consts::PI * s as f64 / SEGMENTS as f64;
            vertices.push([
                center[0] + radius * phi.sin() * theta.cos(),
                center[1] + radius * phi.cos(),
                center[2] + radius * phi.sin() * theta.sin(),
            ]);
        }
    }
    let mut faces = Vec::new();
    for r in 0..RINGS {
        for s in 0..SEGMENTS {
            let s1 = (s + 1) % SEGMENTS;
            let (a, b) = (r * SEGMENTS + s, r * SEGMENTS + s1);
            let (c, d) = ((r + 1) * SEGMENTS + s, (r + 1) * SEGMENTS + s1);
            if r > 0 {
                faces.push([a, b, d]);
            }
            if r < RINGS - 1 {
                faces.push([a, d, c]);
            }
        }
    }
    Mesh { vertices, faces }
}

impl Primitive {
    fn mesh(&self, size_scale: [f64; 3]) -> Mesh {
        match self {
            Primitive::Box { center, size } => box_mesh(
                *center,
                [size[0] * size_scale[0], size[1] * size_scale[1], size[2] * size_scale[2]],
            ),
            Primitive::Cylinder { center, radius, height } => {
                cylinder_mesh(*center, radius * size_scale[0], height * size_scale[1])
            }
            Primitive::Sphere { center, radius } => sphere_mesh(*center, radius * size_scale[0]),
        }
    }
}

/// Four classes with distinct silhouettes and 2-3 parts each, learnable by a
/// narrow encoder in minutes.
pub fn default_recipes() -> Vec<ShapeRecipe> {
    let leg = |x: f64, z: f64| PartSpec {
        part_id: 1,
        primitive: Primitive::Cylinder { center: [x, 0.25, z], radius: 0.05, height: 0.5 },
    };
    let table = ShapeRecipe {
        class_name: "table".into(),
        parts: vec![
            PartSpec {
                part_id: 0,
                primitive: Primitive::Box { center: [0.0, 0.55, 0.0], size: [1.0, 0.08, 0.7] },
            },
            leg(-0.42, -0.27),
            leg(0.42, -0.27),
            leg(-0.42, 0.27),
            leg(0.42, 0.27),
        ],
        size_jitter: 0.1,
        occlusion_fraction: 0.0,
        background_fraction: 0.0,
    };
    let chair_leg = |x: f64, z: f64| PartSpec {
        part_id: 2,
        primitive: Primitive::Cylinder { center: [x, 0.2, z], radius: 0.04, height: 0.4 },
    };
    let chair = ShapeRecipe {
        class_name: "chair".into(),
        parts: vec![
            PartSpec {
                part_id: 0,
                primitive: Primitive::Box { center: [0.0, 0.42, 0.0], size: [0.5, 0.06, 0.5] },
            },
            PartSpec {
                part_id: 1,
                primitive: Primitive::Box { center: [0.0, 0.75, -0.22], size: [0.5, 0.6, 0.06] },
            },
            chair_leg(-0.2, -0.2),
            chair_leg(0.2, -0.2),
            chair_leg(-0.2, 0.2),
            chair_leg(0.2, 0.2),
        ],
        size_jitter: 0.1,
        occlusion_fraction: 0.0,
        background_fraction: 0.0,
    };
    let lamp = ShapeRecipe {
        class_name: "lamp".into(),
        parts: vec![
            PartSpec {
                part_id: 0,
                primitive: Primitive::Cylinder { center: [0.0, 0.03, 0.0], radius: 0.25, height: 0.06 },
            },
            PartSpec {
                part_id: 1,
                primitive: Primitive::Cylinder { center: [0.0, 0.45, 0.0], radius: 0.03, height: 0.8 },
            },
            PartSpec {
                part_id: 2,
                primitive: Primitive::Sphere { center: [0.0, 0.95, 0.0], radius: 0.2 },
            },
        ],
        size_jitter: 0.1,
        occlusion_fraction: 0.0,
        background_fraction: 0.0,
    };
    let glider = ShapeRecipe {
        class_name: "glider".into(),
        parts: vec![
            PartSpec {
                part_id: 0,
                primitive: Primitive::Box { center: [0.0, 0.5, 0.0], size: [0.2, 0.15, 1.1] },
            },
            PartSpec {
                part_id: 1,
                primitive: Primitive::Box { center: [0.0, 0.5, 0.1], size: [1.3, 0.04, 0.3] },
            },
            PartSpec {
                part_id: 2,
                primitive: Primitive::Box { center: [0.0, 0.65, -0.5], size: [0.04, 0.3, 0.18] },
            },
        ],
        size_jitter: 0.1,
        occlusion_fraction: 0.0,
        background_fraction: 0.0,
    };
    vec![table, chair, lamp, glider]
}

/// Two-class subset for the smallest smoke tests.
pub fn default_recipes_small() -> Vec<ShapeRecipe> {
    default_recipes().into_iter().take(2).collect()
}

fn generate_sample(
    recipe: &ShapeRecipe,
    class_label: usize,
    background_part: usize,
    k_points: usize,
    profile: &DomainProfile,
    source_id: String,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud> {
    // Merge per-part meshes, remembering which part each face belongs to.
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_parts = Vec::new();
    let wobble = |rng: &mut ChaCha8Rng, j: f64| 1.0 + rng.gen_range(-j..=j);
    for part in &recipe.parts {
        let scale = [
            wobble(rng, recipe.size_jitter),
            wobble(rng, recipe.size_jitter),
            wobble(rng, recipe.size_jitter),
        ];
        let mesh = part.primitive.mesh(scale);
        let base = vertices.len();
        vertices.extend_from_slice(&mesh.vertices);
        for f in &mesh.faces {
            faces.push([f[0] + base, f[1] + base, f[2] + base]);
            face_parts.push(part.part_id);
        }
    }
    let mesh = Mesh::new(vertices, faces)?;

    let occlusion = recipe.occlusion_fraction.max(profile.occlusion_fraction);
    let background = recipe.background_fraction.max(profile.background_fraction);
    let n_background = ((k_points as f64) * background).round() as usize;
    let n_surface = k_points - n_background;
    if n_surface == 0 {
        return Err(Error::Config("background fraction leaves no surface points".into()));
    }

    let (cloud, point_faces) = sample_mesh_surface_with_faces(&mesh, n_surface, rng)?;
    let mut points = cloud.points;
    let mut labels: Vec<usize> = point_faces.iter().map(|&f| face_parts[f]).collect();

    // Occlusion: drop the most extreme points along a random direction, then
    // duplicate survivors (with a little smear) to restore the count. The
    // duplicates emulate the uneven density of real scans.
    let n_drop = ((n_surface as f64) * occlusion).round() as usize;
    if n_drop > 0 && n_drop < n_surface {
        let dir = random_unit(rng);
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            let da = dot(points[a], dir);
            let db = dot(points[b], dir);
            db.partial_cmp(&da).unwrap()
        });
        let dropped: Vec<usize> = order[..n_drop].to_vec();
        let mut keep_mask = vec![true; points.len()];
        for &i in &dropped {
            keep_mask[i] = false;
        }
        let kept: Vec<usize> = (0..points.len()).filter(|&i| keep_mask[i]).collect();
        let smear = Normal::new(0.0, 0.01).unwrap();
        for &i in &dropped {
            let src = kept[rng.gen_range(0..kept.len())];
            let mut p = points[src];
            for v in &mut p {
                *v += smear.sample(rng);
            }
            points[i] = p;
            labels[i] = labels[src];
        }
    }

    // Background clutter: uniform points in the inflated bounding box.
    if n_background > 0 {
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for p in &points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..3 {
            let pad = 0.15 * (hi[a] - lo[a]).max(0.1);
            lo[a] -= pad;
            hi[a] += pad;
        }
        for _ in 0..n_background {
            points.push([
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
                rng.gen_range(lo[2]..hi[2]),
            ]);
            labels.push(background_part);
        }
    }

    if profile.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, profile.noise_sigma).unwrap();
        for p in &mut points {
            for v in p.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }

    let cloud = PointCloud::new(points, source_id)?
        .with_class(class_label)
        .with_parts(labels)?;
    normalize_unit_sphere(&cloud)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = dot(v, v).sqrt();
        if n > 1e-3 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Generate `samples_per_class` clouds per recipe under the given profile.
///
/// The label space is profile-independent: `num_parts` is the maximum recipe
/// part count plus one background id (the last), so clean and corrupted
/// datasets over the same recipes can be paired for cross-domain runs.
pub fn generate_dataset(
    recipes: &[ShapeRecipe],
    samples_per_class: usize,
    k_points: usize,
    profile: &DomainProfile,
    seed: u64,
) -> Result<Dataset> {
    if recipes.len() < 2 {
        return Err(Error::Config("need at least 2 recipes".into()));
    }
    if k_points < 64 {
        return Err(Error::Config("k_points must be >= 64".into()));
    }
    profile.validate()?;
    for r in recipes {
        r.validate()?;
    }
    let background_part = recipes.iter().map(|r| r.part_count()).max().unwrap();
    let num_parts = background_part + 1;

    let mut samples = Vec::with_capacity(recipes.len() * samples_per_class);
    for (class, recipe) in recipes.iter().enumerate() {
        let mut r = rng::stream_indexed(seed, &format!("datagen/{}/{}", profile.name, recipe.class_name), class as u64);
        for s in 0..samples_per_class {
            let source_id = format!("{}_{}_{:04}", recipe.class_name, profile.name, s);
            samples.push(generate_sample(
                recipe,
                class,
                background_part,
                k_points,
                profile,
                source_id,
                &mut r,
            )?);
        }
    }
    let parts_per_class = recipes
        .iter()
        .map(|r| {
            let mut ids: Vec<usize> = (0..r.part_count()).collect();
            ids.push(background_part);
            ids
        })
        .collect();
    let dataset = Dataset {
        samples,
        class_names: recipes.iter().map(|r| r.class_name.clone()).collect(),
        num_parts: Some(num_parts),
        parts_per_class: Some(parts_per_class),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Stratified disjoint train/test split.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::Config(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_names.len()];
    for (i, s) in dataset.samples.iter().enumerate() {
        let c = s
            .class_label
            .ok_or_else(|| Error::Dataset(format!("sample {} is unlabeled", s.source_id)))?;
        by_class[c].push(i);
    }
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {} has {} samples, cannot split",
                dataset.class_names[c],
                members.len()
            )));
        }
        let mut order = members.clone();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream_indexed(seed, "split", c as u64));
        let n_test = ((members.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.clamp(1, members.len() - 1);
        test_idx.extend_from_slice(&order[..n_test]);
        train_idx.extend_from_slice(&order[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| Dataset {
        samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        class_names: dataset.class_names.clone(),
        num_parts: dataset.num_parts,
        parts_per_class: dataset.parts_per_class.clone(),
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}
