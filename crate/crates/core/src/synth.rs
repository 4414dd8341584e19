//! Synthetic scenes with exact ground-truth disparity, plus the disparity-noise
//! and initialization-distance sensitivity sweeps.
//!
//! Shapes are built from analytic primitives, normalized to a unit bounding-box
//! diagonal centered at the origin, and ray-cast through every pixel center of
//! the true camera. The resulting disparity is exact at pixel centers, so
//! lifting it with the recorded true parameters reproduces the hit points to
//! rounding error.

use std::io::Write;
use std::path::Path;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::{run_restarts, sample_inits, FitConfig, RestartOutcome};
use crate::geometry::{
    normalize_disparity, pixel_to_image_coords, DisparityMap, Pinhole, PointCloud,
    ProjectionParams, Tag, ViewConfig,
};
use crate::metrics::chamfer;
use crate::projection::{project_disparity, project_feasible, PixelSet, EPSILON_Z};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShapeKind {
    /// Square plane tilted about the X axis.
    PlaneGrid {
        tilt_deg: f64,
    },
    Sphere,
    Box {
        size: [f64; 3],
    },
    /// Box seat on four thin legs.
    Stool {
        seat: [f64; 3],
        leg_height: f64,
        leg_width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub shape: ShapeKind,
    /// Ground-truth surface samples.
    pub sample_count: usize,
    /// Object rotation about X then Y, degrees.
    pub rotation_deg: [f64; 2],
    pub fov_rad: f64,
    /// Distance from the camera to the object origin; the true `z_t` is its
    /// negation.
    pub camera_distance: f64,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            shape: ShapeKind::Stool {
                seat: [1.0, 1.0, 0.15],
                leg_height: 0.9,
                leg_width: 0.12,
            },
            sample_count: 20_000,
            rotation_deg: [25.0, 35.0],
            fov_rad: 60f64.to_radians(),
            camera_distance: 1.6,
            width: 64,
            height: 64,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.sample_count < 100 {
            return bad(format!(
                "sample_count must be at least 100, got {}",
                self.sample_count
            ));
        }
        if self.width < 2 || self.height < 2 {
            return bad("scene resolution must be at least 2x2".into());
        }
        if !(self.camera_distance.is_finite() && self.camera_distance > 0.0) {
            return bad("camera_distance must be positive".into());
        }
        ProjectionParams::new(1.0, 0.0, self.fov_rad, 0.0)?;
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        match &self.shape {
            ShapeKind::PlaneGrid { .. } => {
                let n = self.rotation() * Vector3::z();
                if n.z.abs() > 1.0 - 1e-9 {
                    return bad(
                        "plane faces the camera head-on; its disparity would be constant".into(),
                    );
                }
            }
            ShapeKind::Sphere => {}
            ShapeKind::Box { size } => {
                if !positive(size) {
                    return bad("box sizes must be positive".into());
                }
            }
            ShapeKind::Stool {
                seat,
                leg_height,
                leg_width,
            } => {
                if !positive(seat) || !positive(&[*leg_height, *leg_width]) {
                    return bad("stool dimensions must be positive".into());
                }
                if 2.0 * leg_width > seat[0].min(seat[1]) {
                    return bad("stool legs are wider than the seat".into());
                }
            }
        }
        Ok(())
    }

    fn rotation(&self) -> Rotation3<f64> {
        let tilt = match self.shape {
            ShapeKind::PlaneGrid { tilt_deg } => {
                Rotation3::from_axis_angle(&Vector3::x_axis(), tilt_deg.to_radians())
            }
            _ => Rotation3::identity(),
        };
        Rotation3::from_axis_angle(&Vector3::y_axis(), self.rotation_deg[1].to_radians())
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.rotation_deg[0].to_radians())
            * tilt
    }

    pub fn true_z_t(&self) -> f64 {
        -self.camera_distance
    }

    /// View configuration that places the visibility camera at the scene camera.
    pub fn view(&self) -> ViewConfig {
        ViewConfig {
            render_width: self.width.max(8),
            render_height: self.height.max(8),
            vis_fov: self.fov_rad,
            camera_offset: self.camera_distance,
            ..ViewConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Primitive {
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
    Cuboid {
        center: Point3<f64>,
        rotation: Rotation3<f64>,
        half: Vector3<f64>,
    },
    Rect {
        center: Point3<f64>,
        rotation: Rotation3<f64>,
        half: [f64; 2],
    },
}

impl Primitive {
    fn corners(&self) -> Vec<Point3<f64>> {
        match *self {
            Primitive::Sphere { center, radius } => vec![
                center - Vector3::repeat(radius),
                center + Vector3::repeat(radius),
            ],
            Primitive::Cuboid {
                center,
                rotation,
                half,
            } => (0..8)
                .map(|k| {
                    let sign = |b: usize| if k & b == 0 { -1.0 } else { 1.0 };
                    center
                        + rotation
                            * Vector3::new(sign(1) * half.x, sign(2) * half.y, sign(4) * half.z)
                })
                .collect(),
            Primitive::Rect {
                center,
                rotation,
                half,
            } => (0..4)
                .map(|k| {
                    let sign = |b: usize| if k & b == 0 { -1.0 } else { 1.0 };
                    center + rotation * Vector3::new(sign(1) * half[0], sign(2) * half[1], 0.0)
                })
                .collect(),
        }
    }

    fn transformed(&self, rot: &Rotation3<f64>, offset: &Vector3<f64>, scale: f64) -> Primitive {
        let place = |c: &Point3<f64>| Point3::from((rot * c.coords + offset) * scale);
        match *self {
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: place(&center),
                radius: radius * scale,
            },
            Primitive::Cuboid {
                center,
                rotation,
                half,
            } => Primitive::Cuboid {
                center: place(&center),
                rotation: rot * rotation,
                half: half * scale,
            },
            Primitive::Rect {
                center,
                rotation,
                half,
            } => Primitive::Rect {
                center: place(&center),
                rotation: rot * rotation,
                half: [half[0] * scale, half[1] * scale],
            },
        }
    }

    fn area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Primitive::Cuboid { half, .. } => {
                8.0 * (half.x * half.y + half.y * half.z + half.x * half.z)
            }
            Primitive::Rect { half, .. } => 4.0 * half[0] * half[1],
        }
    }

    /// Smallest positive ray parameter of an intersection.
    fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [(-b - root) / a, (-b + root) / a]
                    .into_iter()
                    .find(|&l| l > 0.0)
            }
            Primitive::Cuboid {
                center,
                rotation,
                half,
            } => {
                let o = rotation.inverse() * (origin - center);
                let d = rotation.inverse() * dir;
                let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
                for c in 0..3 {
                    if d[c].abs() < 1e-300 {
                        if o[c].abs() > half[c] {
                            return None;
                        }
                        continue;
                    }
                    let (t1, t2) = ((-half[c] - o[c]) / d[c], (half[c] - o[c]) / d[c]);
                    near = near.max(t1.min(t2));
                    far = far.min(t1.max(t2));
                }
                if near > far || far <= 0.0 {
                    None
                } else if near > 0.0 {
                    Some(near)
                } else {
                    Some(far)
                }
            }
            Primitive::Rect {
                center,
                rotation,
                half,
            } => {
                let o = rotation.inverse() * (origin - center);
                let d = rotation.inverse() * dir;
                if d.z.abs() < 1e-300 {
                    return None;
                }
                let l = -o.z / d.z;
                let hit = o + d * l;
                (l > 0.0 && hit.x.abs() <= half[0] && hit.y.abs() <= half[1]).then_some(l)
            }
        }
    }

    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> Point3<f64> {
        let mut unit = || rng.random_range(-1.0..=1.0);
        match *self {
            Primitive::Sphere { center, radius } => {
                let n: Vector3<f64> = loop {
                    let v = Vector3::new(
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    );
                    if v.norm() > 1e-12 {
                        break v.normalize();
                    }
                };
                center + n * radius
            }
            Primitive::Cuboid {
                center,
                rotation,
                half,
            } => {
                let faces = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (k, a) in faces.iter().enumerate() {
                    if pick < *a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut local = Vector3::zeros();
                for c in 0..3 {
                    local[c] = if c == axis {
                        side * half[c]
                    } else {
                        rng.random_range(-1.0..=1.0) * half[c]
                    };
                }
                center + rotation * local
            }
            Primitive::Rect {
                center,
                rotation,
                half,
            } => {
                let (a, b) = (unit(), unit());
                center + rotation * Vector3::new(a * half[0], b * half[1], 0.0)
            }
        }
    }
}

/// Analytic shape in the object frame, normalized to a unit bounding-box
/// diagonal centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    primitives: Vec<Primitive>,
}

impl Shape {
    pub fn from_spec(spec: &SceneSpec) -> Result<Shape> {
        spec.validate()?;
        let raw = match &spec.shape {
            ShapeKind::PlaneGrid { .. } => vec![Primitive::Rect {
                center: Point3::origin(),
                rotation: Rotation3::identity(),
                half: [0.5, 0.5],
            }],
            ShapeKind::Sphere => vec![Primitive::Sphere {
                center: Point3::origin(),
                radius: 0.5,
            }],
            ShapeKind::Box { size } => vec![Primitive::Cuboid {
                center: Point3::origin(),
                rotation: Rotation3::identity(),
                half: Vector3::from(*size) / 2.0,
            }],
            ShapeKind::Stool {
                seat,
                leg_height,
                leg_width,
            } => {
                let mut parts = vec![Primitive::Cuboid {
                    center: Point3::new(0.0, leg_height + seat[2] / 2.0, 0.0),
                    rotation: Rotation3::identity(),
                    half: Vector3::new(seat[0], seat[2], seat[1]) / 2.0,
                }];
                let (dx, dz) = ((seat[0] - leg_width) / 2.0, (seat[1] - leg_width) / 2.0);
                for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                    parts.push(Primitive::Cuboid {
                        center: Point3::new(sx * dx, leg_height / 2.0, sz * dz),
                        rotation: Rotation3::identity(),
                        half: Vector3::new(*leg_width, *leg_height, *leg_width) / 2.0,
                    });
                }
                parts
            }
        };
        let rot = spec.rotation();
        let rotated: Vec<_> = raw
            .iter()
            .map(|p| p.transformed(&rot, &Vector3::zeros(), 1.0))
            .collect();
        let (lo, hi) = bounding_box(rotated.iter().flat_map(|p| p.corners()));
        let diag = (hi - lo).norm();
        let center = nalgebra::center(&lo, &hi);
        let primitives = rotated
            .iter()
            .map(|p| p.transformed(&Rotation3::identity(), &-center.coords, 1.0 / diag))
            .collect();
        Ok(Shape { primitives })
    }

    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        bounding_box(self.primitives.iter().flat_map(|p| p.corners()))
    }

    /// Nearest ray parameter over all primitives.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(origin, dir))
            .min_by(f64::total_cmp)
    }

    /// Area-weighted uniform samples over the primitive surfaces.
    pub fn sample_surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
        let areas: Vec<f64> = self.primitives.iter().map(Primitive::area).collect();
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut pick = rng.random_range(0.0..total);
                let mut chosen = self.primitives.len() - 1;
                for (k, a) in areas.iter().enumerate() {
                    if pick < *a {
                        chosen = k;
                        break;
                    }
                    pick -= a;
                }
                self.primitives[chosen].sample_surface(rng)
            })
            .collect()
    }
}

fn bounding_box(points: impl Iterator<Item = Point3<f64>>) -> (Point3<f64>, Point3<f64>) {
    points.fold(
        (
            Point3::from(Vector3::repeat(f64::INFINITY)),
            Point3::from(Vector3::repeat(f64::NEG_INFINITY)),
        ),
        |(lo, hi), p| (lo.inf(&p), hi.sup(&p)),
    )
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    /// Surface samples of the whole object.
    pub gt_cloud: PointCloud,
    /// Normalized disparity, exact at pixel centers.
    pub disparity: DisparityMap,
    pub true_params: ProjectionParams,
    /// The exact surface points seen through each foreground pixel center.
    pub visible_points: PointCloud,
}

/// Builds the scene described by `spec`; deterministic given `spec.seed`.
pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let shape = Shape::from_spec(spec)?;
    let z_t = spec.true_z_t();
    let (lo, _) = shape.bounding_box();
    if lo.z - z_t <= EPSILON_Z {
        return Err(Error::InfeasibleScene(format!(
            "camera at z = {z_t} is not in front of the object (nearest z = {})",
            lo.z
        )));
    }
    let camera = Pinhole::new(spec.fov_rad, spec.width, spec.height)?;
    let origin = Point3::new(0.0, 0.0, z_t);
    let (w, h) = (spec.width, spec.height);
    let mut inverse_depth = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    for j in 0..h {
        for i in 0..w {
            let (u, v) = pixel_to_image_coords(i, j, w, h);
            // unit z component makes the ray parameter the camera depth
            let dir = Vector3::new(u / camera.focal, v / camera.focal, 1.0);
            if let Some(z) = shape.intersect(&origin, &dir) {
                inverse_depth[j * w + i] = 1.0 / z;
                mask[j * w + i] = true;
            }
        }
    }
    let raw = DisparityMap::new(w, h, inverse_depth, mask)?;
    let (near_lo, near_hi) = raw
        .masked_range()
        .ok_or_else(|| Error::InfeasibleScene("object does not appear in the image".into()))?;
    let disparity = normalize_disparity(&raw).map_err(|e| match e {
        Error::DegenerateRange { .. } => {
            Error::InfeasibleScene("rendered disparity is constant".into())
        }
        other => other,
    })?;
    // raw values are 1/Z, so normalization folds into s and t exactly
    let true_params = ProjectionParams::new(near_hi - near_lo, near_lo, spec.fov_rad, z_t)?;
    let visible_points = project_disparity(&disparity, &true_params)
        .map_err(|e| Error::InfeasibleScene(e.to_string()))?
        .retagged(Tag::InitialVisible);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gt_cloud = PointCloud::new(shape.sample_surface(spec.sample_count, &mut rng))?;
    Ok(SyntheticScene {
        spec: spec.clone(),
        gt_cloud,
        disparity,
        true_params,
        visible_points,
    })
}

/// Adds independent uniform noise in `[-amplitude, amplitude]` to every
/// foreground value and clamps to `[0, 1]`.
pub fn add_uniform_noise(map: &DisparityMap, amplitude: f64, seed: u64) -> Result<DisparityMap> {
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise amplitude must be non-negative, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(map.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = map
        .values()
        .iter()
        .zip(map.mask())
        .map(|(&v, &m)| {
            if m {
                (v + rng.random_range(-amplitude..=amplitude)).clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    map.with_values(values)
}

/// Uniformly random direction in parameter space.
pub fn random_direction(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.map(|x| x / norm);
        }
    }
}

/// Parameters at Euclidean distance `distance` from `center` along `dir`,
/// with fov kept inside `(0, pi)`.
pub fn offset_params(center: &ProjectionParams, dir: [f64; 4], distance: f64) -> ProjectionParams {
    let c = center.to_array();
    let mut p = ProjectionParams::from_array(std::array::from_fn(|k| c[k] + distance * dir[k]));
    p.fov = p.fov.clamp(1e-3, std::f64::consts::PI - 1e-3);
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub value: f64,
    pub seed: u64,
    /// The swept quantity: Chamfer distance for noise sweeps, final fitting
    /// loss for initialization sweeps.
    pub metric: f64,
    pub fit_loss: f64,
    /// Chamfer distance from the lifted ground-truth disparity to the exact
    /// visible surface points.
    pub chamfer_visible: f64,
    /// Chamfer distance from the lifted ground-truth disparity to the full
    /// ground-truth cloud.
    pub chamfer_full: f64,
    pub param_error: f64,
    pub params: ProjectionParams,
    /// False when every restart ended with non-positive inverse depth; the
    /// loss then includes the penalty and the Chamfer terms use the
    /// feasible pixels only.
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scene: SceneSpec,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sweep: String,
    pub metric: String,
    pub records: Vec<SweepRecord>,
    /// Median of `metric` per swept value, in sweep order.
    pub medians: Vec<[f64; 2]>,
    pub true_params: ProjectionParams,
    pub config: SweepConfig,
}

impl SweepReport {
    fn assemble(
        sweep: &str,
        metric: &str,
        records: Vec<SweepRecord>,
        true_params: ProjectionParams,
        config: SweepConfig,
    ) -> Self {
        let medians = config
            .values
            .iter()
            .map(|&v| {
                let cell: Vec<f64> = records
                    .iter()
                    .filter(|r| r.value == v)
                    .map(|r| r.metric)
                    .collect();
                [v, median(&cell)]
            })
            .collect();
        SweepReport {
            sweep: sweep.into(),
            metric: metric.into(),
            records,
            medians,
            true_params,
            config,
        }
    }

    pub fn median_values(&self) -> Vec<f64> {
        self.medians.iter().map(|m| m[1]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = csv::Writer::from_writer(file);
        out.write_record([
            "value",
            "seed",
            "metric",
            "fit_loss",
            "chamfer_visible",
            "chamfer_full",
            "param_error",
            "s",
            "t",
            "fov_rad",
            "z_t",
        ])?;
        for r in &self.records {
            let row = [
                r.value,
                r.seed as f64,
                r.metric,
                r.fit_loss,
                r.chamfer_visible,
                r.chamfer_full,
                r.param_error,
                r.params.s,
                r.params.t,
                r.params.fov,
                r.params.z_t,
            ];
            out.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn record(
    scene: &SyntheticScene,
    value: f64,
    seed: u64,
    outcome: &RestartOutcome,
    metric_is_loss: bool,
) -> Result<SweepRecord> {
    let (points, _) = project_feasible(&PixelSet::from_map(&scene.disparity)?, &outcome.params)?;
    let (chamfer_visible, chamfer_full) = if points.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let lifted = PointCloud::new(points)?;
        (
            chamfer(&lifted, &scene.visible_points)?,
            chamfer(&lifted, &scene.gt_cloud)?,
        )
    };
    Ok(SweepRecord {
        value,
        seed,
        metric: if metric_is_loss {
            outcome.loss
        } else {
            chamfer_visible
        },
        fit_loss: outcome.loss,
        chamfer_visible,
        chamfer_full,
        param_error: outcome.params.distance(&scene.true_params),
        params: outcome.params,
        feasible: outcome.feasible,
    })
}

/// Best feasible restart, or the lowest-loss one when none is feasible.
fn best_outcome(outcomes: Vec<RestartOutcome>) -> RestartOutcome {
    outcomes
        .into_iter()
        .min_by(|a, b| b.feasible.cmp(&a.feasible).then(a.loss.total_cmp(&b.loss)))
        .expect("at least one restart")
}

/// One noise-sweep cell: fit on the perturbed disparity, then lift the clean
/// disparity with the fitted parameters.
pub fn noise_cell(
    scene: &SyntheticScene,
    level: f64,
    seed: u64,
    fit_config: &FitConfig,
) -> Result<SweepRecord> {
    let noisy = add_uniform_noise(&scene.disparity, level, seed)?;
    let config = FitConfig {
        seed,
        ..fit_config.clone()
    };
    let inits = sample_inits(&config, config.restarts);
    let best = best_outcome(run_restarts(
        &noisy,
        &scene.visible_points,
        &config,
        &inits,
    )?);
    record(scene, level, seed, &best, false)
}

pub fn sweep_noise(
    levels: &[f64],
    spec: &SceneSpec,
    fit_config: &FitConfig,
    seeds: &[u64],
) -> Result<SweepReport> {
    if !levels.contains(&0.0) {
        return Err(Error::InvalidInput("noise levels must include 0".into()));
    }
    let scene = make_synthetic_scene(spec)?;
    let cells: Vec<(f64, u64)> = levels
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let records = cells
        .par_iter()
        .map(|&(l, s)| noise_cell(&scene, l, s, fit_config))
        .collect::<Result<Vec<_>>>()?;
    let config = SweepConfig {
        values: levels.to_vec(),
        seeds: seeds.to_vec(),
        scene: spec.clone(),
        fit: fit_config.clone(),
    };
    Ok(SweepReport::assemble(
        "noise",
        "chamfer_visible",
        records,
        scene.true_params,
        config,
    ))
}

/// One initialization-sweep cell. The first restart starts at `distance` from
/// the true parameters in a seeded random direction; any further restarts
/// draw from the config's init ranges.
pub fn init_cell(
    scene: &SyntheticScene,
    distance: f64,
    seed: u64,
    fit_config: &FitConfig,
) -> Result<SweepRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = random_direction(&mut rng);
    let config = FitConfig {
        seed,
        ..fit_config.clone()
    };
    let mut inits = vec![offset_params(&scene.true_params, dir, distance)];
    inits.extend(sample_inits(&config, config.restarts.saturating_sub(1)));
    let best = best_outcome(run_restarts(
        &scene.disparity,
        &scene.visible_points,
        &config,
        &inits,
    )?);
    record(scene, distance, seed, &best, true)
}

pub fn sweep_init(
    distances: &[f64],
    spec: &SceneSpec,
    fit_config: &FitConfig,
    seeds: &[u64],
) -> Result<SweepReport> {
    if distances.is_empty() || distances.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "distances must be sorted ascending".into(),
        ));
    }
    let scene = make_synthetic_scene(spec)?;
    let cells: Vec<(f64, u64)> = distances
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    let records = cells
        .par_iter()
        .map(|&(d, s)| init_cell(&scene, d, s, fit_config))
        .collect::<Result<Vec<_>>>()?;
    let config = SweepConfig {
        values: distances.to_vec(),
        seeds: seeds.to_vec(),
        scene: spec.clone(),
        fit: fit_config.clone(),
    };
    Ok(SweepReport::assemble(
        "init",
        "fit_loss",
        records,
        scene.true_params,
        config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::loss;

    fn spec(shape: ShapeKind) -> SceneSpec {
        SceneSpec {
            shape,
            sample_count: 500,
            width: 48,
            height: 48,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn frontoparallel_plane_is_rejected() {
        let s = SceneSpec {
            rotation_deg: [0.0, 0.0],
            ..spec(ShapeKind::PlaneGrid { tilt_deg: 0.0 })
        };
        assert!(matches!(
            make_synthetic_scene(&s),
            Err(Error::InvalidInput(_))
        ));
        let tilted = SceneSpec {
            rotation_deg: [0.0, 0.0],
            ..spec(ShapeKind::PlaneGrid { tilt_deg: 30.0 })
        };
        let scene = make_synthetic_scene(&tilted).unwrap();
        assert!(scene.disparity.masked_count() > 100);
    }

    #[test]
    fn sphere_silhouette_matches_the_analytic_disc() {
        let s = SceneSpec {
            width: 128,
            height: 128,
            ..spec(ShapeKind::Sphere)
        };
        let scene = make_synthetic_scene(&s).unwrap();
        // unit-diagonal bounding cube: radius = 1 / (2 sqrt 3)
        let radius = 0.5 / 3f64.sqrt();
        let focal = crate::geometry::focal_length(s.fov_rad, s.width, s.height).unwrap();
        let half_angle = (radius / s.camera_distance).asin();
        let disc = std::f64::consts::PI * (focal * half_angle.tan()).powi(2);
        let count = scene.disparity.masked_count() as f64;
        assert!((count - disc).abs() <= 0.05 * disc, "{count} vs {disc}");
    }

    #[test]
    fn scenes_round_trip_exactly() {
        for shape in [
            ShapeKind::Sphere,
            ShapeKind::Box {
                size: [1.0, 0.6, 0.8],
            },
            ShapeKind::PlaneGrid { tilt_deg: 40.0 },
            SceneSpec::default().shape,
        ] {
            let scene = make_synthetic_scene(&spec(shape)).unwrap();
            let gt = scene.gt_cloud.points();
            let (lo, hi) = bounding_box(gt.iter().copied());
            assert!((hi - lo).norm() <= 1.0 + 1e-9);
            assert_eq!(
                loss(
                    &scene.true_params,
                    &scene.disparity,
                    &scene.visible_points,
                    100.0
                )
                .unwrap(),
                0.0
            );
            // visible points lie on the analytic surface
            let shape = Shape::from_spec(&scene.spec).unwrap();
            let origin = Point3::new(0.0, 0.0, scene.true_params.z_t);
            for p in scene.visible_points.points() {
                let dir = (p - origin) / (p.z - origin.z);
                let z = shape.intersect(&origin, &dir).unwrap();
                assert!((z - (p.z - origin.z)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let s = spec(SceneSpec::default().shape);
        let a = make_synthetic_scene(&s).unwrap();
        let b = make_synthetic_scene(&s).unwrap();
        assert_eq!(a.gt_cloud, b.gt_cloud);
        assert_eq!(a.disparity, b.disparity);
        assert_eq!(a.true_params, b.true_params);
    }

    #[test]
    fn camera_inside_the_object_is_infeasible() {
        let s = SceneSpec {
            camera_distance: 0.1,
            ..spec(ShapeKind::Sphere)
        };
        assert!(matches!(
            make_synthetic_scene(&s),
            Err(Error::InfeasibleScene(_))
        ));
    }

    #[test]
    fn zero_noise_is_identity() {
        let scene = make_synthetic_scene(&spec(ShapeKind::Sphere)).unwrap();
        assert_eq!(
            add_uniform_noise(&scene.disparity, 0.0, 3).unwrap(),
            scene.disparity
        );
    }

    #[test]
    fn noise_is_centered() {
        let n = 100 * 100;
        let map = DisparityMap::fully_masked(100, 100, vec![0.5; n]).unwrap();
        let a = 0.05;
        let noisy = add_uniform_noise(&map, a, 17).unwrap();
        let mean = noisy.values().iter().map(|v| v - 0.5).sum::<f64>() / n as f64;
        // three standard errors of a uniform(-a, a) mean over n draws
        let bound = 3.0 * (a / 3f64.sqrt()) / (n as f64).sqrt();
        assert!(mean.abs() <= bound, "{mean} > {bound}");
        assert!(noisy
            .values()
            .iter()
            .all(|v| (0.5 - a..=0.5 + a).contains(v)));
    }

    #[test]
    fn noise_respects_the_unit_range() {
        let map = DisparityMap::fully_masked(4, 1, vec![0.0, 0.02, 0.98, 1.0]).unwrap();
        let noisy = add_uniform_noise(&map, 0.3, 1).unwrap();
        assert!(noisy.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn offsets_have_the_requested_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let center = ProjectionParams::new(0.3, 0.5, 1.0, -1.6).unwrap();
        for d in [0.0, 0.1, 0.5, 1.0] {
            let p = offset_params(&center, random_direction(&mut rng), d);
            assert!((p.distance(&center) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
