//! Shared value types and the pixel/camera conventions used everywhere else.
//!
//! Image coordinates put the origin at the image center with `u` growing to
//! the right and `v` growing upward, so a point with positive `Y` in the
//! camera frame lands in the upper half of the raster. Pixel `(i, j)` is
//! column `i`, row `j`, with row 0 at the top.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masked disparity ranges narrower than this are rejected by normalization.
pub const MIN_DISPARITY_RANGE: f64 = 1e-12;

/// Raster of disparity values with a foreground mask, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "disparity map dimensions must be positive, got {width}x{height}"
            )));
        }
        let n = width * height;
        if values.len() != n || mask.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} map needs {n} entries, got {} values and {} mask entries",
                values.len(),
                mask.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "disparity values must be finite".into(),
            ));
        }
        Ok(DisparityMap {
            width,
            height,
            values,
            mask,
        })
    }

    /// Map with every pixel in the foreground.
    pub fn fully_masked(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(width, height, values, mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.mask[j * self.width + i]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Row-major indices of the foreground pixels.
    pub fn masked_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| m.then_some(k))
    }

    /// Replaces the values, keeping dimensions and mask.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, values, self.mask.clone())
    }

    /// Minimum and maximum over the foreground.
    pub fn masked_range(&self) -> Option<(f64, f64)> {
        self.masked_indices()
            .map(|k| self.values[k])
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// Min-max normalization of the foreground to `[0, 1]`; background pixels are
/// zeroed and never read.
pub fn normalize_disparity(raw: &DisparityMap) -> Result<DisparityMap> {
    let (lo, hi) = raw.masked_range().ok_or(Error::EmptyMask)?;
    let range = hi - lo;
    if range < MIN_DISPARITY_RANGE {
        return Err(Error::DegenerateRange { range });
    }
    let values = raw
        .values
        .iter()
        .zip(&raw.mask)
        .map(|(&v, &m)| {
            if !m || v == lo {
                0.0
            } else if v == hi {
                1.0
            } else {
                ((v - lo) / range).clamp(0.0, 1.0)
            }
        })
        .collect();
    raw.with_values(values)
}

/// Inverse-depth affine parameters, field of view and axial translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub s: f64,
    pub t: f64,
    #[serde(rename = "fov_rad")]
    pub fov: f64,
    pub z_t: f64,
}

impl ProjectionParams {
    pub fn new(s: f64, t: f64, fov: f64, z_t: f64) -> Result<Self> {
        let p = ProjectionParams { s, t, fov, z_t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.t.is_finite() && self.z_t.is_finite()) {
            return Err(Error::InvalidInput(
                "projection parameters must be finite".into(),
            ));
        }
        check_fov(self.fov)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.s, self.t, self.fov, self.z_t]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ProjectionParams {
            s: a[0],
            t: a[1],
            fov: a[2],
            z_t: a[3],
        }
    }

    /// Euclidean distance in `(s, t, fov [rad], z_t)` space.
    pub fn distance(&self, other: &ProjectionParams) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_fov(fov: f64) -> Result<()> {
    if fov.is_finite() && fov > 0.0 && fov < std::f64::consts::PI {
        Ok(())
    } else {
        Err(Error::InvalidFov(fov))
    }
}

/// Focal length in pixels for a field of view spanning the image diagonal.
pub fn focal_length(fov: f64, width: usize, height: usize) -> Result<f64> {
    check_fov(fov)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(
            "image dimensions must be positive".into(),
        ));
    }
    let diagonal = (width as f64).hypot(height as f64);
    Ok(diagonal / (2.0 * (fov / 2.0).tan()))
}

/// Centered image coordinates of the center of pixel `(i, j)`.
pub fn pixel_to_image_coords(i: usize, j: usize, width: usize, height: usize) -> (f64, f64) {
    debug_assert!(i < width && j < height);
    let u = (i as f64 + 0.5) - width as f64 / 2.0;
    let v = height as f64 / 2.0 - (j as f64 + 0.5);
    (u, v)
}

/// Pixel whose center is nearest to image coordinates `(u, v)`, if inside.
pub fn image_coords_to_pixel(
    u: f64,
    v: f64,
    width: usize,
    height: usize,
) -> Option<(usize, usize)> {
    let x = (u + width as f64 / 2.0).floor();
    let y = (height as f64 / 2.0 - v).floor();
    if x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64 {
        Some((x as usize, y as usize))
    } else {
        None
    }
}

/// Ideal pinhole camera looking down `+Z` of its own frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pinhole {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Pinhole {
    pub fn new(fov: f64, width: usize, height: usize) -> Result<Self> {
        Ok(Pinhole {
            focal: focal_length(fov, width, height)?,
            width,
            height,
        })
    }

    /// Pixel hit by a camera-frame point; `None` when behind `min_depth` or
    /// outside the raster.
    pub fn pixel_of(&self, x: f64, y: f64, z: f64, min_depth: f64) -> Option<(usize, usize)> {
        if z.is_nan() || z < min_depth {
            return None;
        }
        image_coords_to_pixel(
            self.focal * x / z,
            self.focal * y / z,
            self.width,
            self.height,
        )
    }
}

/// Where a point came from in the refinement pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    InitialVisible,
    InitialOccluded,
    Projected,
}

impl Tag {
    pub fn code(self) -> u8 {
        match self {
            Tag::InitialVisible => 0,
            Tag::InitialOccluded => 1,
            Tag::Projected => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Tag> {
        match code {
            0 => Some(Tag::InitialVisible),
            1 => Some(Tag::InitialOccluded),
            2 => Some(Tag::Projected),
            _ => None,
        }
    }
}

/// Point set in the object frame with optional per-point provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    tags: Option<Vec<Tag>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        check_finite(&points)?;
        Ok(PointCloud { points, tags: None })
    }

    pub fn with_tags(points: Vec<Point3<f64>>, tags: Vec<Tag>) -> Result<Self> {
        check_finite(&points)?;
        if tags.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} tags for {} points",
                tags.len(),
                points.len()
            )));
        }
        Ok(PointCloud {
            points,
            tags: Some(tags),
        })
    }

    /// Every point gets the same tag.
    pub fn uniformly_tagged(points: Vec<Point3<f64>>, tag: Tag) -> Result<Self> {
        let tags = vec![tag; points.len()];
        Self::with_tags(points, tags)
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn tags(&self) -> Option<&[Tag]> {
        self.tags.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn retagged(mut self, tag: Tag) -> Self {
        self.tags = Some(vec![tag; self.points.len()]);
        self
    }

    pub fn untagged(mut self) -> Self {
        self.tags = None;
        self
    }

    /// Subset by index, preserving order and tags.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&k| self.points[k]).collect(),
            tags: self
                .tags
                .as_ref()
                .map(|tags| indices.iter().map(|&k| tags[k]).collect()),
        }
    }

    /// Concatenation. Tags survive only if both sides carry them.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let tags = match (&self.tags, &other.tags) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        PointCloud { points, tags }
    }

    pub fn count_tag(&self, tag: Tag) -> usize {
        self.tags
            .as_ref()
            .map_or(0, |tags| tags.iter().filter(|&&t| t == tag).count())
    }
}

fn check_finite(points: &[Point3<f64>]) -> Result<()> {
    if points
        .iter()
        .all(|p| p.coords.iter().all(|c| c.is_finite()))
    {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "point coordinates must be finite".into(),
        ))
    }
}

/// Camera and tolerances used for visibility splitting and occlusion culling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub render_width: usize,
    pub render_height: usize,
    pub vis_fov: f64,
    /// Distance of the camera from the object origin along `-Z`.
    pub camera_offset: f64,
    pub epsilon_vis: f64,
    pub dilation_radius: usize,
    pub epsilon_occ: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            render_width: 256,
            render_height: 256,
            vis_fov: 50f64.to_radians(),
            camera_offset: 2.0,
            epsilon_vis: 0.01,
            dilation_radius: 1,
            epsilon_occ: 0.01,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.render_width < 8 || self.render_height < 8 {
            return Err(Error::InvalidInput(format!(
                "render dimensions must be at least 8, got {}x{}",
                self.render_width, self.render_height
            )));
        }
        check_fov(self.vis_fov)?;
        for (name, v) in [
            ("camera_offset", self.camera_offset),
            ("epsilon_vis", self.epsilon_vis),
            ("epsilon_occ", self.epsilon_occ),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn map(values: Vec<f64>) -> DisparityMap {
        let n = values.len();
        DisparityMap::fully_masked(n, 1, values).unwrap()
    }

    #[test]
    fn normalize_rescales_to_unit_range() {
        let out = normalize_disparity(&map(vec![2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_keeps_normalized_maps() {
        let m = map(vec![0.0, 0.25, 1.0]);
        assert_eq!(normalize_disparity(&m).unwrap(), m);
    }

    #[test]
    fn normalize_rejects_constant_maps() {
        let err = normalize_disparity(&map(vec![7.0; 3])).unwrap_err();
        assert!(matches!(err, Error::DegenerateRange { .. }));
    }

    #[test]
    fn normalize_ignores_background() {
        let m = DisparityMap::new(
            2,
            2,
            vec![100.0, 1.0, 3.0, -5.0],
            vec![false, true, true, false],
        )
        .unwrap();
        let out = normalize_disparity(&m).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(out.mask(), m.mask());
    }

    #[test]
    fn normalize_needs_a_foreground() {
        let m = DisparityMap::new(1, 2, vec![1.0, 2.0], vec![false, false]).unwrap();
        assert!(matches!(normalize_disparity(&m), Err(Error::EmptyMask)));
    }

    #[test]
    fn map_rejects_bad_shapes() {
        assert!(DisparityMap::new(0, 1, vec![], vec![]).is_err());
        assert!(matches!(
            DisparityMap::new(2, 2, vec![0.0; 3], vec![true; 4]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(DisparityMap::new(1, 1, vec![f64::NAN], vec![true]).is_err());
    }

    #[test]
    fn focal_length_examples() {
        let side = 2f64.sqrt();
        // diagonal 2 needs a non-integer side; check the formula directly
        assert!((side.hypot(side) / (2.0 * (PI / 4.0).tan()) - 1.0).abs() < 1e-15);
        assert!((focal_length(PI / 2.0, 3, 4).unwrap() - 2.5).abs() < 1e-12);
        let f = focal_length(PI / 3.0, 100, 100).unwrap();
        assert!((f - 122.47448713915891).abs() < 1e-9, "{f}");
    }

    #[test]
    fn focal_length_rejects_bad_fov() {
        for fov in [0.0, -0.1, PI, 4.0, f64::NAN] {
            assert!(matches!(focal_length(fov, 4, 4), Err(Error::InvalidFov(_))));
        }
    }

    #[test]
    fn pixel_coordinates() {
        assert_eq!(pixel_to_image_coords(0, 0, 2, 2), (-0.5, 0.5));
        assert_eq!(pixel_to_image_coords(1, 1, 3, 3), (0.0, 0.0));
        assert_eq!(pixel_to_image_coords(3, 0, 4, 4), (1.5, 1.5));
    }

    #[test]
    fn pixel_grid_is_centered() {
        for (w, h) in [(1, 1), (2, 3), (7, 4), (16, 9)] {
            let (mut su, mut sv) = (0.0, 0.0);
            for j in 0..h {
                for i in 0..w {
                    let (u, v) = pixel_to_image_coords(i, j, w, h);
                    su += u;
                    sv += v;
                    assert_eq!(image_coords_to_pixel(u, v, w, h), Some((i, j)));
                }
            }
            assert_eq!((su, sv), (0.0, 0.0));
        }
    }

    #[test]
    fn upward_points_land_in_top_rows() {
        let cam = Pinhole::new(PI / 2.0, 8, 8).unwrap();
        let (_, j) = cam.pixel_of(0.0, 0.5, 1.0, 1e-6).unwrap();
        assert!(j < 4);
        assert_eq!(cam.pixel_of(0.0, 0.0, -1.0, 1e-6), None);
    }

    #[test]
    fn params_validation() {
        assert!(ProjectionParams::new(1.0, 0.0, 1.0, 0.0).is_ok());
        assert!(ProjectionParams::new(1.0, 0.0, PI, 0.0).is_err());
        assert!(ProjectionParams::new(f64::INFINITY, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn params_wire_format() {
        let p = ProjectionParams::new(1.5, 0.25, 0.75, -2.0).unwrap();
        let json = serde_json::to_value(p).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"s": 1.5, "t": 0.25, "fov_rad": 0.75, "z_t": -2.0})
        );
    }

    #[test]
    fn cloud_tags_must_match() {
        let pts = vec![Point3::origin(); 2];
        assert!(PointCloud::with_tags(pts.clone(), vec![Tag::Projected]).is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
        let c = PointCloud::uniformly_tagged(pts, Tag::Projected).unwrap();
        assert_eq!(c.count_tag(Tag::Projected), 2);
    }

    #[test]
    fn default_view_is_valid() {
        ViewConfig::default().validate().unwrap();
        let bad = ViewConfig {
            render_width: 4,
            ..ViewConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_monotone(values in prop::collection::vec(-1e3f64..1e3, 2..40)) {
            let m = map(values.clone());
            let Ok(once) = normalize_disparity(&m) else {
                return Ok(());
            };
            prop_assert_eq!(&once, &normalize_disparity(&once).unwrap());
            prop_assert!(once.values().iter().all(|v| (0.0..=1.0).contains(v)));
            for a in 0..values.len() {
                for b in 0..values.len() {
                    if values[a] < values[b] {
                        prop_assert!(once.values()[a] <= once.values()[b]);
                    }
                }
            }
        }

        #[test]
        fn focal_length_decreases_with_fov(a in 0.01f64..3.1, b in 0.01f64..3.1) {
            prop_assume!(a < b);
            prop_assert!(focal_length(a, 64, 48).unwrap() > focal_length(b, 64, 48).unwrap());
        }
    }
}
