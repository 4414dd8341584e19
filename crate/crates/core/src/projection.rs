//! Disparity to point-cloud lifting and its inverse renderer.
//!
//! A normalized disparity `d` maps to inverse depth `1/Z = s*d + t`. The pixel
//! center `(u, v)` is back-projected through a pinhole with focal length from
//! the diagonal field of view, and the result is shifted along the viewing
//! axis by `z_t` into the object frame.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{
    pixel_to_image_coords, DisparityMap, Pinhole, PointCloud, ProjectionParams, Tag,
};

/// Floor on inverse depth below which a pixel is considered infeasible.
pub const EPSILON_Z: f64 = 1e-6;

pub fn disparity_to_inverse_depth(d: f64, s: f64, t: f64) -> Result<f64> {
    let q = s * d + t;
    if q > EPSILON_Z {
        Ok(q)
    } else {
        Err(Error::NonPositiveDepth { count: 1 })
    }
}

/// One foreground pixel with its centered image coordinates and disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedPixel {
    pub index: usize,
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

/// Foreground pixels of a map in row-major order, with the geometry needed to
/// lift them under any parameter vector.
#[derive(Debug, Clone)]
pub struct PixelSet {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<MaskedPixel>,
}

impl PixelSet {
    pub fn from_map(map: &DisparityMap) -> Result<Self> {
        let (w, h) = (map.width(), map.height());
        let pixels: Vec<_> = map
            .masked_indices()
            .map(|index| {
                let (u, v) = pixel_to_image_coords(index % w, index / w, w, h);
                MaskedPixel {
                    index,
                    u,
                    v,
                    d: map.values()[index],
                }
            })
            .collect();
        if pixels.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(PixelSet {
            width: w,
            height: h,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn focal(&self, fov: f64) -> Result<f64> {
        crate::geometry::focal_length(fov, self.width, self.height)
    }

    /// Number of pixels whose inverse depth falls at or below [`EPSILON_Z`].
    pub fn infeasible_count(&self, params: &ProjectionParams) -> usize {
        self.pixels
            .iter()
            .filter(|p| params.s * p.d + params.t <= EPSILON_Z)
            .count()
    }

    /// Object-frame position of one pixel, or `None` if infeasible.
    pub fn lift(&self, k: usize, params: &ProjectionParams, focal: f64) -> Option<Point3<f64>> {
        lift_pixel(&self.pixels[k], params, focal)
    }
}

#[inline]
pub(crate) fn lift_pixel(
    px: &MaskedPixel,
    params: &ProjectionParams,
    focal: f64,
) -> Option<Point3<f64>> {
    let q = params.s * px.d + params.t;
    if q <= EPSILON_Z {
        return None;
    }
    let z = 1.0 / q;
    Some(Point3::new(
        px.u / focal * z,
        px.v / focal * z,
        z + params.z_t,
    ))
}

/// Lifts every foreground pixel, failing if any has non-positive inverse depth.
pub fn project_disparity(map: &DisparityMap, params: &ProjectionParams) -> Result<PointCloud> {
    params.validate()?;
    let pixels = PixelSet::from_map(map)?;
    let focal = pixels.focal(params.fov)?;
    let bad = pixels.infeasible_count(params);
    if bad > 0 {
        return Err(Error::NonPositiveDepth { count: bad });
    }
    let points = (0..pixels.len())
        .map(|k| pixels.lift(k, params, focal).expect("feasibility checked"))
        .collect();
    PointCloud::uniformly_tagged(points, Tag::Projected)
}

/// Lifts only the feasible pixels; returns the points and the pixel indices
/// (into `pixels.pixels`) they came from.
pub fn project_feasible(
    pixels: &PixelSet,
    params: &ProjectionParams,
) -> Result<(Vec<Point3<f64>>, Vec<usize>)> {
    let focal = pixels.focal(params.fov)?;
    let mut points = Vec::with_capacity(pixels.len());
    let mut source = Vec::with_capacity(pixels.len());
    for (k, px) in pixels.pixels.iter().enumerate() {
        if let Some(p) = lift_pixel(px, params, focal) {
            points.push(p);
            source.push(k);
        }
    }
    Ok((points, source))
}

/// Forward-renders a cloud into a disparity map with a nearest-pixel z-buffer.
///
/// Emitted disparities are in the units of `params` (`d = (1/Z - t) / s`), so
/// `project_disparity` applied to the result with the same parameters returns
/// the z-buffer survivors snapped to pixel centers.
pub fn render_disparity(
    cloud: &PointCloud,
    params: &ProjectionParams,
    width: usize,
    height: usize,
) -> Result<DisparityMap> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if params.s == 0.0 {
        return Err(Error::InvalidInput(
            "s must be non-zero to render disparity".into(),
        ));
    }
    let behind = cloud
        .points()
        .iter()
        .filter(|p| {
            let z = p.z - params.z_t;
            z.is_nan() || z < EPSILON_Z
        })
        .count();
    if behind > 0 {
        return Err(Error::PointBehindCamera { count: behind });
    }
    let camera = Pinhole::new(params.fov, width, height)?;
    let mut depth = vec![f64::INFINITY; width * height];
    for p in cloud.points() {
        let z = p.z - params.z_t;
        if let Some((i, j)) = camera.pixel_of(p.x, p.y, z, EPSILON_Z) {
            let slot = &mut depth[j * width + i];
            // strict comparison keeps the earliest point on ties
            if z < *slot {
                *slot = z;
            }
        }
    }
    let mask: Vec<bool> = depth.iter().map(|z| z.is_finite()).collect();
    let values = depth
        .iter()
        .map(|&z| {
            if z.is_finite() {
                (1.0 / z - params.t) / params.s
            } else {
                0.0
            }
        })
        .collect();
    DisparityMap::new(width, height, values, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn params(s: f64, t: f64, fov: f64, z_t: f64) -> ProjectionParams {
        ProjectionParams::new(s, t, fov, z_t).unwrap()
    }

    #[test]
    fn inverse_depth_examples() {
        assert_eq!(disparity_to_inverse_depth(0.5, 1.0, 0.0).unwrap(), 0.5);
        assert!((disparity_to_inverse_depth(0.0, 2.0, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(
            disparity_to_inverse_depth(0.5, -1.0, 0.2),
            Err(Error::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn single_center_pixel() {
        let map = DisparityMap::fully_masked(1, 1, vec![1.0]).unwrap();
        let cloud = project_disparity(&map, &params(1.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(0.0, 0.0, 1.0)]);
        let cloud = project_disparity(&map, &params(1.0, 0.0, 2.0, -1.0)).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(0.0, 0.0, 0.0)]);
        assert_eq!(cloud.tags().unwrap(), &[Tag::Projected]);
    }

    #[test]
    fn two_by_two_matches_scalar_evaluation() {
        // frozen from an independent per-pixel evaluation of the lifting formulas
        let expected = [
            [-0.3214121732666124, 0.3214121732666124, 1.209090909090909],
            [0.1683587574253684, 0.1683587574253684, 0.7761904761904761],
            [-0.5892556509887895, -0.5892556509887895, 1.9666666666666668],
            [0.20797258270192565, -0.20797258270192565, 0.888235294117647],
        ];
        let map = DisparityMap::fully_masked(2, 2, vec![0.5, 1.0, 0.25, 0.8]).unwrap();
        let cloud = project_disparity(&map, &params(2.0, 0.1, PI / 2.0, 0.3)).unwrap();
        assert_eq!(cloud.len(), 4);
        for (p, e) in cloud.points().iter().zip(expected) {
            for c in 0..3 {
                assert!((p[c] - e[c]).abs() < 1e-12, "{p:?} vs {e:?}");
            }
        }
    }

    #[test]
    fn projection_errors() {
        let map = DisparityMap::fully_masked(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            project_disparity(&map, &params(1.0, 0.0, 1.0, 0.0)),
            Err(Error::NonPositiveDepth { count: 1 })
        ));
        let empty = DisparityMap::new(2, 1, vec![0.0, 1.0], vec![false, false]).unwrap();
        assert!(matches!(
            project_disparity(&empty, &params(1.0, 0.5, 1.0, 0.0)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn render_center_point() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 1.0)]).unwrap();
        let map = render_disparity(&cloud, &params(1.0, 0.0, 1.0, 0.0), 5, 5).unwrap();
        assert_eq!(map.masked_count(), 1);
        assert!(map.is_masked(2, 2));
        assert_eq!(map.value(2, 2), 1.0);
    }

    #[test]
    fn render_keeps_nearest_on_a_ray() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.2, 0.1, 2.0),
            Point3::new(0.1, 0.05, 1.0),
        ])
        .unwrap();
        let p = params(1.0, 0.0, 1.0, 0.0);
        let map = render_disparity(&cloud, &p, 9, 9).unwrap();
        assert_eq!(map.masked_count(), 1);
        let k = map.masked_indices().next().unwrap();
        assert!((map.values()[k] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn render_errors() {
        let p = params(1.0, 0.0, 1.0, 0.5);
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.5)]).unwrap();
        assert!(matches!(
            render_disparity(&cloud, &p, 8, 8),
            Err(Error::PointBehindCamera { count: 1 })
        ));
        assert!(matches!(
            render_disparity(&PointCloud::default(), &p, 8, 8),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn render_then_project_is_bounded_by_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (64, 48);
        let p = params(0.7, 0.2, 1.1, -0.4);
        let camera = Pinhole::new(p.fov, w, h).unwrap();
        for _ in 0..20 {
            let pts: Vec<_> = (0..50)
                .map(|_| {
                    let z: f64 = rng.random_range(1.0..3.0);
                    let u: f64 = rng.random_range(-0.45..0.45) * w as f64;
                    let v: f64 = rng.random_range(-0.45..0.45) * h as f64;
                    Point3::new(u / camera.focal * z, v / camera.focal * z, z + p.z_t)
                })
                .collect();
            let cloud = PointCloud::new(pts.clone()).unwrap();
            let map = render_disparity(&cloud, &p, w, h).unwrap();
            let lifted = project_disparity(&map, &p).unwrap();
            // oracle: every surviving pixel's winner is the source with the
            // smallest depth among those that landed there
            let mut matched = 0;
            for q in lifted.points() {
                let (k, src) = pts
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| {
                        camera.pixel_of(s.x, s.y, s.z - p.z_t, EPSILON_Z)
                            == camera.pixel_of(q.x, q.y, q.z - p.z_t, EPSILON_Z)
                    })
                    .min_by(|a, b| a.1.z.partial_cmp(&b.1.z).unwrap())
                    .unwrap();
                let _ = k;
                let depth = src.z - p.z_t;
                let bound = 0.5 * 2f64.sqrt() * depth / camera.focal;
                assert!((q - src).norm() <= bound + 1e-12, "{q:?} {src:?}");
                assert!((q.z - src.z).abs() < 1e-12);
                matched += 1;
            }
            assert_eq!(matched, map.masked_count());
        }
    }

    proptest! {
        #[test]
        fn output_size_is_mask_count(
            mask in prop::collection::vec(any::<bool>(), 12),
            values in prop::collection::vec(0.0f64..1.0, 12),
        ) {
            prop_assume!(mask.iter().any(|&m| m));
            let map = DisparityMap::new(4, 3, values, mask).unwrap();
            let cloud = project_disparity(&map, &params(1.3, 0.2, 0.9, 0.1)).unwrap();
            prop_assert_eq!(cloud.len(), map.masked_count());
        }

        #[test]
        fn z_translation_is_equivariant(delta in -5.0f64..5.0, values in prop::collection::vec(0.0f64..1.0, 6)) {
            let map = DisparityMap::fully_masked(3, 2, values).unwrap();
            let a = project_disparity(&map, &params(1.0, 0.3, 1.2, 0.25)).unwrap();
            let b = project_disparity(&map, &params(1.0, 0.3, 1.2, 0.25 + delta)).unwrap();
            for (pa, pb) in a.points().iter().zip(b.points()) {
                prop_assert_eq!(pa.x, pb.x);
                prop_assert_eq!(pa.y, pb.y);
                prop_assert!((pb.z - pa.z - delta).abs() < 1e-12);
            }
        }

        #[test]
        fn inverse_depth_scaling_scales_the_camera_frame(k in 0.1f64..10.0, values in prop::collection::vec(0.0f64..1.0, 6)) {
            let map = DisparityMap::fully_masked(3, 2, values).unwrap();
            let a = project_disparity(&map, &params(1.0, 0.3, 1.2, 0.0)).unwrap();
            let b = project_disparity(&map, &params(1.0 / k, 0.3 / k, 1.2, 0.0)).unwrap();
            for (pa, pb) in a.points().iter().zip(b.points()) {
                prop_assert!((pa * k - pb).norm() <= 1e-12 * pb.coords.norm().max(1.0));
            }
        }
    }
}
