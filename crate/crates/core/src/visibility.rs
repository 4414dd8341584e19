//! Z-buffer visibility: splitting a prior into visible/occluded parts and
//! culling occluded points that the lifted disparity no longer hides.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{Pinhole, PointCloud, ProjectionParams, Tag, ViewConfig};
use crate::projection::EPSILON_Z;

/// Per-pixel minimum camera depth.
#[derive(Debug, Clone)]
pub struct DepthBuffer {
    camera: Pinhole,
    depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn new(camera: Pinhole) -> Self {
        DepthBuffer {
            depth: vec![f64::INFINITY; camera.width * camera.height],
            camera,
        }
    }

    /// Splats camera-frame points; returns the pixel of each point.
    pub fn splat<'a>(
        &mut self,
        points: impl IntoIterator<Item = &'a Point3<f64>>,
    ) -> Vec<Option<(usize, usize)>> {
        points
            .into_iter()
            .map(|p| {
                let px = self.camera.pixel_of(p.x, p.y, p.z, EPSILON_Z);
                if let Some((i, j)) = px {
                    let slot = &mut self.depth[j * self.camera.width + i];
                    if p.z < *slot {
                        *slot = p.z;
                    }
                }
                px
            })
            .collect()
    }

    pub fn camera(&self) -> &Pinhole {
        &self.camera
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.depth[j * self.camera.width + i]
    }

    /// Minimum depth over the square window of the given radius; infinite if
    /// nothing landed there.
    pub fn min_around(&self, i: usize, j: usize, radius: usize) -> f64 {
        let (w, h) = (self.camera.width, self.camera.height);
        let (i0, i1) = (i.saturating_sub(radius), (i + radius).min(w - 1));
        let (j0, j1) = (j.saturating_sub(radius), (j + radius).min(h - 1));
        let mut best = f64::INFINITY;
        for jj in j0..=j1 {
            for &z in &self.depth[jj * w + i0..=jj * w + i1] {
                best = best.min(z);
            }
        }
        best
    }
}

/// Object frame to the visibility camera, which sits at `-camera_offset` on
/// the `Z` axis looking toward `+Z`.
fn view_camera_frame(p: &Point3<f64>, view: &ViewConfig) -> Point3<f64> {
    Point3::new(p.x, p.y, p.z + view.camera_offset)
}

/// Object frame to the camera implied by fitted parameters.
fn fitted_camera_frame(p: &Point3<f64>, params: &ProjectionParams) -> Point3<f64> {
    Point3::new(p.x, p.y, p.z - params.z_t)
}

/// Visibility flag for every point under the view camera. Points behind the
/// camera or outside the raster are not visible.
pub fn visible_mask(cloud: &PointCloud, view: &ViewConfig) -> Result<Vec<bool>> {
    view.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let camera = Pinhole::new(view.vis_fov, view.render_width, view.render_height)?;
    let cam_points: Vec<_> = cloud
        .points()
        .iter()
        .map(|p| view_camera_frame(p, view))
        .collect();
    let mut buffer = DepthBuffer::new(camera);
    let pixels = buffer.splat(&cam_points);
    Ok(cam_points
        .iter()
        .zip(pixels)
        .map(|(p, px)| match px {
            Some((i, j)) => p.z <= buffer.min_around(i, j, view.dilation_radius) + view.epsilon_vis,
            None => false,
        })
        .collect())
}

/// Partitions `cloud` into points seen from the view camera and the rest.
pub fn split_visibility(cloud: &PointCloud, view: &ViewConfig) -> Result<(PointCloud, PointCloud)> {
    let visible = visible_mask(cloud, view)?;
    let (vis, occ): (Vec<usize>, Vec<usize>) = (0..cloud.len()).partition(|&k| visible[k]);
    Ok((
        cloud.select(&vis).retagged(Tag::InitialVisible),
        cloud.select(&occ).retagged(Tag::InitialOccluded),
    ))
}

/// Builds the z-buffer of the lifted cloud under the fitted camera.
pub fn projected_depth_buffer(
    projected: &PointCloud,
    params: &ProjectionParams,
    view: &ViewConfig,
) -> Result<DepthBuffer> {
    view.validate()?;
    params.validate()?;
    if projected.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let camera = Pinhole::new(params.fov, view.render_width, view.render_height)?;
    let mut buffer = DepthBuffer::new(camera);
    let cam: Vec<_> = projected
        .points()
        .iter()
        .map(|p| fitted_camera_frame(p, params))
        .collect();
    buffer.splat(&cam);
    Ok(buffer)
}

/// True if `p` (object frame) lies behind the lifted surface in `buffer`.
pub fn is_hidden_by(
    buffer: &DepthBuffer,
    p: &Point3<f64>,
    params: &ProjectionParams,
    view: &ViewConfig,
) -> bool {
    let c = fitted_camera_frame(p, params);
    match buffer.camera().pixel_of(c.x, c.y, c.z, EPSILON_Z) {
        Some((i, j)) => {
            let front = buffer.min_around(i, j, view.dilation_radius);
            front.is_finite() && c.z >= front + view.epsilon_occ
        }
        None => false,
    }
}

/// Keeps only the occluded prior points that are still hidden behind the
/// lifted disparity cloud.
pub fn clean_occluded(
    occluded: &PointCloud,
    projected: &PointCloud,
    params: &ProjectionParams,
    view: &ViewConfig,
) -> Result<PointCloud> {
    let buffer = projected_depth_buffer(projected, params, view)?;
    let keep: Vec<usize> = occluded
        .points()
        .iter()
        .enumerate()
        .filter_map(|(k, p)| is_hidden_by(&buffer, p, params, view).then_some(k))
        .collect();
    Ok(occluded.select(&keep).retagged(Tag::InitialOccluded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Point3::from(*p)).collect()).unwrap()
    }

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn view() -> ViewConfig {
        ViewConfig {
            render_width: 32,
            render_height: 32,
            ..ViewConfig::default()
        }
    }

    #[test]
    fn single_point_is_visible() {
        let (vis, occ) = split_visibility(&cloud(&[[0.1, 0.0, 0.0]]), &view()).unwrap();
        assert_eq!((vis.len(), occ.len()), (1, 0));
        assert_eq!(vis.tags().unwrap(), &[Tag::InitialVisible]);
    }

    #[test]
    fn nearer_point_on_a_ray_wins() {
        // camera at z = -2: depths 1 and 2 along the optical axis
        let (vis, occ) =
            split_visibility(&cloud(&[[0.0, 0.0, 0.0], [0.0, 0.0, -1.0]]), &view()).unwrap();
        assert_eq!(vis.points(), &[Point3::new(0.0, 0.0, -1.0)]);
        assert_eq!(occ.points(), &[Point3::new(0.0, 0.0, 0.0)]);
        assert_eq!(occ.tags().unwrap(), &[Tag::InitialOccluded]);
    }

    #[test]
    fn points_behind_the_camera_are_occluded() {
        let (vis, occ) = split_visibility(&cloud(&[[0.0, 0.0, -3.0]]), &view()).unwrap();
        assert_eq!((vis.len(), occ.len()), (0, 1));
    }

    #[test]
    fn split_rejects_empty() {
        assert!(matches!(
            split_visibility(&PointCloud::default(), &view()),
            Err(Error::EmptyCloud)
        ));
    }

    fn fitted() -> ProjectionParams {
        ProjectionParams::new(1.0, 0.5, 1.0, -2.0).unwrap()
    }

    #[test]
    fn clean_keeps_points_behind_the_surface() {
        let v = view();
        let psi = cloud(&[[0.0, 0.0, 0.0]]);
        let occ = cloud(&[
            [0.0, 0.0, 2.0 * v.epsilon_occ],
            [0.0, 0.0, -0.5],
            [0.9, 0.9, 1.0],
        ]);
        let kept = clean_occluded(&occ, &psi, &fitted(), &v).unwrap();
        assert_eq!(kept.points(), &[Point3::new(0.0, 0.0, 2.0 * v.epsilon_occ)]);
        assert_eq!(kept.tags().unwrap(), &[Tag::InitialOccluded]);
    }

    #[test]
    fn clean_needs_a_projected_cloud() {
        let occ = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(
            clean_occluded(&occ, &PointCloud::default(), &fitted(), &view()),
            Err(Error::EmptyCloud)
        ));
    }

    proptest! {
        #[test]
        fn split_partitions_the_input(seed in any::<u64>(), n in 1usize..200) {
            let c = random_cloud(seed, n);
            let mask = visible_mask(&c, &view()).unwrap();
            let (vis, occ) = split_visibility(&c, &view()).unwrap();
            prop_assert_eq!(vis.len() + occ.len(), c.len());
            prop_assert_eq!(vis.len(), mask.iter().filter(|&&m| m).count());
            let mut all: Vec<_> = vis.points().iter().chain(occ.points()).map(|p| (p.x, p.y, p.z)).collect();
            let mut orig: Vec<_> = c.points().iter().map(|p| (p.x, p.y, p.z)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(all, orig);
        }

        #[test]
        fn larger_tolerance_never_hides_points(seed in any::<u64>(), e1 in 0.001f64..0.5, e2 in 0.001f64..0.5) {
            let c = random_cloud(seed, 150);
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let a = visible_mask(&c, &ViewConfig { epsilon_vis: lo, ..view() }).unwrap();
            let b = visible_mask(&c, &ViewConfig { epsilon_vis: hi, ..view() }).unwrap();
            prop_assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
        }

        #[test]
        fn clean_is_idempotent_and_sound(seed in any::<u64>()) {
            let v = view();
            let psi = random_cloud(seed, 120);
            let occ = random_cloud(seed.wrapping_add(1), 120);
            let once = clean_occluded(&occ, &psi, &fitted(), &v).unwrap();
            let twice = clean_occluded(&once, &psi, &fitted(), &v).unwrap();
            prop_assert_eq!(&once, &twice);
            let buffer = projected_depth_buffer(&psi, &fitted(), &v).unwrap();
            prop_assert!(once.points().iter().all(|p| is_hidden_by(&buffer, p, &fitted(), &v)));
        }
    }
}
