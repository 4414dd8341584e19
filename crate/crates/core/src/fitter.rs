//! Multi-restart fitting of projection parameters by minibatch gradient
//! descent on the Chamfer loss between the lifted disparity and a target
//! cloud.
//!
//! Each descent step samples a minibatch from both clouds, refreshes the
//! nearest-neighbor correspondences at the current parameters and moves along
//! the exact gradient of the objective with those correspondences frozen. A
//! step is accepted only if it does not increase the frozen objective; on
//! rejection the step length is halved.

use nalgebra::Point3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_disparity, DisparityMap, PointCloud, ProjectionParams};
use crate::metrics::{mean_nearest_squared, NnIndex};
use crate::projection::{lift_pixel, project_feasible, PixelSet, EPSILON_Z};

const FOV_MARGIN: f64 = 1e-3;

/// Per-parameter values in `(s, t, fov, z_t)` order; fov in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerParam<T> {
    pub s: T,
    pub t: T,
    pub fov_rad: T,
    pub z_t: T,
}

impl<T: Copy> PerParam<T> {
    pub fn to_array(&self) -> [T; 4] {
        [self.s, self.t, self.fov_rad, self.z_t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub steps: usize,
    pub step_sizes: PerParam<f64>,
    /// Multiplier applied to the step length after an accepted step.
    pub step_growth: f64,
    /// Halvings tried before a step is abandoned.
    pub max_halvings: usize,
    pub batch_projected: usize,
    pub batch_prior: usize,
    pub init_ranges: PerParam<[f64; 2]>,
    pub seed: u64,
    pub penalty_weight: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 20,
            steps: 500,
            step_sizes: PerParam {
                s: 1e-2,
                t: 1e-2,
                fov_rad: 1e-3,
                z_t: 1e-2,
            },
            step_growth: 1.2,
            max_halvings: 30,
            batch_projected: 1024,
            batch_prior: 1024,
            init_ranges: PerParam {
                s: [0.1, 5.0],
                t: [0.01, 2.0],
                fov_rad: [20f64.to_radians(), 90f64.to_radians()],
                z_t: [-3.0, 3.0],
            },
            seed: 0,
            penalty_weight: 100.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.restarts == 0 || self.steps == 0 {
            return bad("restarts and steps must be at least 1".into());
        }
        if self.batch_projected == 0 || self.batch_prior == 0 {
            return bad("minibatch sizes must be at least 1".into());
        }
        if !self
            .step_sizes
            .to_array()
            .iter()
            .all(|&h| h.is_finite() && h > 0.0)
        {
            return bad("step sizes must be positive".into());
        }
        if !(self.step_growth.is_finite() && self.step_growth >= 1.0) {
            return bad("step_growth must be at least 1".into());
        }
        if !(self.penalty_weight.is_finite() && self.penalty_weight >= 0.0) {
            return bad("penalty_weight must be non-negative".into());
        }
        for [lo, hi] in self.init_ranges.to_array() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("init range [{lo}, {hi}] is empty"));
            }
        }
        let [lo, hi] = self.init_ranges.fov_rad;
        if !(lo > 0.0 && hi < std::f64::consts::PI) {
            return bad("fov init range must lie inside (0, pi)".into());
        }
        Ok(())
    }

    /// Uniform draw from the init ranges.
    pub fn sample_init(&self, rng: &mut impl Rng) -> ProjectionParams {
        let draw = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        ProjectionParams {
            s: draw(rng, self.init_ranges.s),
            t: draw(rng, self.init_ranges.t),
            fov: draw(rng, self.init_ranges.fov_rad),
            z_t: draw(rng, self.init_ranges.z_t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ProjectionParams,
    pub loss: f64,
    pub best_restart: usize,
    pub restart_losses: Vec<f64>,
    /// False where a restart ended with pixels of non-positive inverse depth.
    pub restart_feasible: Vec<bool>,
    pub restart_inits: Vec<ProjectionParams>,
    /// Minibatch objective at the start of each step of the winning restart.
    pub trace: Vec<f64>,
    pub seed: u64,
}

/// Soft barrier on inverse depth: `weight * sum(max(0, eps - (s*d + t))^2)`.
pub fn positivity_penalty(pixels: &PixelSet, params: &ProjectionParams, weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    weight
        * pixels
            .pixels
            .iter()
            .map(|p| (EPSILON_Z - (params.s * p.d + params.t)).max(0.0).powi(2))
            .sum::<f64>()
}

/// Fitting loss: Chamfer distance between the feasible lifted pixels and the
/// target, plus the positivity barrier. Infinite if no pixel is feasible.
pub fn loss(
    params: &ProjectionParams,
    map: &DisparityMap,
    target: &PointCloud,
    penalty_weight: f64,
) -> Result<f64> {
    let pixels = PixelSet::from_map(map)?;
    let index = NnIndex::build(target)?;
    loss_with(params, &pixels, &index, penalty_weight)
}

pub(crate) fn loss_with(
    params: &ProjectionParams,
    pixels: &PixelSet,
    target: &NnIndex,
    penalty_weight: f64,
) -> Result<f64> {
    let (points, _) = project_feasible(pixels, params)?;
    let penalty = positivity_penalty(pixels, params, penalty_weight);
    if points.is_empty() {
        return Ok(f64::INFINITY);
    }
    let projected = NnIndex::from_points(points)?;
    Ok(mean_nearest_squared(projected.points(), target)
        + mean_nearest_squared(target.points(), &projected)
        + penalty)
}

/// Frozen nearest-neighbor matches between lifted pixels and target points.
///
/// `forward` pairs are `(pixel, target)` and `backward` pairs are
/// `(target, pixel)`, where pixel indices refer to [`PixelSet::pixels`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub forward: Vec<(usize, usize)>,
    pub backward: Vec<(usize, usize)>,
    pub forward_weight: f64,
    pub backward_weight: f64,
}

impl Correspondences {
    /// Weights each direction by the reciprocal of its pair count.
    pub fn averaged(forward: Vec<(usize, usize)>, backward: Vec<(usize, usize)>) -> Self {
        let w = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Correspondences {
            forward_weight: w(forward.len()),
            backward_weight: w(backward.len()),
            forward,
            backward,
        }
    }

    /// Nearest-neighbor matches of every feasible pixel and every target point.
    pub fn full(pixels: &PixelSet, params: &ProjectionParams, target: &PointCloud) -> Result<Self> {
        let (points, source) = project_feasible(pixels, params)?;
        let target_index = NnIndex::build(target)?;
        let projected = NnIndex::from_points(points)?;
        let forward = projected
            .points()
            .iter()
            .zip(&source)
            .map(|(p, &k)| (k, target_index.nearest(p).0))
            .collect();
        let backward = target
            .points()
            .iter()
            .enumerate()
            .map(|(q, y)| (q, source[projected.nearest(y).0]))
            .collect();
        Ok(Self::averaged(forward, backward))
    }
}

/// The quadratic-in-residual objective obtained by freezing correspondences.
pub struct FrozenObjective<'a> {
    pub pixels: &'a PixelSet,
    pub target: &'a [Point3<f64>],
    pub matches: &'a Correspondences,
    pub penalty_weight: f64,
}

impl FrozenObjective<'_> {
    fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.matches;
        m.forward
            .iter()
            .map(move |&(k, q)| (k, q, m.forward_weight))
            .chain(
                m.backward
                    .iter()
                    .map(move |&(q, k)| (k, q, m.backward_weight)),
            )
    }

    /// Objective value; infinite if a matched pixel is infeasible.
    pub fn value(&self, params: &ProjectionParams) -> Result<f64> {
        let focal = self.pixels.focal(params.fov)?;
        let mut total = 0.0;
        for (k, q, w) in self.pairs() {
            match lift_pixel(&self.pixels.pixels[k], params, focal) {
                Some(x) => total += w * (x - self.target[q]).norm_squared(),
                None => return Ok(f64::INFINITY),
            }
        }
        Ok(total + positivity_penalty(self.pixels, params, self.penalty_weight))
    }

    /// Exact gradient with respect to `(s, t, fov, z_t)`.
    pub fn gradient(&self, params: &ProjectionParams) -> Result<[f64; 4]> {
        let focal = self.pixels.focal(params.fov)?;
        let sin_fov = params.fov.sin();
        let mut g = [0.0; 4];
        for (k, q, w) in self.pairs() {
            let px = &self.pixels.pixels[k];
            let inv = params.s * px.d + params.t;
            if inv <= EPSILON_Z {
                return Err(Error::NonFiniteGradient);
            }
            let z = 1.0 / inv;
            let (a, b) = (px.u / focal, px.v / focal);
            let (x, y) = (a * z, b * z);
            let y_t = &self.target[q];
            let r = [x - y_t.x, y - y_t.y, z + params.z_t - y_t.z];
            // d(x, y, z)/dZ = (a, b, 1); dZ/ds = -d Z^2, dZ/dt = -Z^2
            let along_depth = r[0] * a + r[1] * b + r[2];
            let z2 = z * z;
            g[0] += 2.0 * w * along_depth * (-px.d * z2);
            g[1] += 2.0 * w * along_depth * (-z2);
            // df/dfov = -f / sin(fov), so dX/dfov = X / sin(fov)
            g[2] += 2.0 * w * (r[0] * x + r[1] * y) / sin_fov;
            g[3] += 2.0 * w * r[2];
        }
        if self.penalty_weight > 0.0 {
            for px in &self.pixels.pixels {
                let gap = EPSILON_Z - (params.s * px.d + params.t);
                if gap > 0.0 {
                    g[0] += -2.0 * self.penalty_weight * gap * px.d;
                    g[1] += -2.0 * self.penalty_weight * gap;
                }
            }
        }
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::NonFiniteGradient)
        }
    }
}

/// Gradient of the frozen-correspondence objective at `params`.
pub fn loss_gradient(
    params: &ProjectionParams,
    map: &DisparityMap,
    target: &PointCloud,
    matches: &Correspondences,
    penalty_weight: f64,
) -> Result<[f64; 4]> {
    let pixels = PixelSet::from_map(map)?;
    FrozenObjective {
        pixels: &pixels,
        target: target.points(),
        matches,
        penalty_weight,
    }
    .gradient(params)
}

/// Shared, read-only fitting inputs.
struct Problem<'a> {
    pixels: PixelSet,
    target: &'a PointCloud,
    target_index: NnIndex,
    config: &'a FitConfig,
}

/// Where one restart ended.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub params: ProjectionParams,
    /// Full loss including the positivity penalty.
    pub loss: f64,
    pub feasible: bool,
    pub trace: Vec<f64>,
}

fn clamp_fov(p: &mut ProjectionParams) {
    p.fov = p.fov.clamp(FOV_MARGIN, std::f64::consts::PI - FOV_MARGIN);
}

impl Problem<'_> {
    fn descend(&self, init: ProjectionParams, rng: &mut ChaCha8Rng) -> Result<RestartOutcome> {
        let cfg = self.config;
        let steps = cfg.step_sizes.to_array();
        let mut params = init;
        clamp_fov(&mut params);
        let mut scale = 1.0;
        let mut trace = Vec::with_capacity(cfg.steps);
        let target = self.target.points();

        for _ in 0..cfg.steps {
            let (points, source) = project_feasible(&self.pixels, &params)?;
            if points.is_empty() {
                break;
            }
            let n_proj = points.len();
            let fwd_idx: Vec<usize> = if cfg.batch_projected >= n_proj {
                (0..n_proj).collect()
            } else {
                sample(rng, n_proj, cfg.batch_projected).into_vec()
            };
            let bwd_idx: Vec<usize> = if cfg.batch_prior >= target.len() {
                (0..target.len()).collect()
            } else {
                sample(rng, target.len(), cfg.batch_prior).into_vec()
            };
            let forward = fwd_idx
                .iter()
                .map(|&k| (source[k], self.target_index.nearest(&points[k]).0))
                .collect();
            let projected = NnIndex::from_points(points)?;
            let backward = bwd_idx
                .iter()
                .map(|&q| (q, source[projected.nearest(&target[q]).0]))
                .collect();
            let matches = Correspondences::averaged(forward, backward);
            let objective = FrozenObjective {
                pixels: &self.pixels,
                target,
                matches: &matches,
                penalty_weight: cfg.penalty_weight,
            };
            let current = objective.value(&params)?;
            trace.push(current);
            let grad = objective.gradient(&params)?;
            let infeasible_now = self.pixels.infeasible_count(&params);

            let mut accepted = false;
            for _ in 0..=cfg.max_halvings {
                let mut trial = params;
                let mut arr = trial.to_array();
                for c in 0..4 {
                    arr[c] -= scale * steps[c] * grad[c];
                }
                trial = ProjectionParams::from_array(arr);
                clamp_fov(&mut trial);
                let value = objective.value(&trial)?;
                // never trade feasible pixels for a lower objective
                if value <= current && self.pixels.infeasible_count(&trial) <= infeasible_now {
                    params = trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if accepted {
                scale *= cfg.step_growth;
            }
        }

        let loss = loss_with(
            &params,
            &self.pixels,
            &self.target_index,
            cfg.penalty_weight,
        )?;
        Ok(RestartOutcome {
            params,
            loss,
            feasible: self.pixels.infeasible_count(&params) == 0 && loss.is_finite(),
            trace,
        })
    }
}

/// Deterministic RNG for one restart's minibatches.
fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64 + 1);
    rng
}

/// Initial parameters for `restarts` restarts drawn from the config's ranges.
pub fn sample_inits(config: &FitConfig, restarts: usize) -> Vec<ProjectionParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..restarts)
        .map(|_| config.sample_init(&mut rng))
        .collect()
}

/// Fits with `config.restarts` random initializations.
pub fn fit_params(
    map: &DisparityMap,
    target: &PointCloud,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    fit_params_from(map, target, config, sample_inits(config, config.restarts))
}

/// Runs one descent per initialization and returns every outcome, feasible
/// or not, in initialization order.
pub fn run_restarts(
    map: &DisparityMap,
    target: &PointCloud,
    config: &FitConfig,
    inits: &[ProjectionParams],
) -> Result<Vec<RestartOutcome>> {
    config.validate()?;
    if inits.is_empty() {
        return Err(Error::InvalidInput(
            "at least one initialization is required".into(),
        ));
    }
    let map = normalize_disparity(map)?;
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let problem = Problem {
        pixels: PixelSet::from_map(&map)?,
        target,
        target_index: NnIndex::build(target)?,
        config,
    };
    inits
        .par_iter()
        .enumerate()
        .map(|(k, init)| problem.descend(*init, &mut restart_rng(config.seed, k)))
        .collect()
}

/// Fits from explicit initial parameters, one restart each.
pub fn fit_params_from(
    map: &DisparityMap,
    target: &PointCloud,
    config: &FitConfig,
    inits: Vec<ProjectionParams>,
) -> Result<FitResult> {
    let outcomes = run_restarts(map, target, config, &inits)?;

    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.feasible)
        .min_by(|a, b| a.1.loss.total_cmp(&b.1.loss).then(a.0.cmp(&b.0)))
        .map(|(k, _)| k)
        .ok_or(Error::AllRestartsInfeasible {
            restarts: outcomes.len(),
        })?;
    Ok(FitResult {
        params: outcomes[best].params,
        loss: outcomes[best].loss,
        best_restart: best,
        restart_losses: outcomes.iter().map(|o| o.loss).collect(),
        restart_feasible: outcomes.iter().map(|o| o.feasible).collect(),
        restart_inits: inits,
        trace: outcomes[best].trace.clone(),
        seed: config.seed,
    })
}
