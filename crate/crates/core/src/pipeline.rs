//! End-to-end refinement: split the prior, fit the camera, lift the
//! disparity, cull stale occluded points and merge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::{fit_params, FitConfig};
use crate::geometry::{
    normalize_disparity, DisparityMap, PointCloud, ProjectionParams, ViewConfig,
};
use crate::metrics::{evaluate, Evaluation};
use crate::projection::project_disparity;
use crate::visibility::{clean_occluded, split_visibility};

/// Default f-score threshold for unit-diagonal objects.
pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    /// Use these parameters instead of fitting.
    pub params: Option<ProjectionParams>,
    /// Fewer visible prior points than this aborts the refinement.
    pub min_visible: usize,
    pub tau: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            params: None,
            min_visible: 32,
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineCounts {
    pub prior: usize,
    pub visible: usize,
    pub occluded: usize,
    pub projected: usize,
    pub occluded_kept: usize,
    pub occluded_removed: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub params: ProjectionParams,
    /// `None` when the parameters were injected.
    pub fit_loss: Option<f64>,
    pub fit_restart_losses: Vec<f64>,
    pub counts: RefineCounts,
    pub before: Option<Evaluation>,
    pub after: Option<Evaluation>,
    pub fit_config: FitConfig,
    pub view: ViewConfig,
    pub options: RefineOptions,
}

/// Refines a prior cloud with a disparity map; returns the merged cloud of
/// lifted points and still-occluded prior points.
pub fn refine(
    prior: &PointCloud,
    map: &DisparityMap,
    fit_config: &FitConfig,
    view: &ViewConfig,
    options: &RefineOptions,
    ground_truth: Option<&PointCloud>,
) -> Result<(PointCloud, RefineReport)> {
    if prior.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let map = normalize_disparity(map)?;
    let (visible, occluded) = split_visibility(prior, view)?;

    let (params, fit_loss, restart_losses) = match options.params {
        Some(p) => {
            p.validate()?;
            (p, None, Vec::new())
        }
        None => {
            if visible.len() < options.min_visible {
                return Err(Error::DegenerateVisible {
                    count: visible.len(),
                    floor: options.min_visible,
                });
            }
            let fit = fit_params(&map, &visible, fit_config)?;
            (fit.params, Some(fit.loss), fit.restart_losses)
        }
    };

    let projected = project_disparity(&map, &params)?;
    let kept = if occluded.is_empty() {
        occluded.clone()
    } else {
        clean_occluded(&occluded, &projected, &params, view)?
    };
    let merged = projected.concat(&kept);

    let (before, after) = match ground_truth {
        Some(gt) => (
            Some(evaluate(prior, gt, options.tau)?),
            Some(evaluate(&merged, gt, options.tau)?),
        ),
        None => (None, None),
    };
    let report = RefineReport {
        params,
        fit_loss,
        fit_restart_losses: restart_losses,
        counts: RefineCounts {
            prior: prior.len(),
            visible: visible.len(),
            occluded: occluded.len(),
            projected: projected.len(),
            occluded_kept: kept.len(),
            occluded_removed: occluded.len() - kept.len(),
            output: merged.len(),
        },
        before,
        after,
        fit_config: fit_config.clone(),
        view: *view,
        options: options.clone(),
    };
    Ok((merged, report))
}
