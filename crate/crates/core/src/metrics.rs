//! Exact nearest-neighbor index, Chamfer distance and f-score.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const LEAF_SIZE: usize = 8;

#[inline]
pub fn squared_distance(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static k-d tree over a point set. Queries are exact; among equidistant
/// candidates the smallest source index wins.
#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<Point3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NnIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points().to_vec())
    }

    pub fn from_points(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut index = NnIndex {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        let n = index.points.len();
        index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for &k in &self.order[start..end] {
            for c in 0..3 {
                lo[c] = lo[c].min(self.points[k][c]);
                hi[c] = hi[c].max(self.points[k][c]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Index and squared distance of the nearest indexed point.
    pub fn nearest(&self, query: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Point3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &k in &self.order[start..end] {
                    let d = squared_distance(&self.points[k], q);
                    if d < best.1 || (d == best.1 && k < best.0) {
                        *best = (k, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // `<=` keeps equidistant candidates reachable for tie-breaking
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Mean over `from` of the squared distance to the nearest point of `to`.
pub fn mean_nearest_squared(from: &[Point3<f64>], to: &NnIndex) -> f64 {
    let sum: f64 = from.iter().map(|p| to.nearest(p).1).sum();
    sum / from.len() as f64
}

/// Symmetric Chamfer distance with squared nearest-neighbor distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_points(a.points(), b.points())
}

pub fn chamfer_points(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index_a = NnIndex::from_points(a.to_vec())?;
    let index_b = NnIndex::from_points(b.to_vec())?;
    Ok(mean_nearest_squared(a, &index_b) + mean_nearest_squared(b, &index_a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision, recall and their harmonic mean at distance threshold `tau`.
pub fn fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<FScore> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tau2 = tau * tau;
    let pred_index = NnIndex::build(pred)?;
    let gt_index = NnIndex::build(gt)?;
    let within = |from: &PointCloud, to: &NnIndex| {
        from.points()
            .iter()
            .filter(|p| to.nearest(p).1 <= tau2)
            .count() as f64
            / from.len() as f64
    };
    let precision = within(pred, &gt_index);
    let recall = within(gt, &pred_index);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        precision,
        recall,
        f,
    })
}

/// Chamfer distance and f-score of a prediction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub tau: f64,
}

pub fn evaluate(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<Evaluation> {
    let fs = fscore(pred, gt, tau)?;
    Ok(Evaluation {
        chamfer: chamfer(pred, gt)?,
        precision: fs.precision,
        recall: fs.recall,
        fscore: fs.f,
        tau,
    })
}
