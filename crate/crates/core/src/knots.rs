//! Knot placement for the two basis scales.
//!
//! Both scales use k-means centroids of a systematic grid as a space-filling
//! design. Coarse knots cover the whole region; fine knots are confined to the
//! convex hull of plots with nonzero counts, which keeps short-range basis
//! functions away from large all-zero areas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, systematic_grid, BBox, Point2, StudyRegion};

pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    pub coarse: Vec<Point2>,
    pub fine: Vec<Point2>,
    /// Minimum pairwise distance among coarse knots; `None` with a single knot.
    pub min_dist_coarse: Option<f64>,
    pub min_dist_fine: Option<f64>,
    pub seed: u64,
}

impl KnotSet {
    pub fn new(coarse: Vec<Point2>, fine: Vec<Point2>, seed: u64) -> Result<Self> {
        if coarse.is_empty() || fine.is_empty() {
            return Err(Error::InvalidArgument(
                "each knot scale needs at least one knot".into(),
            ));
        }
        Ok(KnotSet {
            min_dist_coarse: min_pairwise_distance(&coarse),
            min_dist_fine: min_pairwise_distance(&fine),
            coarse,
            fine,
            seed,
        })
    }

    pub fn n_coarse(&self) -> usize {
        self.coarse.len()
    }

    pub fn n_fine(&self) -> usize {
        self.fine.len()
    }
}

pub fn min_pairwise_distance(points: &[Point2]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = points[i].distance_sq(&points[j]);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best.map(f64::sqrt)
}

/// Outcome of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Point2>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn kmeans(points: &[Point2], k: usize, seed: u64) -> Result<Vec<Point2>> {
    kmeans_detailed(points, k, seed).map(|r| r.centroids)
}

/// Lloyd iteration from a seeded farthest-point start.
pub fn kmeans_detailed(points: &[Point2], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::TooFewPoints {
            k,
            n: points.len(),
        });
    }
    let mut centroids = farthest_point_init(points, k, seed);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut wcss_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (best, d2) = nearest(&centroids, p);
            wcss += d2;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        wcss_history.push(wcss);
        if !changed {
            converged = true;
            break;
        }

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &c) in points.iter().zip(&assignment) {
            sums[c].0 += p.x;
            sums[c].1 += p.y;
            sums[c].2 += 1;
        }
        for (c, &(sx, sy, n)) in sums.iter().enumerate() {
            if n > 0 {
                centroids[c] = Point2::new(sx / n as f64, sy / n as f64);
            }
        }
        for c in 0..k {
            if sums[c].2 == 0 {
                // reseed at the point worst served by its current centroid
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, p.distance_sq(&centroids[assignment[i]])))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
                centroids[c] = points[far.0];
                assignment[far.0] = c;
            }
        }
    }

    Ok(KMeansResult {
        centroids,
        assignment,
        wcss_history,
        iterations,
        converged,
    })
}

fn nearest(centroids: &[Point2], p: &Point2) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = c.distance_sq(p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn farthest_point_init(points: &[Point2], k: usize, seed: u64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first]];
    let mut min_d2: Vec<f64> = points.iter().map(|p| p.distance_sq(&points[first])).collect();
    while centroids.len() < k {
        let (idx, _) = min_d2
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let c = points[idx];
        centroids.push(c);
        for (d, p) in min_d2.iter_mut().zip(points) {
            *d = d.min(p.distance_sq(&c));
        }
    }
    centroids
}

/// Systematic-grid size fed to k-means for `k` centroids.
pub fn kmeans_grid_size(k: usize) -> usize {
    2000.max(50 * k)
}

/// Knot counts following the rule of thumb `K_C + K_F = n / 4` clamped to
/// `[20, 150]`, split so that `K_F >= 4 K_C`.
pub fn suggest_knot_counts(n_plots: usize) -> (usize, usize) {
    let total = (n_plots / 4).clamp(20, 150);
    let coarse = (total / 5).max(1);
    (coarse, total - coarse)
}

/// Coarse knots from k-means over a grid in `A`; fine knots from k-means over a
/// grid in `hull(nonzero_centroids) ∩ A`.
///
/// When the hull is degenerate (fewer than three distinct or collinear nonzero
/// plots), `fallback_pad` selects the bounding box of the centroids inflated by
/// that amount; `None` propagates [`Error::DegenerateHull`].
pub fn place_knots(
    region: &StudyRegion,
    nonzero_centroids: &[Point2],
    k_coarse: usize,
    k_fine: usize,
    seed: u64,
    fallback_pad: Option<f64>,
) -> Result<KnotSet> {
    if k_coarse == 0 || k_fine == 0 {
        return Err(Error::InvalidArgument("knot counts must be >= 1".into()));
    }
    let coarse_grid = systematic_grid(region, kmeans_grid_size(k_coarse))?;
    let coarse = snap_into(kmeans(&coarse_grid, k_coarse, seed)?, &coarse_grid, |p| {
        region.contains(p)
    });

    let fine_region = fine_knot_region(nonzero_centroids, fallback_pad)?;
    let fine_grid = fine_candidates(region, &fine_region, nonzero_centroids, k_fine)?;
    let fine = kmeans(&fine_grid, k_fine, seed.wrapping_add(1))?;
    let fine = snap_into(fine, &fine_grid, |p: &Point2| {
        region.contains(p) && fine_region.contains(p)
    });

    KnotSet::new(coarse, fine, seed)
}

/// Centroids of non-convex clusters can leave the region; move those to the
/// nearest candidate point.
fn snap_into(
    centroids: Vec<Point2>,
    candidates: &[Point2],
    inside: impl Fn(&Point2) -> bool,
) -> Vec<Point2> {
    centroids
        .into_iter()
        .map(|c| {
            if inside(&c) {
                c
            } else {
                candidates[nearest(candidates, &c).0]
            }
        })
        .collect()
}

fn fine_knot_region(nonzero: &[Point2], fallback_pad: Option<f64>) -> Result<StudyRegion> {
    if nonzero.is_empty() {
        return Err(Error::NoSignal);
    }
    match convex_hull(nonzero) {
        Ok(hull) => StudyRegion::new(hull),
        Err(e @ Error::DegenerateHull(_)) => match fallback_pad {
            Some(pad) if pad > 0.0 => {
                let bb = bbox_of(nonzero).inflate(pad);
                StudyRegion::new(bb.to_polygon()?)
            }
            _ => Err(e),
        },
        Err(e) => Err(e),
    }
}

fn bbox_of(points: &[Point2]) -> BBox {
    let mut bb = BBox {
        min: points[0],
        max: points[0],
    };
    for p in points {
        bb.min.x = bb.min.x.min(p.x);
        bb.min.y = bb.min.y.min(p.y);
        bb.max.x = bb.max.x.max(p.x);
        bb.max.y = bb.max.y.max(p.y);
    }
    bb
}

/// Grid points in the fine region that also fall in `A`, densified until there
/// are enough for `k` centroids.
fn fine_candidates(
    region: &StudyRegion,
    fine_region: &StudyRegion,
    nonzero: &[Point2],
    k: usize,
) -> Result<Vec<Point2>> {
    let mut target = kmeans_grid_size(k);
    for _ in 0..6 {
        let pts: Vec<Point2> = systematic_grid(fine_region, target)?
            .into_iter()
            .filter(|p| region.contains(p))
            .collect();
        if pts.len() >= k {
            return Ok(pts);
        }
        target *= 4;
    }
    // hull hugging the region edge so tightly that no lattice point survives
    let mut pts: Vec<Point2> = nonzero.iter().copied().filter(|p| region.contains(p)).collect();
    pts.dedup();
    if pts.len() >= k {
        Ok(pts)
    } else {
        Err(Error::TooFewPoints { k, n: pts.len() })
    }
}
