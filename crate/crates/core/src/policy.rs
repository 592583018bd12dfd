//! Choosing one camera frame per query from an intersection-matrix column,
//! and the yaw-spread statistics that show how clipping stabilizes the
//! choice.

use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{yaw_difference, yaw_of, CameraExtrinsic, GeometryError};
use crate::intersection::IntersectionMatrix;

/// Bandwidth used when Silverman's rule collapses to zero (all samples equal).
pub const FALLBACK_BANDWIDTH: f64 = 1e-2;
/// Default number of KDE evaluation points on `[0, pi]`.
pub const KDE_GRID_POINTS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("unknown object {0}")]
    UnknownObject(u32),
    #[error("no candidate frames with non-zero score")]
    NoCandidates,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("clip ratio {0} outside [0, 0.5)")]
    InvalidClipRatio(f64),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid bandwidth {0}")]
    InvalidBandwidth(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Frames with non-zero score for one object, best first. Equal scores are
/// ordered by ascending frame id.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub object_id: u32,
    entries: Vec<(u32, f32)>,
}

impl CandidateSet {
    pub fn from_scores(object_id: u32, scores: impl IntoIterator<Item = (u32, f32)>) -> Self {
        let mut entries: Vec<(u32, f32)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { object_id, entries }
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries that survive dropping `floor(ratio * N)` from each end.
    /// Falls back to the full set when nothing survives.
    pub fn clip_band(&self, ratio: ClipRatio) -> &[(u32, f32)] {
        let n = self.entries.len();
        // The epsilon keeps products like 0.3 * 10 from flooring to 2.
        let drop = ((ratio.0 * n as f64) + 1e-9).floor() as usize;
        if 2 * drop >= n {
            &self.entries
        } else {
            &self.entries[drop..n - drop]
        }
    }
}

pub fn candidates(m: &IntersectionMatrix, object_id: u32) -> Result<CandidateSet, PolicyError> {
    let column = m.column(object_id).ok_or(PolicyError::UnknownObject(object_id))?;
    Ok(CandidateSet::from_scores(object_id, column))
}

/// Candidates that must see every target: the elementwise minimum of the
/// target columns.
pub fn candidates_all_targets(m: &IntersectionMatrix, object_ids: &[u32]) -> Result<CandidateSet, PolicyError> {
    let (&first, rest) = object_ids.split_first().ok_or(PolicyError::NoCandidates)?;
    let mut column = m.column(first).ok_or(PolicyError::UnknownObject(first))?;
    for &id in rest {
        let other = m.column(id).ok_or(PolicyError::UnknownObject(id))?;
        for (c, o) in column.iter_mut().zip(other) {
            c.1 = c.1.min(o.1);
        }
    }
    Ok(CandidateSet::from_scores(first, column))
}

/// Fraction of non-zero scores discarded from each end before sampling.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ClipRatio(f64);

impl ClipRatio {
    pub const DEFAULT: ClipRatio = ClipRatio(0.3);

    pub fn new(ratio: f64) -> Result<Self, PolicyError> {
        if !(0.0..0.5).contains(&ratio) {
            return Err(PolicyError::InvalidClipRatio(ratio));
        }
        Ok(Self(ratio))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for ClipRatio {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipPolicy {
    pub clip_ratio: ClipRatio,
    pub seed: u64,
}

/// Highest score; the candidate order already breaks ties by frame id.
pub fn select_top(c: &CandidateSet) -> Result<u32, PolicyError> {
    c.entries.first().map(|e| e.0).ok_or(PolicyError::NoCandidates)
}

pub fn select_clip<R: Rng + ?Sized>(c: &CandidateSet, ratio: ClipRatio, rng: &mut R) -> Result<u32, PolicyError> {
    if c.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    let band = c.clip_band(ratio);
    Ok(band[rng.random_range(0..band.len())].0)
}

/// Uniform over every frame of the trajectory, ignoring scores.
pub fn select_random<R: Rng + ?Sized>(all_frames: &[u32], rng: &mut R) -> Result<u32, PolicyError> {
    if all_frames.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    Ok(all_frames[rng.random_range(0..all_frames.len())])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionPolicy {
    Top,
    Clip(ClipRatio),
    Random,
}

impl std::fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionPolicy::Top => write!(f, "top"),
            SelectionPolicy::Clip(r) => write!(f, "clip({})", r.value()),
            SelectionPolicy::Random => write!(f, "random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoseChoice {
    pub frame_id: u32,
    /// No frame saw the target, so the choice came from the random baseline.
    pub fallback: bool,
}

/// Picks a frame for a query, falling back to a random frame when the
/// candidate set is empty. Draws come only from `rng`.
pub fn choose_pose<R: Rng + ?Sized>(
    m: &IntersectionMatrix,
    object_ids: &[u32],
    policy: SelectionPolicy,
    rng: &mut R,
) -> Result<PoseChoice, PolicyError> {
    let c = match object_ids {
        [one] => candidates(m, *one)?,
        many => candidates_all_targets(m, many)?,
    };
    let picked = match policy {
        SelectionPolicy::Top => select_top(&c),
        SelectionPolicy::Clip(ratio) => select_clip(&c, ratio, rng),
        SelectionPolicy::Random => {
            return Ok(PoseChoice {
                frame_id: select_random(m.frame_ids(), rng)?,
                fallback: false,
            })
        }
    };
    match picked {
        Ok(frame_id) => Ok(PoseChoice {
            frame_id,
            fallback: false,
        }),
        Err(PolicyError::NoCandidates) => Ok(PoseChoice {
            frame_id: select_random(m.frame_ids(), rng)?,
            fallback: true,
        }),
        Err(e) => Err(e),
    }
}

/// Largest pairwise circular yaw difference, in `[0, pi]`.
///
/// Sorts the yaws and, for each one, checks the neighbours of its antipode,
/// which is where the farthest partner on the circle must be.
pub fn max_yaw_spread(frames: &[CameraExtrinsic]) -> Result<f64, PolicyError> {
    if frames.is_empty() {
        return Err(PolicyError::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut yaws = frames.iter().map(yaw_of).collect::<Result<Vec<f64>, _>>()?;
    yaws.sort_by(f64::total_cmp);
    let n = yaws.len();
    let mut best = 0.0f64;
    for &a in &yaws {
        let antipode = if a > 0.0 { a - PI } else { a + PI };
        let pos = yaws.partition_point(|&y| y < antipode);
        for idx in [pos % n, (pos + n - 1) % n] {
            best = best.max(yaw_difference(a, yaws[idx]));
        }
    }
    Ok(best.min(PI))
}

/// Gaussian KDE of yaw spreads on `[0, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct YawSpreadStats {
    pub spreads: Vec<f64>,
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl YawSpreadStats {
    /// Trapezoid integral of the density over `[0, pi]`.
    pub fn total_mass(&self) -> f64 {
        trapezoid(&self.xs, &self.density)
    }

    /// Trapezoid integral of the density over `[0, threshold]`.
    pub fn mass_below(&self, threshold: f64) -> f64 {
        let mut mass = 0.0;
        for i in 1..self.xs.len() {
            let (x0, x1) = (self.xs[i - 1], self.xs[i]);
            if x0 >= threshold {
                break;
            }
            let (d0, d1) = (self.density[i - 1], self.density[i]);
            if x1 <= threshold {
                mass += 0.5 * (d0 + d1) * (x1 - x0);
            } else {
                let dt = d0 + (d1 - d0) * (threshold - x0) / (x1 - x0);
                mass += 0.5 * (d0 + dt) * (threshold - x0);
            }
        }
        mass
    }

    pub fn fraction_below(&self, threshold: f64) -> f64 {
        self.spreads.iter().filter(|&&s| s < threshold).count() as f64 / self.spreads.len() as f64
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`. Uses
/// whichever spread estimate is non-zero and [`FALLBACK_BANDWIDTH`] when
/// both vanish.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let scale = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return FALLBACK_BANDWIDTH,
    };
    0.9 * scale * n.powf(-0.2)
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// KDE with reflection at both ends of `[0, pi]` so no mass leaks out of
/// the support.
pub fn yaw_spread_kde(spreads: &[f64], bandwidth: Option<f64>) -> Result<YawSpreadStats, PolicyError> {
    yaw_spread_kde_with_grid(spreads, bandwidth, KDE_GRID_POINTS)
}

pub fn yaw_spread_kde_with_grid(
    spreads: &[f64],
    bandwidth: Option<f64>,
    grid_points: usize,
) -> Result<YawSpreadStats, PolicyError> {
    if spreads.len() < 2 {
        return Err(PolicyError::InsufficientSamples {
            needed: 2,
            got: spreads.len(),
        });
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(PolicyError::InvalidBandwidth(h)),
        None => silverman_bandwidth(spreads),
    };
    let grid_points = grid_points.max(2);
    let xs: Vec<f64> = (0..grid_points)
        .map(|i| PI * i as f64 / (grid_points - 1) as f64)
        .collect();
    let norm = 1.0 / (spreads.len() as f64 * h * (2.0 * PI).sqrt());
    let kernel = |d: f64| (-0.5 * (d / h).powi(2)).exp();
    let density = xs
        .iter()
        .map(|&x| {
            spreads
                .iter()
                .map(|&s| kernel(x - s) + kernel(x + s) + kernel(x - (2.0 * PI - s)))
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(YawSpreadStats {
        spreads: spreads.to_vec(),
        xs,
        density,
        bandwidth: h,
    })
}
