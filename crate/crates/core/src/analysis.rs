//! Performance modes, density sub-clusters and boundary pairs from sampled scenarios.
//!
//! Modes come from mean-shift on the outputs. Inside each mode DBSCAN on the
//! normalized inputs separates dense groups from isolated points, and the
//! isolated points are dropped before pairing neighbors across modes.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{euclidean, median};

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLabel {
    pub id: usize,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAssignment {
    pub labels: Vec<usize>,
    /// Sorted lexicographically by centroid; `modes[k].id == k`.
    pub modes: Vec<ModeLabel>,
    pub bandwidth: f64,
}

/// Median over all unordered pairs of row distances, `None` for fewer than two rows.
pub fn median_pairwise_distance(y: &DMatrix<f64>) -> Option<f64> {
    let rows: Vec<Vec<f64>> = (0..y.nrows()).map(|i| row(y, i)).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(euclidean(&rows[i], &rows[j]));
        }
    }
    median(&d)
}

/// `factor` × the median pairwise output distance; 1 when that is zero.
pub fn default_bandwidth(y: &DMatrix<f64>, factor: f64) -> f64 {
    match median_pairwise_distance(y) {
        Some(m) if m > 0.0 => factor * m,
        _ => 1.0,
    }
}

/// Flat-kernel mean-shift on the rows of `y`.
pub fn mean_shift_modes(y: &DMatrix<f64>, bandwidth: f64) -> Result<ModeAssignment> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if y.nrows() == 0 {
        return Err(Error::Empty("mean-shift input"));
    }
    let rows: Vec<Vec<f64>> = (0..y.nrows()).map(|i| row(y, i)).collect();
    let dim = y.ncols();
    let stop = 1e-3 * bandwidth;
    let mut converged: Vec<Vec<f64>> = rows
        .iter()
        .map(|start| {
            let mut m = start.clone();
            for _ in 0..300 {
                let mut sum = vec![0.0; dim];
                let mut count = 0usize;
                for p in &rows {
                    if euclidean(p, &m) <= bandwidth {
                        count += 1;
                        for (s, v) in sum.iter_mut().zip(p) {
                            *s += v;
                        }
                    }
                }
                let next: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
                let shift = euclidean(&next, &m);
                m = next;
                if shift < stop {
                    break;
                }
            }
            m
        })
        .collect();
    converged.sort_by(|a, b| lex_cmp(a, b));
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for c in converged {
        if !centers.iter().any(|k| euclidean(k, &c) <= 0.5 * bandwidth) {
            centers.push(c);
        }
    }
    centers.sort_by(|a, b| lex_cmp(a, b));
    let labels = rows
        .iter()
        .map(|p| {
            let mut best = 0;
            for (k, c) in centers.iter().enumerate() {
                if euclidean(p, c) < euclidean(p, &centers[best]) {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(ModeAssignment {
        labels,
        modes: centers
            .into_iter()
            .enumerate()
            .map(|(id, centroid)| ModeLabel { id, centroid })
            .collect(),
        bandwidth,
    })
}

/// Result of DBSCAN over one point set; indices are local rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dbscan {
    /// Clusters ordered by their lowest core index, members ascending.
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl Dbscan {
    pub fn label_of(&self, i: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.binary_search(&i).is_ok())
    }
}

/// Density clustering with `min_pts` counting the point itself.
///
/// Border points join the first cluster that reaches them. Clusters that end
/// up with fewer than `min_pts` members (possible when their border points
/// were claimed earlier) count as noise.
pub fn dbscan_subclusters(x: &DMatrix<f64>, eps: f64, min_pts: usize) -> Result<Dbscan> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| euclidean(&rows[i], &rows[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if !core[start] || label[start].is_some() {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        label[start] = Some(id);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if label[q].is_none() {
                    label[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    let mut kept = Vec::new();
    let mut noise: Vec<usize> = (0..n).filter(|&i| label[i].is_none()).collect();
    for c in clusters {
        if c.len() >= min_pts {
            kept.push(c);
        } else {
            noise.extend(c);
        }
    }
    noise.sort_unstable();
    Ok(Dbscan { clusters: kept, noise })
}

/// `factor` × the median nearest-neighbor distance, floored at 1e-9; `None` below two points.
pub fn default_eps(x: &DMatrix<f64>, factor: f64) -> Option<f64> {
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| row(x, i)).collect();
    let nn: Vec<f64> = (0..rows.len())
        .map(|i| {
            (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| euclidean(&rows[i], &rows[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .collect();
    median(&nn).map(|m| (factor * m).max(1e-9))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    /// `i < j`, indices into the point set given to [`knn_boundary_pairs`].
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub modes: (usize, usize),
}

/// The `k` nearest other rows of `i`, ordered by `(distance, index)`.
pub fn nearest_neighbors(rows: &[Vec<f64>], i: usize, k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = (0..rows.len())
        .filter(|&j| j != i)
        .map(|j| (j, euclidean(&rows[i], &rows[j])))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

/// Unordered pairs `(i, j)` where one is among the other's `k` nearest
/// neighbors and their labels differ, sorted by `(distance, i, j)`.
pub fn knn_boundary_pairs(x: &DMatrix<f64>, labels: &[usize], k: usize) -> Result<Vec<BoundaryPair>> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "boundary pair labels",
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| row(x, i)).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut pairs = Vec::new();
    for i in 0..rows.len() {
        for (j, d) in nearest_neighbors(&rows, i, k) {
            if labels[i] == labels[j] {
                continue;
            }
            let (a, b) = (i.min(j), i.max(j));
            if seen.insert((a, b)) {
                pairs.push(BoundaryPair {
                    i: a,
                    j: b,
                    distance: d,
                    modes: (labels[a], labels[b]),
                });
            }
        }
    }
    pairs.sort_by(|p, q| p.distance.total_cmp(&q.distance).then(p.i.cmp(&q.i)).then(p.j.cmp(&q.j)));
    Ok(pairs)
}

/// DBSCAN outcome for one mode, with indices into the full sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCluster {
    pub mode: usize,
    pub id: usize,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeClusters {
    pub mode: usize,
    pub eps: Option<f64>,
    pub subclusters: Vec<SubCluster>,
    pub noise: Vec<usize>,
}

impl ModeClusters {
    pub fn member_count(&self) -> usize {
        self.subclusters.iter().map(|s| s.members.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseRatioRow {
    pub mode: Option<usize>,
    pub noise: usize,
    pub members: usize,
    pub ratio: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseRatioReport {
    pub rows: Vec<NoiseRatioRow>,
    pub total: NoiseRatioRow,
}

impl NoiseRatioReport {
    /// `(noise, members)` per mode, in mode order.
    pub fn from_counts(counts: &[(usize, usize)]) -> Self {
        let mk = |mode, noise, members| NoiseRatioRow {
            mode,
            noise,
            members,
            ratio: format!("{noise}:{members}"),
        };
        let rows = counts.iter().enumerate().map(|(m, &(n, k))| mk(Some(m), n, k)).collect();
        let noise = counts.iter().map(|c| c.0).sum();
        let members = counts.iter().map(|c| c.1).sum();
        Self {
            rows,
            total: mk(None, noise, members),
        }
    }
}

pub fn noise_ratio_report(modes: &[ModeClusters]) -> NoiseRatioReport {
    let counts: Vec<(usize, usize)> = modes.iter().map(|m| (m.noise.len(), m.member_count())).collect();
    NoiseRatioReport::from_counts(&counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Mean-shift bandwidth; `None` uses `bandwidth_factor` × median pairwise output distance.
    pub bandwidth: Option<f64>,
    pub bandwidth_factor: f64,
    /// DBSCAN radius on normalized inputs; `None` uses `eps_factor` × median NN distance per mode.
    pub eps: Option<f64>,
    pub eps_factor: f64,
    pub min_pts: usize,
    pub k: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            bandwidth_factor: 0.5,
            eps: None,
            eps_factor: 2.0,
            min_pts: 3,
            k: 5,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth.is_some_and(|b| !(b > 0.0)) || !(self.bandwidth_factor > 0.0) {
            return Err(Error::Config("bandwidth and bandwidth_factor must be positive".into()));
        }
        if self.eps.is_some_and(|e| !(e > 0.0)) || !(self.eps_factor > 0.0) {
            return Err(Error::Config("eps and eps_factor must be positive".into()));
        }
        if self.min_pts == 0 || self.k == 0 {
            return Err(Error::Config("min_pts and k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub samples: usize,
    pub modes: usize,
    pub bandwidth: f64,
    pub noise_ratio: NoiseRatioReport,
    pub boundary_pairs: usize,
    pub centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub normalized: DMatrix<f64>,
    pub modes: ModeAssignment,
    pub clusters: Vec<ModeClusters>,
    /// Indices into the samples; pairs only join non-noise points.
    pub pairs: Vec<BoundaryPair>,
    /// K-NN radius of every non-noise sample, `None` for noise.
    pub knn_radius: Vec<Option<f64>>,
}

impl Analysis {
    pub fn subcluster_of(&self, i: usize) -> Option<(usize, usize)> {
        let m = self.modes.labels[i];
        self.clusters[m]
            .subclusters
            .iter()
            .find(|s| s.members.binary_search(&i).is_ok())
            .map(|s| (m, s.id))
    }

    pub fn summary(&self) -> AnalysisSummary {
        AnalysisSummary {
            samples: self.x.nrows(),
            modes: self.modes.modes.len(),
            bandwidth: self.modes.bandwidth,
            noise_ratio: noise_ratio_report(&self.clusters),
            boundary_pairs: self.pairs.len(),
            centroids: self.modes.modes.iter().map(|m| m.centroid.clone()).collect(),
        }
    }

    /// `index,x1..xd,y1..yT,mode,subcluster,noise`; noise rows leave `subcluster` empty.
    pub fn write_modes_csv<W: Write>(&self, mut out: W, header_lines: &[String]) -> Result<()> {
        for l in header_lines {
            writeln!(out, "# {l}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.x.ncols()).map(|k| format!("x{k}")));
        header.extend((1..=self.y.ncols()).map(|t| format!("y{t}")));
        header.extend(["mode", "subcluster", "noise"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.x.nrows() {
            let mut r = vec![i.to_string()];
            r.extend(self.x.row(i).iter().map(|v| format!("{v:?}")));
            r.extend(self.y.row(i).iter().map(|v| format!("{v:?}")));
            r.push(self.modes.labels[i].to_string());
            let sub = self.subcluster_of(i);
            r.push(sub.map(|s| s.1.to_string()).unwrap_or_default());
            r.push(sub.is_none().to_string());
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `i,j,distance,mode_i,mode_j`
    pub fn write_pairs_csv<W: Write>(&self, mut out: W, header_lines: &[String]) -> Result<()> {
        for l in header_lines {
            writeln!(out, "# {l}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "distance", "mode_i", "mode_j"])?;
        for p in &self.pairs {
            w.write_record([
                p.i.to_string(),
                p.j.to_string(),
                format!("{:?}", p.distance),
                p.modes.0.to_string(),
                p.modes.1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Min-max normalization of `x` rows to the unit cube given per-dimension bounds.
pub fn normalize_inputs(x: &DMatrix<f64>, bounds: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    if bounds.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "normalization bounds",
            expected: x.ncols(),
            got: bounds.len(),
        });
    }
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| {
        let (a, b) = bounds[k];
        (x[(i, k)] - a) / (b - a)
    }))
}

/// Full pipeline: modes on outputs, per-mode DBSCAN, then K-NN pairing of non-noise points.
pub fn analyze(x: &DMatrix<f64>, y: &DMatrix<f64>, bounds: &[(f64, f64)], cfg: &AnalysisConfig) -> Result<Analysis> {
    cfg.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            context: "analysis samples",
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    let bandwidth = cfg.bandwidth.unwrap_or_else(|| default_bandwidth(y, cfg.bandwidth_factor));
    let modes = mean_shift_modes(y, bandwidth)?;
    let normalized = normalize_inputs(x, bounds)?;
    let mut clusters = Vec::with_capacity(modes.modes.len());
    for m in 0..modes.modes.len() {
        let idx: Vec<usize> = (0..x.nrows()).filter(|&i| modes.labels[i] == m).collect();
        let local = DMatrix::from_fn(idx.len(), x.ncols(), |r, k| normalized[(idx[r], k)]);
        let eps = cfg.eps.or_else(|| default_eps(&local, cfg.eps_factor));
        let db = match eps {
            Some(e) => dbscan_subclusters(&local, e, cfg.min_pts)?,
            None => Dbscan {
                clusters: Vec::new(),
                noise: (0..idx.len()).collect(),
            },
        };
        clusters.push(ModeClusters {
            mode: m,
            eps,
            subclusters: db
                .clusters
                .iter()
                .enumerate()
                .map(|(id, c)| SubCluster {
                    mode: m,
                    id,
                    members: c.iter().map(|&l| idx[l]).collect(),
                })
                .collect(),
            noise: db.noise.iter().map(|&l| idx[l]).collect(),
        });
    }
    let mut keep: Vec<usize> = clusters
        .iter()
        .flat_map(|c| c.subclusters.iter().flat_map(|s| s.members.iter().copied()))
        .collect();
    keep.sort_unstable();
    let kept = DMatrix::from_fn(keep.len(), x.ncols(), |r, k| normalized[(keep[r], k)]);
    let kept_labels: Vec<usize> = keep.iter().map(|&i| modes.labels[i]).collect();
    let mut knn_radius = vec![None; x.nrows()];
    let mut pairs = Vec::new();
    if keep.len() >= 2 {
        let rows: Vec<Vec<f64>> = (0..kept.nrows()).map(|i| row(&kept, i)).collect();
        for (r, &i) in keep.iter().enumerate() {
            knn_radius[i] = nearest_neighbors(&rows, r, cfg.k).last().map(|n| n.1);
        }
        pairs = knn_boundary_pairs(&kept, &kept_labels, cfg.k)?
            .into_iter()
            .map(|p| BoundaryPair {
                i: keep[p.i],
                j: keep[p.j],
                ..p
            })
            .collect();
    }
    Ok(Analysis {
        x: x.clone(),
        y: y.clone(),
        normalized,
        modes,
        clusters,
        pairs,
        knn_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_shift_examples() {
        let same = DMatrix::from_element(5, 2, 1.5);
        assert_eq!(mean_shift_modes(&same, 1.0).unwrap().modes.len(), 1);
        let two = DMatrix::from_row_slice(4, 1, &[0.0, 0.1, 10.0, 10.1]);
        let m = mean_shift_modes(&two, 1.0).unwrap();
        assert_eq!(m.labels, vec![0, 0, 1, 1]);
        assert!(mean_shift_modes(&two, 0.0).is_err());
    }

    #[test]
    fn dbscan_examples() {
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let d = dbscan_subclusters(&two, 1.0, 3).unwrap();
        assert!(d.clusters.is_empty());
        assert_eq!(d.noise, vec![0, 1]);
        let four = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 0.0, 9.0]);
        let d = dbscan_subclusters(&four, 0.5, 3).unwrap();
        assert_eq!(d.clusters, vec![vec![0, 1, 2]]);
        assert_eq!(d.noise, vec![3]);
        let strips = DMatrix::from_row_slice(6, 1, &[0.0, 0.1, 0.2, 5.0, 5.1, 5.2]);
        assert_eq!(dbscan_subclusters(&strips, 0.15, 3).unwrap().clusters.len(), 2);
    }

    #[test]
    fn pair_examples() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        assert!(knn_boundary_pairs(&x, &[0, 0, 0, 0], 2).unwrap().is_empty());
        let p = knn_boundary_pairs(&x, &[0, 0, 1, 1], 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].i, p[0].j, p[0].modes), (1, 2, (0, 1)));
        let all = knn_boundary_pairs(&x, &[0, 1, 0, 1], 3).unwrap();
        for i in 0..4 {
            assert!(all.iter().any(|p| p.i == i || p.j == i));
        }
    }

    #[test]
    fn noise_ratio_examples() {
        let r = NoiseRatioReport::from_counts(&[(0, 4), (0, 7)]);
        assert_eq!(r.rows[0].ratio, "0:4");
        assert_eq!(r.total.ratio, "0:11");
        let conventional = NoiseRatioReport::from_counts(&[(31, 129), (2, 53), (10, 35), (1, 59)]);
        assert_eq!(conventional.total.ratio, "44:276");
        let ntm = NoiseRatioReport::from_counts(&[(66, 154), (20, 52), (7, 43), (11, 56)]);
        assert_eq!(ntm.total.ratio, "104:305");
    }
}
