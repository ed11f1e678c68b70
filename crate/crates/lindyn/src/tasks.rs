//! Training tasks, their covariance statistics and the SVD structure the
//! closed-form solution is written in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Random,
    Hierarchy,
    Custom,
}

/// Paired samples: inputs `x` (n_in × P) and targets `y` (n_out × P), with
/// `(1/P) X Xᵀ = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub x: Mat,
    pub y: Mat,
    pub seed: Option<u64>,
    pub kind: TaskKind,
}

impl TaskData {
    /// Wraps existing samples, rejecting inputs that are not whitened.
    pub fn new(x: Mat, y: Mat, kind: TaskKind) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::Dimension(format!(
                "x has {} samples, y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
        let task = TaskData { x, y, seed: None, kind };
        let dev = task.whitening_error();
        if dev > 1e-8 {
            return Err(Error::Precondition(format!("inputs not whitened (deviation {dev:e})")));
        }
        Ok(task)
    }

    pub fn n_in(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    /// `‖(1/P) X Xᵀ − I‖_max`.
    pub fn whitening_error(&self) -> f64 {
        let p = self.n_samples() as f64;
        let sxx = &self.x * self.x.transpose() / p;
        linalg::max_abs_diff(&sxx, &Mat::identity(self.n_in(), self.n_in()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TaskFile::from(self)).expect("task serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TaskFile = serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        let x = linalg::from_row_major(&f.x).ok_or_else(|| Error::Serde("ragged X".into()))?;
        let y = linalg::from_row_major(&f.y).ok_or_else(|| Error::Serde("ragged Y".into()))?;
        if x.shape() != (f.n_in, f.n_samples) || y.shape() != (f.n_out, f.n_samples) {
            return Err(Error::Serde("declared shape does not match data".into()));
        }
        Ok(TaskData { x, y, seed: f.seed, kind: f.kind })
    }
}

#[derive(Serialize, Deserialize)]
struct TaskFile {
    n_in: usize,
    n_out: usize,
    n_samples: usize,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    y: Vec<Vec<f64>>,
    seed: Option<u64>,
    kind: TaskKind,
}

impl From<&TaskData> for TaskFile {
    fn from(t: &TaskData) -> Self {
        TaskFile {
            n_in: t.n_in(),
            n_out: t.n_out(),
            n_samples: t.n_samples(),
            x: linalg::to_row_major(&t.x),
            y: linalg::to_row_major(&t.y),
            seed: t.seed,
            kind: t.kind,
        }
    }
}

/// Rescales raw samples so that `(1/P) X Xᵀ = I` exactly: with `X = U S Vᵀ`,
/// the whitened inputs are `√P · U Vᵀ`.
pub fn whiten(raw: &Mat) -> Result<Mat> {
    let (n_in, p) = raw.shape();
    if p < n_in {
        return Err(Error::Dimension(format!("{p} samples cannot whiten {n_in} inputs")));
    }
    let d = linalg::svd(raw);
    if let Some(&smin) = d.s.last() {
        if smin < 1e-12 {
            return Err(Error::RankDeficient(smin));
        }
    }
    Ok(&d.u * d.v.transpose() * (p as f64).sqrt())
}

/// Whitened Gaussian inputs with independent Gaussian targets of standard
/// deviation `sigma_y / √n_out`.
pub fn make_random_regression(
    n_in: usize,
    n_out: usize,
    n_samples: usize,
    sigma_y: f64,
    seed: u64,
) -> Result<TaskData> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::Dimension("dimensions must be positive".into()));
    }
    if n_samples < n_in {
        return Err(Error::Dimension(format!(
            "{n_samples} samples cannot whiten {n_in} inputs"
        )));
    }
    if !(sigma_y > 0.0) {
        return Err(Error::Precondition("sigma_y must be positive".into()));
    }
    let mut rng = linalg::rng(seed);
    let raw = linalg::randn(n_in, n_samples, &mut rng);
    let x = whiten(&raw)?;
    let y = linalg::randn(n_out, n_samples, &mut rng) * (sigma_y / (n_out as f64).sqrt());
    Ok(TaskData { x, y, seed: Some(seed), kind: TaskKind::Random })
}

/// Unperturbed label block of the eight-item hierarchy (rows are features,
/// columns items; 1 = left child, −1 = right child, 0 = not below that node).
pub const HIERARCHY_LABELS: [[f64; 8]; 8] = [
    [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0],
];

/// Eight-item semantic hierarchy.
///
/// Items are one-hot inputs, scaled to `X = √8 · I` so that `(1/8) X Xᵀ = I`
/// holds exactly. Targets are the label block times 8, with item column `i`
/// (1-based) multiplied by `1 + 0.1/i` so that no two singular values
/// coincide. The resulting cross-covariance is `Σʸˣ = √8 · Y_perturbed / 8`.
pub fn make_semantic_hierarchy() -> TaskData {
    let n = 8;
    let x = Mat::identity(n, n) * (n as f64).sqrt();
    let mut y = Mat::from_fn(n, n, |i, j| 8.0 * HIERARCHY_LABELS[i][j]);
    for j in 0..n {
        y.column_mut(j).scale_mut(1.0 + 0.1 / (j as f64 + 1.0));
    }
    TaskData { x, y, seed: None, kind: TaskKind::Hierarchy }
}

/// Sample covariances `Σˣˣ = XXᵀ/P`, `Σʸˣ = YXᵀ/P`, `Σʸʸ = YYᵀ/P`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataStats {
    pub sigma_xx: Mat,
    pub sigma_yx: Mat,
    pub sigma_yy: Mat,
}

impl DataStats {
    pub fn n_in(&self) -> usize {
        self.sigma_yx.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.sigma_yx.nrows()
    }

    /// Irreducible loss `½ tr Σʸʸ − ½ tr(Σʸˣ Σʸˣᵀ)` under whitened inputs.
    pub fn loss_floor(&self) -> f64 {
        0.5 * self.sigma_yy.trace() - 0.5 * self.sigma_yx.norm_squared()
    }
}

pub fn compute_statistics(task: &TaskData) -> DataStats {
    let p = task.n_samples() as f64;
    DataStats {
        sigma_xx: &task.x * task.x.transpose() / p,
        sigma_yx: &task.y * task.x.transpose() / p,
        sigma_yy: &task.y * task.y.transpose() / p,
    }
}

/// Compact SVD `Σʸˣ = Ũ S̃ Ṽᵀ` plus the completion of the basis on the taller side.
///
/// With `n_out > n_in`, `[Ũ Ũ⊥]` is orthonormal and `Ṽ⊥` is an
/// `n_in × (n_out − n_in)` zero block; with `n_in > n_out` the roles swap;
/// square tasks have empty completion blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
    pub u_perp: Mat,
    pub v_perp: Mat,
}

impl TaskSvd {
    pub fn n_in(&self) -> usize {
        self.v.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn sigma_yx(&self) -> Mat {
        linalg::scale_cols(&self.u, &self.s) * self.v.transpose()
    }

    /// Decomposes an arbitrary full-rank cross-covariance.
    pub fn from_matrix(sigma_yx: &Mat) -> Result<Self> {
        let (n_out, n_in) = sigma_yx.shape();
        let d = linalg::svd(sigma_yx);
        if let Some(&smin) = d.s.last() {
            if smin < 1e-12 {
                return Err(Error::RankDeficient(smin));
            }
        }
        let k = n_out.abs_diff(n_in);
        let (u_perp, v_perp) = if n_out > n_in {
            (linalg::orth_complement(&d.u), Mat::zeros(n_in, k))
        } else if n_in > n_out {
            (Mat::zeros(n_out, k), linalg::orth_complement(&d.v))
        } else {
            (Mat::zeros(n_out, 0), Mat::zeros(n_in, 0))
        };
        Ok(TaskSvd { u: d.u, s: d.s, v: d.v, u_perp, v_perp })
    }
}

pub fn task_svd(stats: &DataStats) -> Result<TaskSvd> {
    TaskSvd::from_matrix(&stats.sigma_yx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_regression_is_whitened() {
        let t = make_random_regression(3, 2, 10, 10f64.sqrt(), 0).unwrap();
        assert!(t.whitening_error() < 1e-8);
        assert_eq!(t.y.shape(), (2, 10));
    }

    #[test]
    fn square_sample_count_gives_scaled_orthogonal_frame() {
        let t = make_random_regression(2, 2, 2, 1.0, 7).unwrap();
        let q = &t.x / 2f64.sqrt();
        assert!(linalg::max_abs_diff(&(q.transpose() * &q), &Mat::identity(2, 2)) < 1e-12);
        assert!(t.whitening_error() < 1e-12);
    }

    #[test]
    fn too_few_samples_is_rejected() {
        assert!(matches!(make_random_regression(4, 2, 3, 1.0, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn json_round_trip() {
        let t = make_random_regression(3, 2, 5, 1.0, 4).unwrap();
        let back = TaskData::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn hierarchy_first_column() {
        let t = make_semantic_hierarchy();
        let expected = [1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for (i, e) in expected.iter().enumerate() {
            assert!((t.y[(i, 0)] - 8.0 * e * 1.1).abs() < 1e-12);
        }
        assert!(t.whitening_error() < 1e-12);
    }

    #[test]
    fn identity_map_has_identity_cross_covariance() {
        let t = make_random_regression(3, 3, 12, 1.0, 1).unwrap();
        let t = TaskData::new(t.x.clone(), t.x.clone(), TaskKind::Custom).unwrap();
        let s = compute_statistics(&t);
        assert!(linalg::max_abs_diff(&s.sigma_yx, &Mat::identity(3, 3)) < 1e-8);
        assert!(s.loss_floor().abs() < 1e-10);
    }

    #[test]
    fn identity_svd() {
        let svd = TaskSvd::from_matrix(&Mat::identity(2, 2)).unwrap();
        assert_eq!(svd.s, vec![1.0, 1.0]);
        assert_eq!(svd.u_perp.ncols(), 0);
        assert_eq!(svd.v_perp.ncols(), 0);
        assert!(linalg::max_abs_diff(&svd.sigma_yx(), &Mat::identity(2, 2)) < 1e-14);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(TaskSvd::from_matrix(&m), Err(Error::RankDeficient(_))));
    }
}
