//! Unscented Kalman filter over two lamp centroids with a shared image-plane
//! velocity.
//!
//! State layout is `[u1, v1, u2, v2, du, dv]`: both centroids in pixels and
//! one velocity in pixels per frame. The lamps sit on a common ceiling plane
//! and move together in the image, so a lamp whose measurement is distrusted
//! still follows the motion observed through the other one.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;

pub const STATE_DIM: usize = 6;
const FACTOR_JITTER: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 2.0, kappa: 0.0 }
    }
}

impl UtParams {
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        let spread = n as f64 + self.lambda(n);
        if !(spread > 0.0) || !spread.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!("n + lambda = {spread} gives no valid weights")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl SigmaPoints {
    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.points, &self.mean_weights)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        weighted_cross(&self.points, &m, &self.points, &m, &self.cov_weights)
    }
}

fn weighted_mean(points: &[DVector<f64>], w: &[f64]) -> DVector<f64> {
    let mut m = DVector::zeros(points[0].len());
    for (p, &wi) in points.iter().zip(w) {
        m.axpy(wi, p, 1.0);
    }
    m
}

fn weighted_cross(
    a: &[DVector<f64>],
    ma: &DVector<f64>,
    b: &[DVector<f64>],
    mb: &DVector<f64>,
    w: &[f64],
) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(ma.len(), mb.len());
    for ((x, y), &wi) in a.iter().zip(b).zip(w) {
        let dx = x - ma;
        let dy = y - mb;
        c.ger(wi, &dx, &dy, 1.0);
    }
    c
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower-triangular factor `L` with `L Lᵀ = a` for positive semi-definite
/// input. Zero pivots are accepted when the rest of their column is zero too.
fn psd_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol || !d.is_finite() {
            return None;
        }
        if d <= tol {
            for i in j + 1..n {
                let mut r = a[(i, j)];
                for k in 0..j {
                    r -= l[(i, k)] * l[(j, k)];
                }
                if r.abs() > 1e-9 * scale.sqrt() * scale.sqrt().max(1.0) {
                    return None;
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut r = a[(i, j)];
            for k in 0..j {
                r -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = r / djj;
        }
    }
    Some(l)
}

/// Matrix square root used for sigma points: symmetrize, factor, and on
/// failure retry once with diagonal jitter.
pub fn covariance_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::InvalidParameter("covariance must be square".into()));
    }
    let sym = symmetrize(cov);
    if let Some(l) = psd_cholesky(&sym) {
        return Ok(l);
    }
    let jittered = &sym + DMatrix::identity(sym.nrows(), sym.nrows()) * FACTOR_JITTER;
    psd_cholesky(&jittered).ok_or(Error::NumericalDegeneracy)
}

pub fn sigma_points(mean: &DVector<f64>, cov: &DMatrix<f64>, params: &UtParams) -> Result<SigmaPoints> {
    let n = mean.len();
    if n == 0 || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::InvalidParameter("mean/covariance dimension mismatch".into()));
    }
    params.validate(n)?;
    let lambda = params.lambda(n);
    let spread = n as f64 + lambda;
    let root = covariance_sqrt(&(cov * spread))?;

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for i in 0..n {
        points.push(mean + root.column(i));
    }
    for i in 0..n {
        points.push(mean - root.column(i));
    }
    let wi = 1.0 / (2.0 * spread);
    let w0m = lambda / spread;
    let w0c = w0m + (1.0 - params.alpha * params.alpha + params.beta);
    let mut mean_weights = vec![wi; 2 * n + 1];
    let mut cov_weights = vec![wi; 2 * n + 1];
    mean_weights[0] = w0m;
    cov_weights[0] = w0c;
    Ok(SigmaPoints { points, mean_weights, cov_weights })
}

/// Mean and covariance of `f(x)` for `x ~ (mean, cov)`.
pub fn unscented_transform(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    params: &UtParams,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sp = sigma_points(mean, cov, params)?;
    let y: Vec<DVector<f64>> = sp.points.iter().map(f).collect();
    let my = weighted_mean(&y, &sp.mean_weights);
    let cy = weighted_cross(&y, &my, &y, &my, &sp.cov_weights);
    Ok((my, cy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub process: Matrix6<f64>,
    pub measurement: Matrix2<f64>,
    pub s_min: f64,
    pub s_max: f64,
    pub eps_rho: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            process: Matrix6::from_diagonal(&Vector6::new(0.25, 0.25, 0.25, 0.25, 1.0, 1.0)),
            measurement: Matrix2::identity(),
            s_min: 1.0,
            s_max: 100.0,
            eps_rho: 0.05,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_min >= 1.0 && self.s_min < self.s_max && self.s_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale bounds [{}, {}] must satisfy 1 <= s_min < s_max",
                self.s_min, self.s_max
            )));
        }
        if !(self.eps_rho > 0.0 && self.eps_rho < 1.0) {
            return Err(Error::InvalidParameter(format!("eps_rho {} outside (0, 1)", self.eps_rho)));
        }
        let q = DMatrix::from_column_slice(6, 6, self.process.as_slice());
        let r = DMatrix::from_column_slice(2, 2, self.measurement.as_slice());
        for (name, m) in [("process noise", q), ("measurement noise", r)] {
            if (&m - m.transpose()).amax() > 1e-9 || psd_cholesky(&m).is_none() {
                return Err(Error::InvalidParameter(format!("{name} must be symmetric PSD")));
            }
        }
        if self.measurement.determinant() <= 0.0 {
            return Err(Error::InvalidParameter("measurement noise must be positive definite".into()));
        }
        Ok(())
    }
}

/// Measurement-noise multiplier from a Bhattacharyya similarity.
pub fn reliability_scale(rho: f64, model: &NoiseModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidSimilarity(rho));
    }
    let r = (1.0 - rho) / rho.max(model.eps_rho);
    Ok((r * r).clamp(model.s_min, model.s_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl JointState {
    pub fn lamp(&self, k: usize) -> PixelPoint {
        PixelPoint::new(self.mean[2 * k], self.mean[2 * k + 1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[4], self.mean[5])
    }

    /// Restarts one lamp's position from a fresh detection, dropping its
    /// correlations with the rest of the state.
    pub fn reset_lamp(&mut self, k: usize, centroid: PixelPoint, p0_pos: f64) {
        let (iu, iv) = (2 * k, 2 * k + 1);
        self.mean[iu] = centroid.u;
        self.mean[iv] = centroid.v;
        for i in [iu, iv] {
            for j in 0..STATE_DIM {
                self.covariance[(i, j)] = 0.0;
                self.covariance[(j, i)] = 0.0;
            }
            self.covariance[(i, i)] = p0_pos;
        }
    }

    fn dynamic(&self) -> (DVector<f64>, DMatrix<f64>) {
        (
            DVector::from_column_slice(self.mean.as_slice()),
            DMatrix::from_column_slice(6, 6, self.covariance.as_slice()),
        )
    }

    fn from_dynamic(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        let cov = symmetrize(cov);
        Self {
            mean: Vector6::from_column_slice(mean.as_slice()),
            covariance: Matrix6::from_column_slice(cov.as_slice()),
        }
    }
}

pub fn initialize(c1: PixelPoint, c2: PixelPoint, p0_pos: f64, p0_vel: f64) -> JointState {
    JointState {
        mean: Vector6::new(c1.u, c1.v, c2.u, c2.v, 0.0, 0.0),
        covariance: Matrix6::from_diagonal(&Vector6::new(p0_pos, p0_pos, p0_pos, p0_pos, p0_vel, p0_vel)),
    }
}

fn transition(x: &DVector<f64>) -> DVector<f64> {
    let mut y = x.clone();
    y[0] += x[4];
    y[1] += x[5];
    y[2] += x[4];
    y[3] += x[5];
    y
}

/// Constant-velocity prediction, one frame ahead.
pub fn predict(state: &JointState, process: &Matrix6<f64>, params: &UtParams) -> Result<JointState> {
    let (m, p) = state.dynamic();
    let (mean, cov) = unscented_transform(&m, &p, params, transition)?;
    let q = DMatrix::from_column_slice(6, 6, process.as_slice());
    Ok(JointState::from_dynamic(&mean, &(cov + q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Updated,
    NoMeasurement,
}

/// Fuses the available lamp centroids. Lamp `k`'s measurement noise is
/// `scales[k] * measurement`.
pub fn update(
    predicted: &JointState,
    measurements: [Option<PixelPoint>; 2],
    scales: [f64; 2],
    measurement: &Matrix2<f64>,
    params: &UtParams,
) -> Result<(JointState, UpdateStatus)> {
    let present: Vec<usize> = (0..2).filter(|&k| measurements[k].is_some()).collect();
    if present.is_empty() {
        return Ok((predicted.clone(), UpdateStatus::NoMeasurement));
    }
    let m = 2 * present.len();
    let (x, p) = predicted.dynamic();
    let sp = sigma_points(&x, &p, params)?;
    let h = |s: &DVector<f64>| {
        DVector::from_iterator(m, present.iter().flat_map(|&k| [s[2 * k], s[2 * k + 1]]))
    };
    let zs: Vec<DVector<f64>> = sp.points.iter().map(h).collect();
    let z_hat = weighted_mean(&zs, &sp.mean_weights);
    let x_hat = weighted_mean(&sp.points, &sp.mean_weights);

    let mut r = DMatrix::zeros(m, m);
    for (i, &k) in present.iter().enumerate() {
        let s = scales[k];
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!("noise scale {s}")));
        }
        r.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&(measurement * s));
    }
    let pzz = symmetrize(&(weighted_cross(&zs, &z_hat, &zs, &z_hat, &sp.cov_weights) + r));
    let pxz = weighted_cross(&sp.points, &x_hat, &zs, &z_hat, &sp.cov_weights);
    let chol = pzz.clone().cholesky().ok_or(Error::NumericalDegeneracy)?;
    // K = Pxz Pzz⁻¹, solved as Pzz Kᵀ = Pxzᵀ
    let gain = chol.solve(&pxz.transpose()).transpose();

    let z = DVector::from_iterator(
        m,
        present.iter().flat_map(|&k| {
            let c = measurements[k].unwrap();
            [c.u, c.v]
        }),
    );
    let mean = &x + &gain * (z - z_hat);
    let cov = &p - &gain * &pzz * gain.transpose();
    Ok((JointState::from_dynamic(&mean, &cov), UpdateStatus::Updated))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfParams {
    pub ut: UtParams,
    pub noise: NoiseModel,
    pub p0_pos: f64,
    pub p0_vel: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { ut: UtParams::default(), noise: NoiseModel::default(), p0_pos: 4.0, p0_vel: 25.0 }
    }
}

impl UkfParams {
    pub fn validate(&self) -> Result<()> {
        self.ut.validate(STATE_DIM)?;
        self.noise.validate()?;
        if !(self.p0_pos > 0.0 && self.p0_vel > 0.0) {
            return Err(Error::InvalidParameter("initial variances must be positive".into()));
        }
        Ok(())
    }
}
