//! Trajectory data matrices and the exponentially weighted covariance.
//!
//! The covariance `Phi_t = D_{0,t} S_lambda D_{0,t}' / t` over the stacked
//! input/state matrix `D = [U; X]` is the algorithm's entire memory of data.
//! It supports batch construction from a log, rank-one recursive updates with
//! Sherman–Morrison inverse maintenance, an excitation check, and an
//! occasional reset that discards stale data.

use std::path::Path;

use crate::{numerics, Error, Mat, Result, Vec64};

/// Relative singular-value threshold for the persistency-of-excitation check.
pub const EPS_PE: f64 = 1e-6;
/// Floor on the Sherman–Morrison denominator; below it excitation is lost.
pub const EPS_DEN: f64 = 1e-12;
/// Recompute the inverse from scratch this often to bound floating-point drift.
const INV_REFRESH_PERIOD: usize = 500;

/// Result of the excitation check on a stacked data matrix.
#[derive(Debug, Clone, Copy)]
pub struct PeReport {
    pub ok: bool,
    pub min_singular_value: f64,
}

/// Input, state and successor-state history of one experiment.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    u0: Mat,
    x0: Mat,
    x1: Mat,
}

impl TrajectoryLog {
    pub fn new(u0: Mat, x0: Mat, x1: Mat) -> Result<Self> {
        let t = u0.ncols();
        if t == 0 || x0.ncols() != t || x1.ncols() != t {
            return Err(Error::Config("trajectory matrices must share a positive column count".into()));
        }
        if x1.nrows() != x0.nrows() {
            return Err(Error::Config("state and successor-state dimensions differ".into()));
        }
        let finite = u0.iter().chain(x0.iter()).chain(x1.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("trajectory contains non-finite entries".into()));
        }
        Ok(Self { u0, x0, x1 })
    }

    /// Empty log ready for incremental collection.
    pub fn with_dims(m: usize, n: usize) -> Self {
        Self { u0: Mat::zeros(m, 0), x0: Mat::zeros(n, 0), x1: Mat::zeros(n, 0) }
    }

    pub fn push(&mut self, u: &Vec64, x: &Vec64, x_next: &Vec64) {
        let grow = |mat: &mut Mat, col: &Vec64| {
            let t = mat.ncols();
            let mut bigger = mat.clone().insert_column(t, 0.0);
            bigger.set_column(t, col);
            *mat = bigger;
        };
        grow(&mut self.u0, u);
        grow(&mut self.x0, x);
        grow(&mut self.x1, x_next);
    }

    pub fn len(&self) -> usize {
        self.u0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    pub fn inputs(&self) -> &Mat {
        &self.u0
    }

    pub fn states(&self) -> &Mat {
        &self.x0
    }

    pub fn successors(&self) -> &Mat {
        &self.x1
    }

    /// Stacked data matrix `D = [U; X]`.
    pub fn stacked(&self) -> Mat {
        let (m, n, t) = (self.input_dim(), self.state_dim(), self.len());
        let mut d = Mat::zeros(m + n, t);
        d.view_mut((0, 0), (m, t)).copy_from(&self.u0);
        d.view_mut((m, 0), (n, t)).copy_from(&self.x0);
        d
    }

    /// Checks the rank condition `rank(D) = m + n` via relative singular values.
    pub fn pe_check(&self) -> PeReport {
        let d = self.stacked();
        let rows = d.nrows();
        let svd = d.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.len() < rows || smax == 0.0 {
            return PeReport { ok: false, min_singular_value: 0.0 };
        }
        PeReport { ok: smin > EPS_PE * smax, min_singular_value: smin }
    }

    /// Writes `k,u0..u{m-1},x0..x{n-1},x1_0..x1_{n-1}` rows with 12-digit floats.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        let (m, n) = (self.input_dim(), self.state_dim());
        let mut header = vec!["k".to_string()];
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..n).map(|i| format!("x1_{i}")));
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            row.extend((0..m).map(|i| fmt_float(self.u0[(i, k)])));
            row.extend((0..n).map(|i| fmt_float(self.x0[(i, k)])));
            row.extend((0..n).map(|i| fmt_float(self.x1[(i, k)])));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        let header = r.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        let n = header.iter().filter(|h| h.starts_with("x1_")).count();
        if m == 0 || n == 0 || header.len() != 1 + m + 2 * n {
            return Err(Error::Io(format!("unrecognized trajectory header: {header:?}")));
        }
        let mut cols_u = Vec::new();
        let mut cols_x = Vec::new();
        let mut cols_x1 = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Io(format!("bad float {s:?}: {e}")))
            };
            for i in 0..m {
                cols_u.push(parse(&rec[1 + i])?);
            }
            for i in 0..n {
                cols_x.push(parse(&rec[1 + m + i])?);
            }
            for i in 0..n {
                cols_x1.push(parse(&rec[1 + m + n + i])?);
            }
        }
        if cols_u.is_empty() {
            return Err(Error::Io("trajectory csv has no data rows".into()));
        }
        let t = cols_u.len() / m;
        let u0 = transpose_rows(m, t, &cols_u);
        let x0 = transpose_rows(n, t, &cols_x);
        let x1 = transpose_rows(n, t, &cols_x1);
        Self::new(u0, x0, x1)
    }
}

/// Builds an `rows x t` matrix from values stored sample-major.
fn transpose_rows(rows: usize, t: usize, vals: &[f64]) -> Mat {
    Mat::from_fn(rows, t, |i, k| vals[k * rows + i])
}

fn fmt_float(v: f64) -> String {
    format!("{v:.12e}")
}

/// Exponentially weighted input/state covariance and successor covariance.
#[derive(Debug, Clone)]
pub struct WeightedCovariance {
    phi: Mat,
    phi_inv: Mat,
    xbar1: Mat,
    t: usize,
    lambda: f64,
    m: usize,
    n: usize,
    updates_since_refresh: usize,
}

impl WeightedCovariance {
    /// Builds `Phi`, its inverse and `Xbar1` from a complete log.
    ///
    /// Weights are `S_lambda = diag(lambda^{t-1}, ..., lambda, 1)`: the most
    /// recent column carries weight one.
    pub fn from_batch(log: &TrajectoryLog, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Config(format!("forgetting factor {lambda} outside (0, 1]")));
        }
        let (m, n, t) = (log.input_dim(), log.state_dim(), log.len());
        if t < m + n {
            return Err(Error::RankDeficient { min_singular_value: 0.0 });
        }
        let pe = log.pe_check();
        if !pe.ok {
            return Err(Error::RankDeficient { min_singular_value: pe.min_singular_value });
        }

        let d = log.stacked();
        let mut d_scaled = d.clone();
        let mut x1_scaled = log.successors().clone();
        for k in 0..t {
            let w = lambda.powi((t - 1 - k) as i32).sqrt();
            d_scaled.column_mut(k).scale_mut(w);
            x1_scaled.column_mut(k).scale_mut(w);
        }
        let phi = numerics::sym(&(&d_scaled * d_scaled.transpose() / t as f64));
        let xbar1 = &x1_scaled * d_scaled.transpose() / t as f64;
        let phi_inv = phi.clone().try_inverse().ok_or_else(|| Error::IllConditioned {
            detail: "weighted covariance not invertible".into(),
        })?;
        Ok(Self { phi, phi_inv, xbar1, t, lambda, m, n, updates_since_refresh: 0 })
    }

    /// Rank-one recursive update with one new sample `(phi_t, x_next)`.
    ///
    /// Maintains the inverse by the Sherman–Morrison formula and refreshes it
    /// from scratch every few hundred updates to bound drift.
    pub fn update(&mut self, phi_t: &Vec64, x_next: &Vec64) -> Result<()> {
        assert_eq!(phi_t.len(), self.m + self.n, "sample dimension mismatch");
        assert_eq!(x_next.len(), self.n, "successor dimension mismatch");
        if !phi_t.iter().chain(x_next.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite sample in covariance update".into()));
        }

        let t = self.t as f64;
        let lam = self.lambda;
        let denom = lam * t + (phi_t.transpose() * &self.phi_inv * phi_t)[(0, 0)];
        if denom.abs() < EPS_DEN {
            return Err(Error::IllConditioned {
                detail: format!("Sherman-Morrison denominator {denom:.3e} below floor"),
            });
        }

        let inv_phi = &self.phi_inv * phi_t;
        let correction = &inv_phi * inv_phi.transpose() / denom;
        self.phi_inv = (&self.phi_inv - correction) * ((t + 1.0) / (lam * t));
        self.phi = numerics::sym(&((&self.phi * (lam * t) + phi_t * phi_t.transpose()) / (t + 1.0)));
        self.xbar1 = (&self.xbar1 * (lam * t) + x_next * phi_t.transpose()) / (t + 1.0);
        self.t += 1;

        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= INV_REFRESH_PERIOD {
            if let Some(fresh) = self.phi.clone().try_inverse() {
                self.phi_inv = fresh;
            }
            self.updates_since_refresh = 0;
        }
        Ok(())
    }

    /// Resets the covariance to the identity, discarding accumulated data.
    ///
    /// The successor covariance is zeroed and rebuilt from subsequent samples;
    /// callers freeze the gain until enough fresh samples accumulate.
    pub fn reset(&mut self, post_reset_t: usize) {
        let dim = self.m + self.n;
        self.phi = Mat::identity(dim, dim);
        self.phi_inv = Mat::identity(dim, dim);
        self.xbar1 = Mat::zeros(self.n, dim);
        self.t = post_reset_t.max(1);
        self.updates_since_refresh = 0;
    }

    pub fn phi(&self) -> &Mat {
        &self.phi
    }

    pub fn phi_inv(&self) -> &Mat {
        &self.phi_inv
    }

    pub fn xbar1(&self) -> &Mat {
        &self.xbar1
    }

    /// First `m` rows of `Phi`: the input/data covariance block `Ubar0`.
    pub fn ubar0(&self) -> Mat {
        self.phi.rows(0, self.m).into_owned()
    }

    /// Last `n` rows of `Phi`: the state/data covariance block `Xbar0`.
    pub fn xbar0(&self) -> Mat {
        self.phi.rows(self.m, self.n).into_owned()
    }

    pub fn sample_count(&self) -> usize {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }
}
