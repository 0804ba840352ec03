//! Log-det barrier interior-point solver for small block-diagonal SDPs.
//!
//! Standard form: minimize `c' x` subject to
//! `F_b(x) = F_{b,0} + sum_i x_i F_{b,i}` positive semidefinite for every
//! block `b`. Problems in this crate have around a dozen scalar variables and
//! blocks no larger than 5x5, so a dense Newton method on the barrier
//! subproblems is both simple and exact enough.

use crate::{Error, Mat, Result, Vec64};

pub struct SdpProblem {
    /// Objective coefficients, length `p`.
    pub c: Vec64,
    /// Constant term of each block.
    pub f0: Vec<Mat>,
    /// Coefficient matrices: `fi[b][i]` multiplies variable `i` in block `b`.
    pub fi: Vec<Vec<Mat>>,
}

pub struct SdpSolution {
    pub x: Vec64,
    pub objective: f64,
    pub phase1_iterations: usize,
    pub barrier_iterations: usize,
}

struct BarrierState {
    /// Per-block Cholesky-derived inverses of `F_b(x)`.
    inverses: Vec<Mat>,
    log_det: f64,
}

impl SdpProblem {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn total_rows(&self) -> usize {
        self.f0.iter().map(|f| f.nrows()).sum()
    }

    fn eval_block(&self, b: usize, x: &Vec64) -> Mat {
        let mut f = self.f0[b].clone();
        for (i, coeff) in self.fi[b].iter().enumerate() {
            if x[i] != 0.0 {
                f += coeff * x[i];
            }
        }
        f
    }

    /// Cholesky-factorizes every block; `None` when any block leaves the cone.
    fn factorize(&self, x: &Vec64) -> Option<BarrierState> {
        let mut inverses = Vec::with_capacity(self.f0.len());
        let mut log_det = 0.0;
        for b in 0..self.f0.len() {
            let f = self.eval_block(b, x);
            let chol = nalgebra::Cholesky::new(f)?;
            log_det += 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            inverses.push(chol.inverse());
        }
        Some(BarrierState { inverses, log_det })
    }

    fn barrier_value(&self, t: f64, x: &Vec64, state: &BarrierState) -> f64 {
        t * self.c.dot(x) - state.log_det
    }

    fn gradient_hessian(&self, t: f64, state: &BarrierState) -> (Vec64, Mat) {
        let p = self.dim();
        let mut grad = Vec64::from_fn(p, |i, _| t * self.c[i]);
        let mut hess = Mat::zeros(p, p);
        for b in 0..self.f0.len() {
            let inv = &state.inverses[b];
            // Precompute S^-1 F_i per variable.
            let products: Vec<Mat> = self.fi[b].iter().map(|f| inv * f).collect();
            for i in 0..p {
                grad[i] -= products[i].trace();
                for j in i..p {
                    let v = (&products[i] * &products[j]).trace();
                    hess[(i, j)] += v;
                    if j != i {
                        hess[(j, i)] += v;
                    }
                }
            }
        }
        (grad, hess)
    }

    /// Damped Newton descent on the barrier subproblem at parameter `t`.
    ///
    /// Returns the iteration count; `early_stop` aborts centering as soon as
    /// the predicate holds (used by the feasibility phase).
    fn center(
        &self,
        t: f64,
        x: &mut Vec64,
        early_stop: &dyn Fn(&Vec64) -> bool,
    ) -> Result<usize> {
        let mut iters = 0;
        for _ in 0..200 {
            if early_stop(x) {
                break;
            }
            let state = self.factorize(x).ok_or_else(|| Error::IllConditioned {
                detail: "barrier iterate left the PSD cone".into(),
            })?;
            let (grad, hess) = self.gradient_hessian(t, &state);
            let reg = hess + Mat::identity(self.dim(), self.dim()) * 1e-12;
            let dir = match nalgebra::Cholesky::new(reg.clone()) {
                Some(ch) => ch.solve(&(-&grad)),
                None => reg
                    .lu()
                    .solve(&(-&grad))
                    .ok_or_else(|| Error::IllConditioned { detail: "singular Newton system".into() })?,
            };
            let decrement = grad.dot(&(-&dir));
            iters += 1;
            if decrement.abs() < 1e-12 {
                break;
            }

            let base = self.barrier_value(t, x, &state);
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                let cand = &*x + alpha * &dir;
                if let Some(cand_state) = self.factorize(&cand) {
                    let val = self.barrier_value(t, &cand, &cand_state);
                    if val <= base - 0.25 * alpha * decrement {
                        *x = cand;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
            if decrement / 2.0 < 1e-11 {
                break;
            }
        }
        Ok(iters)
    }
}

/// Finds a strictly feasible point by minimizing the cone-violation slack.
fn phase1(problem: &SdpProblem, x0: &Vec64) -> Result<(Vec64, usize)> {
    let p = problem.dim();
    let mut aug_fi = Vec::with_capacity(problem.f0.len());
    for b in 0..problem.f0.len() {
        let mut per_var = problem.fi[b].clone();
        per_var.push(Mat::identity(problem.f0[b].nrows(), problem.f0[b].nrows()));
        aug_fi.push(per_var);
    }
    let mut c = Vec64::zeros(p + 1);
    c[p] = 1.0;
    let aug = SdpProblem { c, f0: problem.f0.clone(), fi: aug_fi };

    // Slack large enough to start strictly inside the augmented cone.
    let mut s0: f64 = 1.0;
    for b in 0..problem.f0.len() {
        let f = problem.eval_block(b, x0);
        let min_eig = crate::numerics::min_symmetric_eigenvalue(&crate::numerics::sym(&f));
        s0 = s0.max(-min_eig + 1.0);
    }
    let mut x = Vec64::zeros(p + 1);
    x.rows_mut(0, p).copy_from(x0);
    x[p] = s0;

    let feasible = |x: &Vec64| x[p] < -1e-7;
    let mut iterations = 0;
    let mut t = 1.0;
    for _ in 0..40 {
        iterations += aug.center(t, &mut x, &feasible)?;
        if feasible(&x) {
            return Ok((x.rows(0, p).into_owned(), iterations));
        }
        t *= 20.0;
        if t > 1e12 {
            break;
        }
    }
    Err(Error::Infeasible {
        detail: format!("no strictly feasible point found (residual slack {:.3e})", x[p]),
    })
}

/// Solves the SDP to (absolute duality-gap) tolerance `tol`.
///
/// `x0` seeds the feasibility phase; pass zeros when nothing better is known.
pub fn solve(problem: &SdpProblem, x0: &Vec64, tol: f64) -> Result<SdpSolution> {
    assert_eq!(problem.f0.len(), problem.fi.len());
    for b in 0..problem.f0.len() {
        assert_eq!(problem.fi[b].len(), problem.dim());
    }

    let (mut x, phase1_iterations) = phase1(problem, x0)?;
    let rows = problem.total_rows() as f64;
    let no_stop = |_: &Vec64| false;

    let mut barrier_iterations = 0;
    let mut t = 1.0;
    while rows / t >= tol {
        barrier_iterations += problem.center(t, &mut x, &no_stop)?;
        t *= 20.0;
    }
    barrier_iterations += problem.center(t, &mut x, &no_stop)?;

    let objective = problem.c.dot(&x);
    Ok(SdpSolution { x, objective, phase1_iterations, barrier_iterations })
}
