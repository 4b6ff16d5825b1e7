//! Small dense convex QP solver: `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`.
//!
//! Operator splitting (ADMM) in the OSQP style with over-relaxation and
//! residual-balanced step-size updates, followed by an active-set polish that
//! solves the KKT system of the detected active constraints exactly.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Iterations between step-size updates.
    pub adapt_every: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            max_iter: 20_000,
            adapt_every: 25,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("lower bound exceeds upper bound on constraint {0}")]
    EmptyBounds(usize),
    #[error("KKT matrix is not positive definite")]
    NotConvex,
}

impl Qp {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest bound violation of `x`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..ax.len())
            .map(|i| (self.l[i] - ax[i]).max(ax[i] - self.u[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn solve(&self, x0: Option<&DVector<f64>>, st: &QpSettings) -> Result<QpSolution, QpError> {
        let n = self.q.len();
        let m = self.l.len();
        if let Some(i) = (0..m).find(|&i| self.l[i] > self.u[i]) {
            return Err(QpError::EmptyBounds(i));
        }
        let at = self.a.transpose();
        let ata = &at * &self.a;
        let project = |v: &DVector<f64>| {
            DVector::from_iterator(m, (0..m).map(|i| v[i].clamp(self.l[i], self.u[i])))
        };

        let mut rho = st.rho;
        let factor = |rho: f64| {
            let k = &self.p + DMatrix::identity(n, n) * st.sigma + &ata * rho;
            k.cholesky().ok_or(QpError::NotConvex)
        };
        let mut chol = factor(rho)?;
        let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
        let mut z = project(&(&self.a * &x));
        let mut y = DVector::zeros(m);
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=st.max_iter {
            iterations = it;
            let rhs = &x * st.sigma - &self.q + &at * (&z * rho - &y);
            let xt = chol.solve(&rhs);
            let zt = &self.a * &xt;
            x = &xt * st.alpha + &x * (1.0 - st.alpha);
            let zr = &zt * st.alpha + &z * (1.0 - st.alpha);
            let z_new = project(&(&zr + &y / rho));
            y += (&zr - &z_new) * rho;
            z = z_new;

            if it % st.adapt_every == 0 || it == st.max_iter {
                let ax = &self.a * &x;
                let px = &self.p * &x;
                let aty = &at * &y;
                let r_prim = (&ax - &z).amax();
                let r_dual = (&px + &self.q + &aty).amax();
                let prim_scale = ax.amax().max(z.amax());
                let dual_scale = px.amax().max(aty.amax()).max(self.q.amax());
                if r_prim <= st.eps_abs + st.eps_rel * prim_scale
                    && r_dual <= st.eps_abs + st.eps_rel * dual_scale
                {
                    converged = true;
                    break;
                }
                let num = r_prim / prim_scale.max(1e-30);
                let den = r_dual / dual_scale.max(1e-30);
                if num > 0.0 && den > 0.0 {
                    let new_rho = (rho * (num / den).sqrt()).clamp(1e-6, 1e6);
                    if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                        rho = new_rho;
                        chol = factor(rho)?;
                    }
                }
            }
        }
        let mut sol = QpSolution {
            x,
            y,
            iterations,
            converged,
            polished: false,
        };
        if st.polish {
            self.polish(&mut sol);
        }
        Ok(sol)
    }

    /// Solve the equality-constrained problem on the constraints whose duals
    /// are nonzero; keep it only if feasible and no worse.
    fn polish(&self, sol: &mut QpSolution) {
        let n = self.q.len();
        let m = self.l.len();
        let ax = &self.a * &sol.x;
        let tol = 1e-9;
        let mut active: Vec<(usize, f64)> = Vec::new();
        for i in 0..m {
            let lower = sol.y[i] < -tol || (self.u[i] - self.l[i]).abs() < tol;
            let upper = sol.y[i] > tol;
            if lower && (ax[i] - self.l[i]).abs() < 1e-4 * (1.0 + self.l[i].abs()) {
                active.push((i, self.l[i]));
            } else if upper && (ax[i] - self.u[i]).abs() < 1e-4 * (1.0 + self.u[i].abs()) {
                active.push((i, self.u[i]));
            }
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&self.q));
        for (r, (i, b)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.a[(*i, j)];
                kkt[(j, n + r)] = self.a[(*i, j)];
            }
            rhs[n + r] = *b;
        }
        let Some(s) = kkt.lu().solve(&rhs) else {
            return;
        };
        let x = s.rows(0, n).into_owned();
        if !x.iter().all(|v| v.is_finite()) {
            return;
        }
        let mult = s.rows(n, k).into_owned();
        let signs_ok = active.iter().zip(mult.iter()).all(|((i, b), l)| {
            // multiplier sign must match the side of the bound
            let at_upper = (*b - self.u[*i]).abs() < tol && (self.u[*i] - self.l[*i]).abs() >= tol;
            let at_lower = (*b - self.l[*i]).abs() < tol && (self.u[*i] - self.l[*i]).abs() >= tol;
            !(at_upper && *l < -1e-9 || at_lower && *l > 1e-9)
        });
        if signs_ok
            && self.violation(&x) <= 1e-9
            && self.objective(&x) <= self.objective(&sol.x) + 1e-9
        {
            sol.x = x;
            sol.polished = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_quadratic() {
        // min (x0 - 2)^2 + (x1 + 1)^2, 0 <= x <= 1  ->  (1, 0)
        let qp = Qp {
            p: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])),
            q: DVector::from_vec(vec![-4.0, 2.0]),
            a: DMatrix::identity(2, 2),
            l: DVector::from_vec(vec![0.0, 0.0]),
            u: DVector::from_vec(vec![1.0, 1.0]),
        };
        let s = qp.solve(None, &QpSettings::default()).unwrap();
        assert!(
            (s.x[0] - 1.0).abs() < 1e-9 && s.x[1].abs() < 1e-9,
            "{:?}",
            s.x
        );
    }

    #[test]
    fn coupled_constraint() {
        // min x0^2 + x1^2  s.t.  x0 + x1 >= 2  ->  (1, 1)
        let qp = Qp {
            p: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])),
            q: DVector::zeros(2),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            l: DVector::from_vec(vec![2.0]),
            u: DVector::from_vec(vec![f64::INFINITY]),
        };
        let s = qp.solve(None, &QpSettings::default()).unwrap();
        assert!(
            (s.x[0] - 1.0).abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9,
            "{:?}",
            s.x
        );
    }
}
