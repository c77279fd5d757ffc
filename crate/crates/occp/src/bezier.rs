//! Bernstein basis construction and Bezier trajectory evaluation.
//!
//! Trajectories are parameterized by `n`-th order Bezier curves sampled on a
//! discrete horizon of `N` steps spanning `T` seconds. The basis matrices and
//! their time derivatives are precomputed once per configuration and reused.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Binomial coefficient computed in floating point; exact for the small
/// orders used here.
fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Bernstein polynomial B_{i,n}(nu) = C(n,i) nu^i (1-nu)^(n-i).
pub fn bernstein(i: usize, n: usize, nu: f64) -> Result<f64> {
    if i > n {
        return Err(Error::Domain(format!("bernstein index {i} exceeds order {n}")));
    }
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Domain(format!("bernstein parameter {nu} outside [0,1]")));
    }
    Ok(binomial(n, i) * nu.powi(i as i32) * (1.0 - nu).powi((n - i) as i32))
}

// d-th derivative w.r.t. nu, via B'_{i,n} = n (B_{i-1,n-1} - B_{i,n-1}).
// Out-of-range indices contribute zero.
fn bernstein_deriv(i: i64, n: i64, nu: f64, d: u32) -> f64 {
    if i < 0 || i > n {
        return 0.0;
    }
    if d == 0 {
        return binomial(n as usize, i as usize) * nu.powi(i as i32) * (1.0 - nu).powi((n - i) as i32);
    }
    n as f64 * (bernstein_deriv(i - 1, n - 1, nu, d - 1) - bernstein_deriv(i, n - 1, nu, d - 1))
}

/// Precomputed basis matrices over the discrete horizon.
///
/// Each matrix is (n+1) x N with column k sampled at nu_k = k/N. The d-th
/// derivative matrices carry the chain-rule factor T^-d so that products with
/// control points yield physical-time derivatives. Rows at nu = 1 (step N)
/// are stored separately for terminal constraints.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub order: usize,
    pub steps: usize,
    pub duration: f64,
    pub w: DMatrix<f64>,
    pub dw: DMatrix<f64>,
    pub ddw: DMatrix<f64>,
    pub dddw: DMatrix<f64>,
    /// Basis row at nu = 1.
    pub w_end: DVector<f64>,
    /// First-derivative row at nu = 1 (scaled by 1/T).
    pub dw_end: DVector<f64>,
}

impl BasisSet {
    pub fn dt(&self) -> f64 {
        self.duration / self.steps as f64
    }
}

/// Builds the four basis matrices for order `n`, `steps` horizon samples and
/// duration `t` seconds.
pub fn build_basis(n: usize, steps: usize, t: f64) -> Result<BasisSet> {
    if n < 3 {
        return Err(Error::Domain(format!("basis order {n} < 3")));
    }
    if steps < 2 {
        return Err(Error::Domain(format!("horizon steps {steps} < 2")));
    }
    if t <= 0.0 {
        return Err(Error::Domain(format!("horizon duration {t} <= 0")));
    }
    let rows = n + 1;
    let mut mats = [
        DMatrix::zeros(rows, steps),
        DMatrix::zeros(rows, steps),
        DMatrix::zeros(rows, steps),
        DMatrix::zeros(rows, steps),
    ];
    for k in 0..steps {
        let nu = k as f64 / steps as f64;
        for i in 0..rows {
            for (d, mat) in mats.iter_mut().enumerate() {
                mat[(i, k)] = bernstein_deriv(i as i64, n as i64, nu, d as u32) / t.powi(d as i32);
            }
        }
    }
    let [w, dw, ddw, dddw] = mats;
    let mut w_end = DVector::zeros(rows);
    let mut dw_end = DVector::zeros(rows);
    for i in 0..rows {
        w_end[i] = bernstein_deriv(i as i64, n as i64, 1.0, 0);
        dw_end[i] = bernstein_deriv(i as i64, n as i64, 1.0, 1) / t;
    }
    Ok(BasisSet { order: n, steps, duration: t, w, dw, ddw, dddw, w_end, dw_end })
}

/// Control-point matrices for the coupled trajectory pair.
///
/// Column 0 is the exploration trajectory, column 1 the fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub theta: DMatrix<f64>,
}

impl ControlPoints {
    pub fn zeros(order: usize) -> Self {
        let m = DMatrix::zeros(order + 1, 2);
        Self { x: m.clone(), y: m.clone(), theta: m }
    }

    pub fn check(&self, basis: &BasisSet) -> Result<()> {
        let rows = basis.order + 1;
        for (name, m) in [("C_x", &self.x), ("C_y", &self.y), ("C_theta", &self.theta)] {
            if m.nrows() != rows || m.ncols() != 2 {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x2",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} contains non-finite entries")));
            }
        }
        Ok(())
    }
}

/// Per-step discrete states for one trajectory.
#[derive(Debug, Clone, Default)]
pub struct DiscreteTrajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub jx: Vec<f64>,
    pub jy: Vec<f64>,
}

impl DiscreteTrajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn speed(&self, k: usize) -> f64 {
        self.vx[k].hypot(self.vy[k])
    }
}

/// Evaluates both trajectories from control points, including derivatives up
/// to jerk.
pub fn evaluate(cp: &ControlPoints, basis: &BasisSet) -> Result<[DiscreteTrajectory; 2]> {
    cp.check(basis)?;
    let mut out = [DiscreteTrajectory::default(), DiscreteTrajectory::default()];
    for (j, traj) in out.iter_mut().enumerate() {
        let cx = cp.x.column(j);
        let cy = cp.y.column(j);
        let ct = cp.theta.column(j);
        let n = basis.steps;
        traj.x = (basis.w.transpose() * cx).iter().copied().collect();
        traj.y = (basis.w.transpose() * cy).iter().copied().collect();
        traj.theta = (basis.w.transpose() * ct).iter().copied().collect();
        traj.vx = (basis.dw.transpose() * cx).iter().copied().collect();
        traj.vy = (basis.dw.transpose() * cy).iter().copied().collect();
        traj.ax = (basis.ddw.transpose() * cx).iter().copied().collect();
        traj.ay = (basis.ddw.transpose() * cy).iter().copied().collect();
        traj.jx = (basis.dddw.transpose() * cx).iter().copied().collect();
        traj.jy = (basis.dddw.transpose() * cy).iter().copied().collect();
        debug_assert_eq!(traj.x.len(), n);
    }
    Ok(out)
}
