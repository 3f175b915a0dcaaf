//! Ridge regression of `x_{t+1}` on `z_t = (x_t, u_t)` with the
//! self-normalized confidence radius used by the safe clamps.

use serde::{Deserialize, Serialize};

use crate::controllers::UncertaintyBox;
use crate::dynamics::Dynamics;
use crate::{Error, Result};

/// Smallest accepted determinant of the Gram matrix.
const DET_FLOOR: f64 = 1e-300;

/// `V = lambda I + sum z z^T` and `cross = sum z x_next`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlsState {
    /// Row-major symmetric 2x2 `[[v11, v12], [v12, v22]]`.
    pub v11: f64,
    pub v12: f64,
    pub v22: f64,
    pub cross: [f64; 2],
    pub count: usize,
    pub lambda: f64,
}

impl RlsState {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("ridge weight must be positive, got {lambda}")));
        }
        Ok(Self { v11: lambda, v12: 0.0, v22: lambda, cross: [0.0; 2], count: 0, lambda })
    }

    pub fn det(&self) -> f64 {
        self.v11 * self.v22 - self.v12 * self.v12
    }

    /// In-place rank-one update.
    pub fn push(&mut self, x: f64, u: f64, x_next: f64) {
        self.v11 += x * x;
        self.v12 += x * u;
        self.v22 += u * u;
        self.cross[0] += x * x_next;
        self.cross[1] += u * x_next;
        self.count += 1;
    }

    /// `(a_hat, b_hat)` from the adjugate solve of `V theta = cross`.
    pub fn estimate(&self) -> Result<Dynamics> {
        let det = self.checked_det()?;
        let a = (self.v22 * self.cross[0] - self.v12 * self.cross[1]) / det;
        let b = (self.v11 * self.cross[1] - self.v12 * self.cross[0]) / det;
        Ok(Dynamics::estimate(a, b))
    }

    fn checked_det(&self) -> Result<f64> {
        let det = self.det();
        if !(det > DET_FLOOR) {
            return Err(Error::Numeric(format!("Gram determinant {det} not positive")));
        }
        Ok(det)
    }

    /// `sqrt(max(V11, V22) / det V)`: the data-dependent factor of the radius.
    pub fn shape_factor(&self) -> Result<f64> {
        let det = self.checked_det()?;
        Ok((self.v11.max(self.v22) / det).sqrt())
    }
}

/// Value-returning update.
pub fn rls_update(state: &RlsState, z: (f64, f64), x_next: f64) -> RlsState {
    let mut s = *state;
    s.push(z.0, z.1, x_next);
    s
}

pub fn rls_point_estimate(state: &RlsState) -> Result<Dynamics> {
    state.estimate()
}

/// Constants entering the confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInputs {
    /// Sub-Gaussian parameter of the noise.
    pub alpha: f64,
    /// Horizon `T` of the run (enters as `2 ln T^2`).
    pub t_horizon: f64,
    pub prior: UncertaintyBox,
}

impl ConfidenceInputs {
    pub fn new(alpha: f64, t_horizon: f64, prior: UncertaintyBox) -> Result<Self> {
        if !(alpha > 0.0) || !(t_horizon >= 1.0) {
            return Err(Error::Config(format!(
                "confidence inputs need alpha > 0 and T >= 1, got alpha={alpha} T={t_horizon}"
            )));
        }
        Ok(Self { alpha, t_horizon, prior })
    }
}

/// `B = alpha sqrt(ln det V + ln lambda^2 + 2 ln T^2) + sqrt(lambda) (a_hi^2 + b_hi^2)`.
///
/// Natural logarithms throughout. The radicand is clamped at zero, which only
/// matters for `lambda < 1` with almost no data.
pub fn confidence_scale(state: &RlsState, ci: &ConfidenceInputs) -> Result<f64> {
    let det = state.checked_det()?;
    let t = ci.t_horizon;
    let radicand = det.ln() + (state.lambda * state.lambda).ln() + 2.0 * (t * t).ln();
    Ok(ci.alpha * radicand.max(0.0).sqrt()
        + state.lambda.sqrt() * (ci.prior.a_upper.powi(2) + ci.prior.b_upper.powi(2)))
}

/// Sup-norm confidence radius `epsilon = B sqrt(max(V11, V22) / det V)`.
pub fn confidence_radius(state: &RlsState, ci: &ConfidenceInputs) -> Result<f64> {
    Ok(confidence_scale(state, ci)? * state.shape_factor()?)
}

/// Batch normal-equation solve `(Z^T Z + lambda I)^{-1} Z^T X`.
pub fn rls_direct_solve(regressors: &[(f64, f64)], targets: &[f64], lambda: f64) -> Result<Dynamics> {
    if regressors.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} regressors but {} targets",
            regressors.len(),
            targets.len()
        )));
    }
    // Gram entries summed independently of the incremental path.
    let zz11: f64 = regressors.iter().map(|z| z.0 * z.0).sum();
    let zz12: f64 = regressors.iter().map(|z| z.0 * z.1).sum();
    let zz22: f64 = regressors.iter().map(|z| z.1 * z.1).sum();
    let zx1: f64 = regressors.iter().zip(targets).map(|(z, y)| z.0 * y).sum();
    let zx2: f64 = regressors.iter().zip(targets).map(|(z, y)| z.1 * y).sum();
    let (m11, m12, m22) = (zz11 + lambda, zz12, zz22 + lambda);
    let det = m11 * m22 - m12 * m12;
    if !(det > DET_FLOOR) {
        return Err(Error::Numeric(format!("normal matrix determinant {det} not positive")));
    }
    Ok(Dynamics::estimate((m22 * zx1 - m12 * zx2) / det, (m11 * zx2 - m12 * zx1) / det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoiseModel;
    use crate::rng::substream;
    use rand::Rng;

    fn unit_box() -> UncertaintyBox {
        UncertaintyBox::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn update_examples() {
        let s = rls_update(&RlsState::new(1.0).unwrap(), (1.0, 1.0), 2.0);
        assert_eq!((s.v11, s.v12, s.v22), (2.0, 1.0, 2.0));
        assert_eq!(s.cross, [2.0, 2.0]);
        assert_eq!(s.count, 1);

        let s = rls_update(&RlsState::new(1.0).unwrap(), (0.0, 0.0), 5.0);
        assert_eq!((s.v11, s.v12, s.v22), (1.0, 0.0, 1.0));
        assert_eq!(s.cross, [0.0, 0.0]);
    }

    #[test]
    fn updates_commute() {
        let s0 = RlsState::new(1.0).unwrap();
        let ab = rls_update(&rls_update(&s0, (0.3, -1.0), 0.7), (2.0, 0.5), -1.5);
        let ba = rls_update(&rls_update(&s0, (2.0, 0.5), -1.5), (0.3, -1.0), 0.7);
        assert_eq!(ab, ba);
    }

    #[test]
    fn estimate_examples() {
        let s = RlsState::new(1.0).unwrap();
        assert_eq!(rls_point_estimate(&s).unwrap(), Dynamics::estimate(0.0, 0.0));
        let s = rls_update(&s, (1.0, 1.0), 2.0);
        let e = rls_point_estimate(&s).unwrap();
        assert!((e.a - 2.0 / 3.0).abs() < 1e-15 && (e.b - 2.0 / 3.0).abs() < 1e-15);

        assert_eq!(rls_direct_solve(&[], &[], 1.0).unwrap(), Dynamics::estimate(0.0, 0.0));
        let d = rls_direct_solve(&[(1.0, 1.0)], &[2.0], 1.0).unwrap();
        assert!((d.a - 2.0 / 3.0).abs() < 1e-15 && (d.b - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(rls_direct_solve(&[(1.0, 1.0)], &[], 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn noiseless_data_recovers_dynamics() {
        let mut rng = substream(3, 0);
        let mut s = RlsState::new(1.0).unwrap();
        let (mut zs, mut ys) = (vec![], vec![]);
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-2.0..2.0);
            let u: f64 = rng.random_range(-2.0..2.0);
            let y = 0.9 * x + 1.0 * u;
            s.push(x, u, y);
            zs.push((x, u));
            ys.push(y);
        }
        let e = s.estimate().unwrap();
        assert!((e.a - 0.9).abs() < 1e-3 && (e.b - 1.0).abs() < 1e-3);
        let d = rls_direct_solve(&zs, &ys, 1.0).unwrap();
        assert!((d.a - e.a).abs() <= 1e-9 * e.a.abs() && (d.b - e.b).abs() <= 1e-9 * e.b.abs());
    }

    #[test]
    fn radius_examples() {
        let ci = ConfidenceInputs::new(1.0, 1.0, unit_box()).unwrap();
        let s = RlsState::new(1.0).unwrap();
        assert!((confidence_scale(&s, &ci).unwrap() - 2.0).abs() < 1e-15);
        assert!((confidence_radius(&s, &ci).unwrap() - 2.0).abs() < 1e-15);

        let ci = ConfidenceInputs::new(1.0, std::f64::consts::E, unit_box()).unwrap();
        let s = rls_update(&s, (1.0, 1.0), 2.0);
        let b = (3f64.ln() + 4.0).sqrt() + 2.0;
        assert!((confidence_scale(&s, &ci).unwrap() - b).abs() < 1e-12);
        assert!((b - 4.258).abs() < 1e-3);
        let eps = confidence_radius(&s, &ci).unwrap();
        assert!((eps - b * (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((eps - 3.477).abs() < 1e-3);
    }

    #[test]
    fn det_and_shape_factor_monotone() {
        let mut rng = substream(8, 0);
        let mut s = RlsState::new(1.0).unwrap();
        let mut last_det = s.det();
        let mut zs = vec![];
        for _ in 0..500 {
            let z = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            s.push(z.0, z.1, 0.0);
            zs.push(z);
            assert!(s.det() >= last_det);
            assert!(s.det() >= s.lambda * s.lambda);
            last_det = s.det();
        }
        // repeating an exciting regressor does not grow the shape factor
        for z in zs.iter().take(50) {
            let before = s.shape_factor().unwrap();
            let after = rls_update(&s, *z, 0.0).shape_factor().unwrap();
            assert!(after <= before * (1.0 + 1e-12), "{before} -> {after}");
        }
    }

    #[test]
    fn radius_covers_truth_in_most_trajectories() {
        // Closed loop with u = -0.5 x + dither so both coordinates are excited.
        let truth = Dynamics::new(0.9, 1.0).unwrap();
        let prior = UncertaintyBox::around(truth, 0.1).unwrap();
        let noise = NoiseModel::gaussian();
        let horizon = 400;
        let ci = ConfidenceInputs::new(1.0, horizon as f64, prior).unwrap();
        let mut covered = 0;
        for seed in 0..500u64 {
            let mut rng = substream(seed, 0);
            let mut s = RlsState::new(1.0).unwrap();
            let mut x = 0.0;
            for _ in 0..horizon {
                let u = -0.5 * x + if rng.random::<bool>() { 0.3 } else { -0.3 };
                let next = truth.mean_next(x, u) + noise.sample(&mut rng);
                s.push(x, u, next);
                x = next;
            }
            let est = s.estimate().unwrap();
            if est.dist_inf(&truth) <= confidence_radius(&s, &ci).unwrap() {
                covered += 1;
            }
        }
        assert!(covered as f64 / 500.0 > 0.95, "coverage {covered}/500");
    }
}
