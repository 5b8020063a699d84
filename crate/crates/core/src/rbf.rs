//! Gaussian RBF networks evaluated on the desired state, plus the least-squares
//! oracle that stands in for the (unknowable) ideal weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::trajectory::{BoundsBox, DesiredState, DesiredTrajectory};

/// Ridge added to the normal matrix of every least-squares fit.
pub const DEFAULT_RIDGE: f64 = 1e-10;

/// Smallest width handed out by [`place_centers_grid`].
pub const WIDTH_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct RbfNetwork {
    dim: usize,
    centers: Vec<Vec<f64>>,
    widths: Vec<f64>,
    weights: Vec<f64>,
}

impl RbfNetwork {
    /// New network with zero weights.
    pub fn new(centers: Vec<Vec<f64>>, widths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("network needs at least one node".into()));
        }
        check_len("rbf widths", centers.len(), widths.len())?;
        let dim = centers[0].len();
        for c in &centers {
            check_len("rbf center", dim, c.len())?;
        }
        if widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("rbf widths must be positive".into()));
        }
        let n = centers.len();
        Ok(RbfNetwork {
            dim,
            centers,
            widths,
            weights: vec![0.0; n],
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_len("rbf weights", self.centers.len(), weights.len())?;
        self.weights = weights;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `S(x_d)`, with `S_i = exp(-|x_d - c_i|^2 / w_i^2)`.
    pub fn eval_basis(&self, x_d: &DesiredState) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.basis_into(x_d.as_slice(), &mut out)?;
        Ok(out)
    }

    /// Same kernel evaluated at an arbitrary state. Only the conventional
    /// (state-input) comparison fits use this; the closed loop never does.
    pub fn eval_basis_at_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.basis_into(x, &mut out)?;
        Ok(out)
    }

    pub(crate) fn basis_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("rbf input", self.dim, x.len())?;
        check_len("rbf basis buffer", self.len(), out.len())?;
        for ((c, w), o) in self.centers.iter().zip(&self.widths).zip(out.iter_mut()) {
            let d2: f64 = c.iter().zip(x).map(|(ci, xi)| (xi - ci) * (xi - ci)).sum();
            // clamp keeps every basis value strictly positive even far out
            *o = (-d2 / (w * w)).exp().max(f64::MIN_POSITIVE);
        }
        Ok(())
    }

    /// `weights^T s` using this network's own weights.
    pub fn output(&self, s: &[f64]) -> Result<f64> {
        network_output(&self.weights, s)
    }
}

/// `weights^T s`
pub fn network_output(weights: &[f64], s: &[f64]) -> Result<f64> {
    check_len("network output", weights.len(), s.len())?;
    Ok(weights.iter().zip(s).map(|(w, v)| w * v).sum())
}

/// Least-squares ideal weights and the worst residual on the fit grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealFit {
    pub w_star: Vec<f64>,
    pub eps_bar: f64,
    /// Signed residuals `target - w^T S` at every fit sample.
    pub residuals: Vec<f64>,
    /// Fit sample times (empty for fits over explicit point sets).
    pub sample_times: Vec<f64>,
}

impl IdealFit {
    pub fn w_norm_sq(&self) -> f64 {
        self.w_star.iter().map(|w| w * w).sum()
    }

    /// `W*^T diag(gamma)^{-1} W*`
    pub fn weighted_norm_sq(&self, gamma: &[f64]) -> f64 {
        self.w_star
            .iter()
            .zip(gamma)
            .map(|(w, g)| w * w / g)
            .sum()
    }
}

/// Fits `target(x)` over an explicit list of points.
pub fn fit_on_points<F>(target: F, points: &[Vec<f64>], net: &RbfNetwork, ridge: f64) -> Result<IdealFit>
where
    F: Fn(&[f64]) -> f64,
{
    let n = net.len();
    if points.len() < n {
        return Err(Error::Fit(format!(
            "{} samples cannot determine {n} weights",
            points.len()
        )));
    }
    let k = points.len();
    let mut phi = DMatrix::<f64>::zeros(k, n);
    let mut y = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; n];
    for (i, p) in points.iter().enumerate() {
        net.basis_into(p, &mut row)?;
        for (j, v) in row.iter().enumerate() {
            phi[(i, j)] = *v;
        }
        y[i] = target(p);
        if !y[i].is_finite() {
            return Err(Error::Fit(format!("target is not finite at sample {i}")));
        }
    }
    let mut normal = phi.transpose() * &phi;
    for j in 0..n {
        normal[(j, j)] += ridge;
    }
    let rhs = phi.transpose() * &y;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Fit("normal matrix is not positive definite after ridge".into()))?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("normal equations produced non-finite weights".into()));
    }
    let fitted = &phi * &w;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let eps_bar = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(IdealFit {
        w_star: w.iter().copied().collect(),
        eps_bar,
        residuals,
        sample_times: Vec::new(),
    })
}

/// Samples `x_d(t_k)`, `t_k = k * grid_step` over the trajectory horizon.
pub fn desired_samples(traj: &DesiredTrajectory, grid_step: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if !(grid_step > 0.0) {
        return Err(Error::Fit("fit grid step must be positive".into()));
    }
    let count = (traj.horizon() / grid_step).floor() as usize;
    let times: Vec<f64> = (0..=count).map(|k| k as f64 * grid_step).collect();
    let points = times
        .iter()
        .map(|&t| traj.desired_state(t).as_slice().to_vec())
        .collect();
    Ok((times, points))
}

/// Least-squares fit of `target` along the desired trajectory.
pub fn fit_ideal_weights<F>(
    target: F,
    traj: &DesiredTrajectory,
    net: &RbfNetwork,
    grid_step: f64,
    ridge: f64,
) -> Result<IdealFit>
where
    F: Fn(&[f64]) -> f64,
{
    let (times, points) = desired_samples(traj, grid_step)?;
    let mut fit = fit_on_points(&target, &points, net, ridge)?;
    // the residual bound also covers the points halfway between samples
    let mut s = vec![0.0; net.len()];
    for &t in &times {
        let mid = t + 0.5 * grid_step;
        if mid > traj.horizon() {
            break;
        }
        let xd = traj.desired_state(mid);
        net.basis_into(xd.as_slice(), &mut s)?;
        let r = target(xd.as_slice()) - network_output(&fit.w_star, &s)?;
        fit.eps_bar = fit.eps_bar.max(r.abs());
    }
    fit.sample_times = times;
    Ok(fit)
}

/// Ridge values tried by [`fit_min_bound`].
pub const RIDGE_LADDER: [f64; 13] = [
    1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0,
];

/// Among the ridge fits in [`RIDGE_LADDER`], the one minimising
/// `sigma |W*|^2 / 2 + eta eps_bar^2`, the pair's contribution to the
/// ultimate bound. Returns the fit and the chosen ridge.
pub fn fit_min_bound<F>(
    target: F,
    traj: &DesiredTrajectory,
    net: &RbfNetwork,
    grid_step: f64,
    sigma: f64,
    eta: f64,
) -> Result<(IdealFit, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let mut best: Option<(IdealFit, f64, f64)> = None;
    let mut last_err = None;
    for &ridge in &RIDGE_LADDER {
        match fit_ideal_weights(&target, traj, net, grid_step, ridge) {
            Ok(fit) => {
                let cost = 0.5 * sigma * fit.w_norm_sq() + eta * fit.eps_bar * fit.eps_bar;
                if best.as_ref().is_none_or(|b| cost < b.2) {
                    best = Some((fit, ridge, cost));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((fit, ridge, _)) => Ok((fit, ridge)),
        None => Err(last_err.unwrap_or_else(|| Error::Fit("no ridge candidate".into()))),
    }
}

/// Regular grid over the box inflated by 10% (5% per side). All nodes share
/// the nearest-neighbour spacing as width; degenerate axes collapse to one
/// coordinate.
pub fn place_centers_grid(bounds: &BoundsBox, per_axis: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if per_axis < 2 {
        return Err(Error::Config(format!(
            "per_axis must be at least 2, got {per_axis}"
        )));
    }
    if bounds.is_empty() {
        return Err(Error::Config("center box has no axes".into()));
    }
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(bounds.len());
    let mut spacing = f64::INFINITY;
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::Config(format!("invalid box interval [{lo}, {hi}]")));
        }
        let width = hi - lo;
        if width <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            axes.push(vec![0.5 * (lo + hi)]);
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let half = 0.55 * width;
        let step = 2.0 * half / (per_axis - 1) as f64;
        spacing = spacing.min(step);
        axes.push((0..per_axis).map(|i| mid - half + i as f64 * step).collect());
    }
    let width = if spacing.is_finite() {
        spacing.max(WIDTH_FLOOR)
    } else {
        WIDTH_FLOOR.max(1.0)
    };

    let mut centers: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(centers.len() * axis.len());
        for c in &centers {
            for &v in axis {
                let mut p = c.clone();
                p.push(v);
                next.push(p);
            }
        }
        centers = next;
    }
    let widths = vec![width; centers.len()];
    Ok((centers, widths))
}

/// Network with grid-placed centers over the trajectory's state box.
pub fn grid_network(traj: &DesiredTrajectory, per_axis: usize) -> Result<RbfNetwork> {
    let (centers, widths) = place_centers_grid(&traj.state_box(), per_axis)?;
    RbfNetwork::new(centers, widths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{make_reference, ReferenceSpec, SineTerm};

    fn unit_net() -> RbfNetwork {
        RbfNetwork::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn basis_examples() {
        let net = unit_net();
        let s = net.eval_basis(&DesiredState::from_point(vec![0.0, 0.0])).unwrap();
        assert_eq!(s[0], 1.0);
        // |x - c_1| = w_1 = 2
        let s = net
            .eval_basis(&DesiredState::from_point(vec![1.0, 3.0]))
            .unwrap();
        assert!((s[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((s[1] - 0.367879).abs() < 1e-6);
        let far = net
            .eval_basis(&DesiredState::from_point(vec![30.0, 30.0]))
            .unwrap();
        for v in far {
            assert!(v > 0.0 && v <= (-100.0f64).exp());
        }
    }

    #[test]
    fn basis_shape_error() {
        let net = unit_net();
        assert!(matches!(
            net.eval_basis(&DesiredState::from_point(vec![0.0])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn output_examples() {
        assert_eq!(network_output(&[0.0, 0.0], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(network_output(&[1.0, 0.0], &[0.5, 0.9]).unwrap(), 0.5);
        assert_eq!(network_output(&[2.0, 3.0], &[1.0, 1.0]).unwrap(), 5.0);
        assert!(network_output(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn widths_must_be_positive() {
        assert!(RbfNetwork::new(vec![vec![0.0]], vec![0.0]).is_err());
        assert!(RbfNetwork::new(vec![], vec![]).is_err());
    }

    #[test]
    fn grid_placement_examples() {
        let (c, w) = place_centers_grid(&vec![(0.0, 1.0), (0.0, 1.0)], 2).unwrap();
        assert_eq!(c.len(), 4);
        let expect = [(-0.05, -0.05), (-0.05, 1.05), (1.05, -0.05), (1.05, 1.05)];
        for (ci, e) in c.iter().zip(expect) {
            assert!((ci[0] - e.0).abs() < 1e-12 && (ci[1] - e.1).abs() < 1e-12);
        }
        assert!((w[0] - 1.1).abs() < 1e-12);

        let (c, w) = place_centers_grid(&vec![(0.0, 1.0)], 3).unwrap();
        assert_eq!(c.len(), 3);
        for wi in w {
            assert!((wi - 0.55).abs() < 1e-12);
        }

        let (c, w) = place_centers_grid(&vec![(0.0, 1.0), (2.0, 2.0)], 3).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|p| p[1] == 2.0));
        assert!((w[0] - 0.55).abs() < 1e-12);

        let (c, w) = place_centers_grid(&vec![(0.0, 0.0), (0.0, 0.0)], 5).unwrap();
        assert_eq!(c.len(), 1);
        assert!(w[0] >= WIDTH_FLOOR);
    }

    #[test]
    fn zero_target_fits_zero() {
        let traj = make_reference(
            &ReferenceSpec::Sinusoid {
                terms: vec![SineTerm {
                    amplitude: 1.0,
                    omega: 1.0,
                    phase: 0.0,
                }],
                offset: 0.0,
            },
            2,
            6.3,
            1e-2,
        )
        .unwrap();
        let net = grid_network(&traj, 4).unwrap();
        let fit = fit_ideal_weights(|_| 0.0, &traj, &net, 0.01, DEFAULT_RIDGE).unwrap();
        assert!(fit.w_star.iter().all(|w| *w == 0.0));
        assert_eq!(fit.eps_bar, 0.0);
    }

    #[test]
    fn too_few_samples_is_fit_error() {
        let traj = make_reference(&ReferenceSpec::Constant { value: 1.0 }, 1, 0.05, 1e-2).unwrap();
        let net = RbfNetwork::new(
            (0..10).map(|i| vec![i as f64]).collect(),
            vec![1.0; 10],
        )
        .unwrap();
        assert!(matches!(
            fit_ideal_weights(|_| 1.0, &traj, &net, 0.01, DEFAULT_RIDGE),
            Err(Error::Fit(_))
        ));
    }
}
