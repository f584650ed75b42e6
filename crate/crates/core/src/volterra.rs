//! Linearized density dynamics: closed-form resolvents and a product-trapezoid
//! solver for second-kind Volterra equations.

use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::history::DensityHistory;
use crate::quad;
use crate::scenario::ScenarioParams;
use crate::C64;

/// Fourier transform of the background `4 pi delta / (1 + v^2)`: `2 pi delta e^{-|xi|}`.
pub fn f0_hat(xi: f64, delta: f64) -> f64 {
    2.0 * PI * delta * (-xi.abs()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventKernel {
    pub zeta: i32,
    pub delta: f64,
    pub gamma0: f64,
    pub k: i64,
}

impl ResolventKernel {
    pub fn new(zeta: i32, delta: f64, gamma0: f64, k: i64) -> Self {
        ResolventKernel { zeta, delta, gamma0, k }
    }

    pub fn for_mode(p: &ScenarioParams, k: i64) -> Self {
        Self::new(p.zeta, p.delta, p.gamma0, k)
    }

    fn kabs(&self) -> f64 {
        (self.k as f64).abs()
    }

    /// `sqrt(delta) |k|^((1 - gamma0)/2)`.
    pub fn frequency(&self) -> f64 {
        self.delta.sqrt() * self.kabs().powf(0.5 * (1.0 - self.gamma0))
    }

    fn check(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return Err(LabError::Domain(format!("resolvent needs 0 <= delta < 1, got {}", self.delta)));
        }
        if self.k == 0 {
            return Err(LabError::Domain("resolvent needs k != 0".into()));
        }
        Ok(())
    }

    /// Memory kernel `-(1/2pi) |k|^2 W(k) s f0_hat(k s)` of the linear density equation.
    pub fn memory(&self, s: f64) -> f64 {
        let k = self.kabs();
        let w = self.zeta as f64 * k.powf(-1.0 - self.gamma0);
        -(1.0 / (2.0 * PI)) * k * k * w * s * f0_hat(k * s, self.delta)
    }

    /// The resolvent written as `sum_j c_j exp(lambda_j s)`.
    pub fn exponentials(&self) -> [(C64, C64); 2] {
        let a = self.frequency();
        let k = self.kabs();
        if self.zeta < 0 {
            [
                (C64::new(0.5 * a, 0.0), C64::new(a - k, 0.0)),
                (C64::new(-0.5 * a, 0.0), C64::new(-a - k, 0.0)),
            ]
        } else {
            // -a sin(a s) e^{-ks} = (i a / 2)(e^{(ia-k)s} - e^{(-ia-k)s})
            [
                (C64::new(0.0, 0.5 * a), C64::new(-k, a)),
                (C64::new(0.0, -0.5 * a), C64::new(-k, -a)),
            ]
        }
    }
}

pub fn resolvent(t: f64, kernel: &ResolventKernel) -> Result<f64> {
    kernel.check()?;
    if kernel.delta == 0.0 {
        return Ok(0.0);
    }
    let a = kernel.frequency();
    let damp = (-kernel.kabs() * t).exp();
    Ok(if kernel.zeta < 0 {
        a * (a * t).sinh() * damp
    } else {
        -a * (a * t).sin() * damp
    })
}

/// Uniformly sampled forcing `H(t)` starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingHistory {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<C64>,
}

impl ForcingHistory {
    pub fn from_fn(t0: f64, dt: f64, n: usize, mut f: impl FnMut(f64) -> C64) -> Self {
        let values = (0..n).map(|i| f(t0 + i as f64 * dt)).collect();
        ForcingHistory { t0, dt, values }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.t0 + i as f64 * self.dt).collect()
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(LabError::Domain("forcing grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

fn single_mode(h: &ForcingHistory, k: i64, values: Vec<C64>) -> DensityHistory {
    DensityHistory {
        times: h.times(),
        modes: vec![k],
        values: vec![values],
    }
}

/// `rho = H + int_{t0}^t R(t - tau) H(tau) dtau` with the integral by composite trapezoid.
pub fn solve_linear_closed(h: &ForcingHistory, kernel: &ResolventKernel) -> Result<DensityHistory> {
    h.check()?;
    kernel.check()?;
    let n = h.values.len();
    let lag: Vec<f64> = (0..n)
        .map(|j| resolvent(j as f64 * h.dt, kernel))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        if i > 0 {
            acc += h.values[0] * (0.5 * lag[i]);
            for j in 1..i {
                acc += h.values[j] * lag[i - j];
            }
            acc += h.values[i] * (0.5 * lag[0]);
        }
        out.push(h.values[i] + acc * h.dt);
    }
    Ok(single_mode(h, kernel.k, out))
}

/// Same trapezoid sums as [`solve_linear_closed`] in linear time, using that the resolvent is a
/// sum of exponentials: each one is carried across a panel by a single multiplication.
pub fn solve_linear_recursive(h: &ForcingHistory, kernel: &ResolventKernel) -> Result<DensityHistory> {
    h.check()?;
    kernel.check()?;
    let n = h.values.len();
    let mut out = Vec::with_capacity(n);
    if kernel.delta == 0.0 {
        out.extend_from_slice(&h.values);
        return Ok(single_mode(h, kernel.k, out));
    }
    let terms = kernel.exponentials();
    let decay: Vec<C64> = terms.iter().map(|(_, l)| (l * h.dt).exp()).collect();
    let mut acc = [C64::new(0.0, 0.0); 2];
    out.push(h.values[0]);
    for i in 1..n {
        let mut sum = C64::new(0.0, 0.0);
        for (j, (c, _)) in terms.iter().enumerate() {
            acc[j] = acc[j] * decay[j] + (h.values[i - 1] * decay[j] + h.values[i]) * (0.5 * h.dt);
            sum += c * acc[j];
        }
        out.push(h.values[i] + sum);
    }
    Ok(single_mode(h, kernel.k, out))
}

/// Exact solution for `H(t) = exp(mu (t - t0))` on `[t0, t]`.
pub fn exponential_response(kernel: &ResolventKernel, mu: C64, t0: f64, t: f64) -> C64 {
    let s = t - t0;
    let mut acc = (mu * s).exp();
    if kernel.delta == 0.0 {
        return acc;
    }
    for (c, lam) in kernel.exponentials() {
        let d = mu - lam;
        let term = if d.norm() < 1e-300 {
            (lam * s).exp() * s
        } else {
            ((mu * s).exp() - (lam * s).exp()) / d
        };
        acc += c * term;
    }
    acc
}

/// Product-trapezoid stepping for `rho(t) = H(t) + int_{t0}^t K(t,tau) rho(tau) dtau`.
pub fn solve_volterra_discrete(
    h: &ForcingHistory,
    mut kernel_fn: impl FnMut(f64, f64) -> C64,
) -> Result<Vec<C64>> {
    h.check()?;
    let n = h.values.len();
    let dt = h.dt;
    let t = |i: usize| h.t0 + i as f64 * dt;
    let mut rho: Vec<C64> = Vec::with_capacity(n);
    for i in 0..n {
        if i == 0 {
            rho.push(h.values[0]);
            continue;
        }
        let ti = t(i);
        let mut acc = kernel_fn(ti, t(0)) * rho[0] * 0.5;
        for (j, r) in rho.iter().enumerate().take(i).skip(1) {
            acc += kernel_fn(ti, t(j)) * r;
        }
        let diag = C64::new(1.0, 0.0) - kernel_fn(ti, ti) * (0.5 * dt);
        if diag.norm() < 1e-12 {
            return Err(LabError::SingularStep { t: ti });
        }
        rho.push((h.values[i] + acc * dt) / diag);
    }
    Ok(rho)
}

/// Same scheme as [`solve_volterra_discrete`] for kernels depending on `t - tau` only.
pub fn solve_volterra_convolution(h: &ForcingHistory, lag_kernel: impl Fn(f64) -> C64) -> Result<Vec<C64>> {
    h.check()?;
    let n = h.values.len();
    let dt = h.dt;
    let lag: Vec<C64> = (0..n).map(|j| lag_kernel(j as f64 * dt)).collect();
    let diag = C64::new(1.0, 0.0) - lag[0] * (0.5 * dt);
    if diag.norm() < 1e-12 {
        return Err(LabError::SingularStep { t: h.t0 });
    }
    let mut rho: Vec<C64> = Vec::with_capacity(n);
    for i in 0..n {
        if i == 0 {
            rho.push(h.values[0]);
            continue;
        }
        let mut acc = lag[i] * rho[0] * 0.5;
        for j in 1..i {
            acc += lag[i - j] * rho[j];
        }
        rho.push((h.values[i] + acc * dt) / diag);
    }
    Ok(rho)
}

/// Weighted integral `int_0^inf exp(rate |k| tau) |R(tau, k)| dtau`.
pub fn resolvent_l1_check(kernel: &ResolventKernel, rate: f64) -> Result<f64> {
    kernel.check()?;
    if kernel.delta == 0.0 {
        return Ok(0.0);
    }
    let a = kernel.frequency();
    let k = kernel.kabs();
    let decay = if kernel.zeta < 0 { k * (1.0 - rate) - a } else { k * (1.0 - rate) };
    if !(decay > 0.0) {
        return Err(LabError::Domain(format!(
            "weighted resolvent is not integrable (net decay rate {decay})"
        )));
    }
    let end = 80.0 / decay;
    let mut breaks = Vec::new();
    if kernel.zeta > 0 {
        let mut z = PI / a;
        while z < end && breaks.len() < 10_000 {
            breaks.push(z);
            z += PI / a;
        }
    }
    let f = |tau: f64| (rate * k * tau).exp() * resolvent(tau, kernel).unwrap_or(0.0).abs();
    Ok(quad::integrate_pieces(f, 0.0, end, &breaks, 1e-12, 1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f0_examples() {
        assert!((f0_hat(0.0, 1.0) - 2.0 * PI).abs() < 1e-15);
        assert_eq!(f0_hat(3.0, 0.0), 0.0);
        assert!((f0_hat(1.0, 0.5) - 1.155_727_349_790_921_7).abs() < 1e-12);
    }

    #[test]
    fn resolvent_examples() {
        let g = ResolventKernel::new(-1, 0.04, 1.0, 1);
        let e = ResolventKernel::new(1, 0.04, 1.0, 1);
        assert!((resolvent(1.0, &g).unwrap() - 0.2 * 0.2f64.sinh() * (-1.0f64).exp()).abs() < 1e-15);
        assert!((resolvent(1.0, &g).unwrap() - 0.014_813_475).abs() < 1e-9);
        assert!((resolvent(1.0, &e).unwrap() + 0.014_617_272).abs() < 1e-9);
        let z = ResolventKernel::new(-1, 0.0, 1.0, 2);
        assert_eq!(resolvent(3.0, &z).unwrap(), 0.0);
        assert!(resolvent(1.0, &ResolventKernel::new(-1, 1.0, 1.0, 1)).is_err());
    }

    #[test]
    fn zero_delta_is_identity() {
        let h = ForcingHistory::from_fn(0.0, 0.1, 50, |t| C64::new(t.cos(), t));
        let k = ResolventKernel::new(-1, 0.0, 1.0, 1);
        let r = solve_linear_closed(&h, &k).unwrap();
        assert_eq!(r.values[0], h.values);
    }

    #[test]
    fn constant_forcing_matches_antiderivative() {
        let d: f64 = 0.04;
        let a = d.sqrt();
        let h = ForcingHistory::from_fn(0.0, 1e-3, 10_001, |_| C64::new(1.0, 0.0));
        let k = ResolventKernel::new(-1, d, 1.0, 1);
        let r = solve_linear_closed(&h, &k).unwrap();
        for (i, t) in h.times().iter().enumerate().step_by(500) {
            let exact = 1.0
                + 0.5 * a * (((a - 1.0) * t).exp() - 1.0) / (a - 1.0)
                + 0.5 * a * ((-(a + 1.0) * t).exp() - 1.0) / (a + 1.0);
            assert!((r.values[0][i].re - exact).abs() / exact < 1e-6);
        }
    }

    #[test]
    fn unit_kernel_gives_exponential() {
        let h = ForcingHistory::from_fn(0.0, 1e-3, 5001, |_| C64::new(1.0, 0.0));
        let rho = solve_volterra_discrete(&h, |_, _| C64::new(1.0, 0.0)).unwrap();
        for (i, t) in h.times().iter().enumerate().step_by(250) {
            assert!((rho[i].re - t.exp()).abs() / t.exp() < 1e-4);
        }
    }

    #[test]
    fn zero_kernel_returns_forcing() {
        let h = ForcingHistory::from_fn(1.0, 0.5, 20, |t| C64::new(t, -t));
        let rho = solve_volterra_discrete(&h, |_, _| C64::new(0.0, 0.0)).unwrap();
        assert_eq!(rho, h.values);
    }

    #[test]
    fn singular_step_detected() {
        let h = ForcingHistory::from_fn(0.0, 0.5, 4, |_| C64::new(1.0, 0.0));
        let r = solve_volterra_discrete(&h, |_, _| C64::new(4.0, 0.0));
        assert!(matches!(r, Err(LabError::SingularStep { .. })));
    }

    #[test]
    fn exponentials_reproduce_resolvent() {
        for zeta in [-1, 1] {
            let k = ResolventKernel::new(zeta, 0.03, 1.5, 2);
            for &s in &[0.0, 0.3, 2.0, 7.0] {
                let sum: C64 = k.exponentials().iter().map(|(c, l)| c * (l * s).exp()).sum();
                assert!((sum.re - resolvent(s, &k).unwrap()).abs() < 1e-14);
                assert!(sum.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn literal_weight_diverges_for_unit_mode() {
        let k = ResolventKernel::new(-1, 0.01, 1.0, 1);
        assert!(resolvent_l1_check(&k, 1.0 - 0.1).is_err());
    }

    #[test]
    fn recursive_linear_solve_matches_direct_sums() {
        for zeta in [-1, 1] {
            let kernel = ResolventKernel::new(zeta, 0.04, 1.0, 2);
            let h = ForcingHistory::from_fn(0.5, 0.01, 600, |t| C64::new((-t).exp(), 0.3 * t.sin()));
            let a = solve_linear_closed(&h, &kernel).unwrap();
            let b = solve_linear_recursive(&h, &kernel).unwrap();
            for (x, y) in a.values[0].iter().zip(&b.values[0]) {
                assert!((x - y).norm() < 1e-13, "{x} {y}");
            }
        }
    }
}
