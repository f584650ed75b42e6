//! Run parameters, derived quantities and the critical-time schedule.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Japanese bracket with the l1 magnitude: `(1 + (|k| + |eta|)^2)^(1/2)`.
pub fn bracket(k: f64, eta: f64) -> f64 {
    let m = k.abs() + eta.abs();
    (1.0 + m * m).sqrt()
}

/// Cube root of `x`, snapped to the nearest integer when within 1e-9 of it, then floored.
pub fn snapped_floor_cbrt(x: f64) -> u32 {
    if x <= 0.0 {
        return 0;
    }
    let c = x.cbrt();
    let r = c.round();
    if (c - r).abs() < 1e-9 {
        r as u32
    } else {
        c.floor() as u32
    }
}

pub fn derive_k0(epsilon: f64, eta0: f64, kconst: f64) -> u32 {
    snapped_floor_cbrt(kconst * epsilon * eta0)
}

fn eta0_log_residual(epsilon: f64, big_r: f64, km_prime: f64, eta: f64) -> f64 {
    let k0 = derive_k0(epsilon, eta, km_prime) as f64;
    epsilon.ln() - big_r * bracket(k0, eta).ln() + 3.0 * (km_prime * epsilon).cbrt() * eta.cbrt()
}

pub const ETA_CAP: f64 = 1e12;

/// Solves `eps <k0, eta0>^(-R) exp(3 (Km' eps)^(1/3) eta0^(1/3)) = 1` by bisection on the log.
pub fn derive_eta0(epsilon: f64, big_r: f64, km_prime: f64) -> Result<f64> {
    derive_eta0_capped(epsilon, big_r, km_prime, ETA_CAP)
}

pub fn derive_eta0_capped(epsilon: f64, big_r: f64, km_prime: f64, cap: f64) -> Result<f64> {
    if !(epsilon > 0.0 && km_prime > 0.0) {
        return Err(LabError::Domain("epsilon and Km' must be positive".into()));
    }
    let res = |eta: f64| eta0_log_residual(epsilon, big_r, km_prime, eta);
    let mut lo = (1.0 / epsilon).max(1.0);
    if res(lo) >= 0.0 {
        // the root sits below 1/eps; walk down to find the last negative point
        let mut probe = lo;
        while res(probe) >= 0.0 {
            probe *= 0.5;
            if probe < 1.0 {
                return Err(LabError::NoBracket { cap });
            }
        }
        lo = probe;
    }
    let mut hi = lo * 2.0;
    while res(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            return Err(LabError::NoBracket { cap });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if res(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Residual `eps <k0,eta>^(-R) exp(3 (Km' eps eta)^(1/3)) - 1` at `eta`.
pub fn eta0_residual(epsilon: f64, big_r: f64, km_prime: f64, eta: f64) -> f64 {
    eta0_log_residual(epsilon, big_r, km_prime, eta).exp() - 1.0
}

pub fn gain_constants(kappa: f64, alpha: f64) -> Result<(f64, f64)> {
    if kappa >= 1.0 || alpha >= 1.0 || kappa < 0.0 || alpha < 0.0 {
        return Err(LabError::Domain(format!(
            "gain constants need 0 <= kappa, alpha < 1 (got {kappa}, {alpha})"
        )));
    }
    Ok((2.0 / (1.0 - kappa), 2.0 / (1.0 + alpha)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalInterval {
    pub k: u32,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSchedule {
    pub eta: f64,
    /// Sorted by decreasing `k`, i.e. increasing time.
    pub entries: Vec<CriticalInterval>,
    pub depth: u32,
}

/// Left endpoint `t_{k,eta}` of the k-th critical interval; `t_{0,eta} = 2|eta|`.
pub fn critical_time(k: u32, eta: f64) -> f64 {
    let e = eta.abs();
    if k == 0 {
        return 2.0 * e;
    }
    let kf = k as f64;
    if k == 1 {
        return 0.75 * e;
    }
    e / kf - e / (2.0 * kf * (kf + 1.0))
}

pub fn critical_interval(k: u32, eta: f64) -> CriticalInterval {
    CriticalInterval {
        k,
        start: critical_time(k, eta),
        end: critical_time(k - 1, eta),
    }
}

pub fn critical_schedule(eta: f64, k_cap: u32) -> CriticalSchedule {
    let entries = (1..=k_cap).rev().map(|k| critical_interval(k, eta)).collect();
    CriticalSchedule {
        eta,
        entries,
        depth: k_cap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k_max: u32,
    /// Mode range for the backward solve; `None` sizes it from the low-frequency phase spread.
    pub k_max_backward: Option<u32>,
    pub eta_max: Option<f64>,
    pub d_eta: f64,
    pub dt: f64,
    pub t_end: Option<f64>,
    pub rtol: f64,
    pub h_max: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    pub envelope_bound: f64,
    pub lower_bound_c: f64,
    pub fitted_c: f64,
    pub r_tilde: f64,
    pub approx_ratio: f64,
    pub correlation: f64,
    pub lower_gamma: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub epsilon: f64,
    pub delta: f64,
    pub zeta: i32,
    pub gamma0: f64,
    pub sigma: f64,
    pub big_r: f64,
    pub p: f64,
    pub q: f64,
    pub eta0: Option<f64>,
    pub km: f64,
    pub km_prime: f64,
    pub km_double_prime: f64,
    pub kappa: f64,
    pub kappa_prime: f64,
    pub kappa_double_prime: f64,
    pub alpha: f64,
    pub coupling: f64,
    pub knorm: f64,
    pub mu_infinity: f64,
    pub b_exp: f64,
    pub c_r: f64,
    pub r_norm: f64,
    pub gamma: Option<f64>,
    pub grid: GridSpec,
    pub checks: CheckSpec,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self::desk()
    }
}

impl ScenarioParams {
    /// Gravitational preset: eta0 = 4000, k0 = 4, delta = 1e-3.
    pub fn desk() -> Self {
        ScenarioParams {
            epsilon: 0.016,
            delta: 1e-3,
            zeta: -1,
            gamma0: 1.0,
            sigma: 2.0,
            big_r: 1.0,
            p: 0.5,
            q: 0.2,
            eta0: Some(4000.0),
            km: 2.0,
            km_prime: 1.0,
            km_double_prime: 2.0,
            kappa: 0.2,
            kappa_prime: 0.3,
            kappa_double_prime: 0.4,
            alpha: 0.5,
            coupling: 1.0,
            knorm: 8.0,
            mu_infinity: 13.0,
            b_exp: 0.1,
            c_r: 0.5,
            r_norm: 12.0,
            gamma: None,
            grid: GridSpec {
                k_max: 6,
                k_max_backward: None,
                eta_max: None,
                d_eta: 0.25,
                dt: 0.05,
                t_end: None,
                rtol: 1e-7,
                h_max: 0.5,
                floor: 1e-24,
            },
            checks: CheckSpec {
                envelope_bound: 10.0,
                lower_bound_c: 0.1,
                fitted_c: 10.0,
                r_tilde: 24.0,
                approx_ratio: 0.2,
                correlation: 0.95,
                lower_gamma: 4.0,
                samples: 10_000,
                seed: 0x5eed_ec40,
            },
        }
    }

    /// Electrostatic preset: same cascade geometry, delta = eps^p, alpha = 0.5, kappa = 0.2.
    pub fn desk_electrostatic() -> Self {
        let mut s = Self::desk();
        s.zeta = 1;
        s.delta = s.epsilon.powf(s.p);
        s
    }

    pub fn is_electrostatic(&self) -> bool {
        self.zeta > 0
    }

    pub fn beta(&self) -> f64 {
        self.sigma - self.big_r
    }

    /// Low-norm Sobolev index; defaults to the midpoint of its admissible window.
    pub fn gamma_low(&self) -> f64 {
        self.gamma.unwrap_or(0.75 * self.beta() + 3.5)
    }

    /// `W(k) = zeta |k|^(-1-gamma0)`.
    pub fn w_hat(&self, k: f64) -> f64 {
        self.zeta as f64 * k.abs().powf(-1.0 - self.gamma0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(LabError::Validation(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon > 0");
        }
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return fail("0 <= delta < 1");
        }
        if self.zeta != 1 && self.zeta != -1 {
            return fail("zeta in {-1, +1}");
        }
        if !(self.gamma0 >= 1.0) {
            return fail("gamma0 >= 1");
        }
        if !(self.big_r >= 1.0) {
            return fail("R >= 1");
        }
        if !(self.p > 0.0 && self.p < 1.0 && self.q > 0.0 && self.q < 1.0) {
            return fail("p, q in (0,1)");
        }
        if !(self.q < self.p.min(0.25)) {
            return fail("q < min(1/4,p)");
        }
        if !(self.km >= self.km_prime && self.km_prime > 0.0 && self.km_double_prime > 0.0) {
            return fail("Km >= Km' > 0 and Km'' > 0");
        }
        if !(0.0 < self.kappa
            && self.kappa < self.kappa_prime
            && self.kappa_prime < self.kappa_double_prime
            && self.kappa_double_prime < self.alpha
            && self.alpha < 1.0)
        {
            return fail("0 < kappa < kappa' < kappa'' < alpha < 1");
        }
        if !(self.knorm > 0.0) {
            return fail("K > 0");
        }
        if !(self.mu_infinity > 12.0) {
            return fail("mu_infinity > 12");
        }
        if !(self.b_exp > 0.0 && self.b_exp < 1.0 / 6.0) {
            return fail("b in (0,1/6)");
        }
        if !(self.c_r > 0.0 && self.c_r < 1.0) {
            return fail("c_r in (0,1)");
        }
        if !(self.r_norm > 0.0) {
            return fail("r > 0");
        }
        let lo = 0.75 * self.beta() + 3.0;
        let g = self.gamma_low();
        if !(g > lo && g < lo + 1.0) {
            return fail("gamma in (3beta/4+3, 3beta/4+4)");
        }
        if let Some(e) = self.eta0 {
            if !(e > 0.0) {
                return fail("eta0 > 0");
            }
        }
        if !(self.coupling.is_finite()) {
            return fail("coupling finite");
        }
        let g = &self.grid;
        if g.k_max < 1 {
            return fail("k_max >= 1");
        }
        if !(g.d_eta > 0.0 && g.dt > 0.0 && g.rtol > 0.0 && g.h_max > 0.0 && g.floor >= 0.0) {
            return fail("grid steps and tolerances positive");
        }
        if let Some(m) = g.eta_max {
            if !(m > 0.0) {
                return fail("eta_max > 0");
            }
        }
        Ok(())
    }

    pub fn derive(&self) -> Result<Derived> {
        self.validate()?;
        let eta0 = match self.eta0 {
            Some(e) => e,
            None => derive_eta0(self.epsilon, self.big_r, self.km_prime)?,
        };
        let k0 = derive_k0(self.epsilon, eta0, self.km_prime);
        let t_in = self.epsilon.powf(-self.q);
        let (kf, kf_prime) = gain_constants(self.kappa, self.alpha)?;
        let eps_prime = self.epsilon * bracket(k0 as f64, eta0).powf(-self.sigma);
        Ok(Derived {
            eta0,
            k0,
            t_in,
            t_star: eta0,
            eps_prime,
            kf,
            kf_prime,
            beta: self.beta(),
            gamma: self.gamma_low(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub eta0: f64,
    pub k0: u32,
    pub t_in: f64,
    pub t_star: f64,
    pub eps_prime: f64,
    pub kf: f64,
    pub kf_prime: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Derived {
    pub fn eta_max(&self, p: &ScenarioParams) -> f64 {
        p.grid.eta_max.unwrap_or(2.0 * self.eta0 + 20.0)
    }

    pub fn t_end(&self, p: &ScenarioParams) -> f64 {
        p.grid.t_end.unwrap_or(self.t_star)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k0_examples() {
        assert_eq!(derive_k0(1e-3, 1e6, 1.0), 10);
        assert_eq!(derive_k0(0.016, 4000.0, 1.0), 4);
        assert_eq!(derive_k0(7.9, 1.0, 1.0), 1);
        assert_eq!(derive_k0(1.0, 0.5, 1.0), 0);
    }

    #[test]
    fn schedule_examples() {
        let s = critical_schedule(100.0, 2);
        assert_eq!(s.entries[1], CriticalInterval { k: 1, start: 75.0, end: 200.0 });
        let i2 = s.entries[0];
        assert!((i2.start - (50.0 - 100.0 / 12.0)).abs() < 1e-12);
        assert!((i2.end - 75.0).abs() < 1e-12);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(gain_constants(0.0, 0.0).unwrap(), (2.0, 2.0));
        let (a, b) = gain_constants(0.2, 0.5).unwrap();
        assert!((a - 2.5).abs() < 1e-15 && (b - 4.0 / 3.0).abs() < 1e-15);
        assert!(gain_constants(1.0, 0.5).is_err());
    }

    #[test]
    fn desk_derivation() {
        let d = ScenarioParams::desk().derive().unwrap();
        assert_eq!(d.k0, 4);
        assert!((d.t_in - 0.016f64.powf(-0.2)).abs() < 1e-14);
        assert!(d.t_in < d.t_star);
    }

    #[test]
    fn validation_names_invariant() {
        let mut p = ScenarioParams::desk();
        p.q = 0.6;
        let e = p.validate().unwrap_err().to_string();
        assert!(e.contains("q < min(1/4,p)"), "{e}");
        let mut p = ScenarioParams::desk();
        p.kappa = 0.6;
        assert!(p.validate().is_err());
    }
}
