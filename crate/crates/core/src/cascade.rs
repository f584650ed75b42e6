//! Second-iterate echo system: coupled density Volterra equations, distribution
//! reconstruction, growth factors and the checks built on them.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::history::DensityHistory;
use crate::scenario::{critical_interval, critical_time, snapped_floor_cbrt, Derived, ScenarioParams};
use crate::vlasov::SpectralField;
use crate::volterra::{f0_hat, solve_volterra_convolution, ForcingHistory, ResolventKernel};
use crate::C64;

/// Kernel tails below `exp(-WINDOW)` are dropped.
const WINDOW: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GrowthFamily {
    Y,
    C,
    D,
    DPrime,
    X,
    XPrime,
}

impl GrowthFamily {
    pub fn constant(self, p: &ScenarioParams, d: &Derived) -> f64 {
        match self {
            GrowthFamily::Y | GrowthFamily::C => p.km,
            GrowthFamily::D => p.km_prime,
            GrowthFamily::DPrime => p.km_double_prime,
            GrowthFamily::X => d.kf,
            GrowthFamily::XPrime => d.kf_prime,
        }
    }
}

pub fn growth_depth(eta: f64, kconst: f64, epsilon: f64) -> u32 {
    snapped_floor_cbrt(kconst * epsilon * eta.abs())
}

/// `prod_{j=k+1}^{N} K eps eta / j^3`, or 1 when `k >= N`.
pub fn growth_factor(k: u32, eta: f64, kconst: f64, epsilon: f64) -> f64 {
    let n = growth_depth(eta, kconst, epsilon);
    let x = kconst * epsilon * eta.abs();
    let mut v = 1.0;
    let mut j = n;
    while j > k {
        let jf = j as f64;
        v *= x / (jf * jf * jf);
        j -= 1;
    }
    v
}

/// Natural log of `prod_{j=1}^{n} x / j^3 = x^n / (n!)^3`.
pub fn ln_inclusive_product(x: f64, n: u32) -> f64 {
    (1..=n).map(|j| x.ln() - 3.0 * (j as f64).ln()).sum()
}

pub fn ln_stirling_envelope(eta: f64, kconst: f64, epsilon: f64) -> f64 {
    let x = kconst * epsilon * eta.abs();
    -0.5 * x.ln() + 3.0 * x.cbrt()
}

/// `(K eps eta)^(-1/2) exp(3 (K eps eta)^(1/3))`; infinite when it overflows.
pub fn stirling_envelope(eta: f64, kconst: f64, epsilon: f64) -> Result<f64> {
    if kconst * epsilon * eta.abs() < 1.0 {
        return Err(LabError::Domain("Stirling envelope needs K eps eta >= 1".into()));
    }
    Ok(ln_stirling_envelope(eta, kconst, epsilon).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthProfile {
    pub family: GrowthFamily,
    pub kconst: f64,
    pub depth: u32,
    /// `values[k-1]` for `k = 1..=k_max`.
    pub values: Vec<f64>,
}

impl GrowthProfile {
    pub fn build(family: GrowthFamily, kconst: f64, epsilon: f64, eta0: f64, k_max: u32) -> Self {
        let depth = growth_depth(eta0, kconst, epsilon);
        let top = k_max.max(depth);
        let x = kconst * epsilon * eta0.abs();
        let mut vals = vec![1.0; top as usize + 1];
        let mut k = depth;
        while k > 1 {
            let kf = k as f64;
            vals[k as usize - 1] = vals[k as usize] * x / (kf * kf * kf);
            k -= 1;
        }
        let values = (1..=k_max).map(|k| vals[k as usize]).collect();
        GrowthProfile { family, kconst, depth, values }
    }

    pub fn for_scenario(family: GrowthFamily, p: &ScenarioParams, d: &Derived) -> Self {
        Self::build(family, family.constant(p, d), p.epsilon, d.eta0, p.grid.k_max.max(d.k0))
    }

    pub fn get(&self, k: i64) -> f64 {
        let k = k.unsigned_abs() as usize;
        if k == 0 || k > self.values.len() {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Gravitational,
    Electrostatic,
}

/// High-frequency data on modes `k = +-k0`, split into the four bump components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HighFreqData {
    pub variant: Variant,
    pub eps_prime: f64,
    /// Fourier amplitude of each bump.
    pub amplitude: f64,
    pub decay: f64,
    pub k0: i64,
    pub eta0: f64,
    /// `[++, +-, -+, --]`: (bump at +eta0 on k0), (+eta0 on -k0), (-eta0 on k0), (-eta0 on -k0).
    pub components: [bool; 4],
}

impl HighFreqData {
    pub fn from_scenario(p: &ScenarioParams, d: &Derived) -> Self {
        let (variant, amplitude, decay) = if p.is_electrostatic() {
            (Variant::Electrostatic, 2.0 * PI * d.eps_prime, p.alpha)
        } else {
            (Variant::Gravitational, d.eps_prime, 0.5)
        };
        HighFreqData {
            variant,
            eps_prime: d.eps_prime,
            amplitude,
            decay,
            k0: d.k0 as i64,
            eta0: d.eta0,
            components: [true; 4],
        }
    }

    pub fn only_plus_plus(mut self) -> Self {
        self.components = [true, false, false, false];
        self
    }

    pub fn zero(mut self) -> Self {
        self.components = [false; 4];
        self
    }

    fn bumps(&self, k: i64) -> [(bool, f64); 2] {
        let c = self.components;
        if k == self.k0 {
            [(c[0], self.eta0), (c[2], -self.eta0)]
        } else if k == -self.k0 {
            [(c[1], self.eta0), (c[3], -self.eta0)]
        } else {
            [(false, 0.0), (false, 0.0)]
        }
    }

    pub fn value(&self, k: i64, eta: f64) -> f64 {
        self.bumps(k)
            .iter()
            .filter(|b| b.0)
            .map(|&(_, c)| self.amplitude * (-self.decay * (eta - c).abs()).exp())
            .sum()
    }

    pub fn d_eta(&self, k: i64, eta: f64) -> f64 {
        self.bumps(k)
            .iter()
            .filter(|b| b.0)
            .map(|&(_, c)| {
                let x = eta - c;
                -self.decay * sign(x) * self.amplitude * (-self.decay * x.abs()).exp()
            })
            .sum()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfTerm {
    /// Background term integrated directly with the memory kernel.
    Direct,
    /// Background term folded through the closed-form resolvent.
    Resolvent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeOptions {
    pub self_term: SelfTerm,
    pub t_end: Option<f64>,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions {
            self_term: SelfTerm::Direct,
            t_end: None,
        }
    }
}

/// Values `exp(-|x0 + j*step|)` for `j = 0..count`, built by geometric recurrences.
fn exp_abs_series(x0: f64, step: f64, count: usize, out: &mut Vec<f64>) {
    out.clear();
    if count == 0 {
        return;
    }
    let grow = step.abs().exp();
    let shrink = 1.0 / grow;
    let mut j = 0;
    while j < count {
        let x = x0 + j as f64 * step;
        let mut v = (-x.abs()).exp();
        out.push(v);
        j += 1;
        // extend while |x| moves monotonically
        let toward_zero = x * step < 0.0;
        let factor = if toward_zero { grow } else { shrink };
        while j < count {
            let xn = x0 + j as f64 * step;
            if toward_zero && xn * x <= 0.0 {
                break;
            }
            v *= factor;
            out.push(v);
            j += 1;
        }
    }
}

struct Coupling {
    src: usize,
    coef: f64,
    ell: f64,
}

/// Solves the second-iterate density system on `[t_in, t_end]`.
pub fn run_second_iterate(p: &ScenarioParams, data: &HighFreqData) -> Result<DensityHistory> {
    run_second_iterate_with(p, data, CascadeOptions::default())
}

pub fn run_second_iterate_with(p: &ScenarioParams, data: &HighFreqData, opts: CascadeOptions) -> Result<DensityHistory> {
    let d = p.derive()?;
    let dt = p.grid.dt;
    let k_max = p.grid.k_max;
    if dt * k_max as f64 > 0.5 {
        return Err(LabError::GridTooCoarse { value: dt * k_max as f64 });
    }
    let t0 = d.t_in;
    let t_end = opts.t_end.unwrap_or_else(|| d.t_end(p));
    if !(t_end > t0) {
        return Err(LabError::Domain(format!("t_end {t_end} must exceed t_in {t0}")));
    }
    let steps = ((t_end - t0) / dt).ceil() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| t0 + i as f64 * dt).collect();
    let modes = DensityHistory::symmetric_modes(k_max);
    let nm = modes.len();
    let idx = |k: i64| modes.iter().position(|&m| m == k);

    let kernels: Vec<ResolventKernel> = modes.iter().map(|&k| ResolventKernel::for_mode(p, k)).collect();
    let lag_len = |rate: f64| ((WINDOW / rate.max(1e-12)) / dt).ceil() as usize + 2;
    let self_lag: Vec<Vec<f64>> = kernels
        .iter()
        .map(|kr| {
            let rate = (kr.k as f64).abs();
            (0..lag_len(rate).min(steps + 1)).map(|j| kr.memory(j as f64 * dt)).collect()
        })
        .collect();
    let res_lag: Vec<Vec<f64>> = if opts.self_term == SelfTerm::Resolvent {
        kernels
            .iter()
            .map(|kr| {
                let rate = (kr.k as f64).abs() - if kr.zeta < 0 { kr.frequency() } else { 0.0 };
                (0..lag_len(rate).min(steps + 1))
                    .map(|j| crate::volterra::resolvent(j as f64 * dt, kr))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let couplings: Vec<Vec<Coupling>> = modes
        .iter()
        .map(|&k| {
            [k - 1, k + 1]
                .iter()
                .filter(|&&l| l != 0)
                .filter_map(|&l| {
                    idx(l).map(|src| Coupling {
                        src,
                        coef: -p.epsilon * p.coupling * l as f64 * p.w_hat(l as f64) * k as f64,
                        ell: l as f64,
                    })
                })
                .collect()
        })
        .collect();

    let mut rho = vec![vec![C64::new(0.0, 0.0); steps + 1]; nm];
    let mut g_hist = if opts.self_term == SelfTerm::Resolvent {
        vec![vec![C64::new(0.0, 0.0); steps + 1]; nm]
    } else {
        Vec::new()
    };
    let mut ebuf = Vec::new();
    for n in 0..=steps {
        let tn = times[n];
        for (mi, &k) in modes.iter().enumerate() {
            let kf = k as f64;
            let mut g = C64::new(data.value(k, kf * tn), 0.0);
            if n > 0 && p.coupling != 0.0 {
                for c in &couplings[mi] {
                    // |k tn - ell tau| <= WINDOW
                    let (a, b) = {
                        let u = (kf * tn - WINDOW) / c.ell;
                        let v = (kf * tn + WINDOW) / c.ell;
                        (u.min(v), u.max(v))
                    };
                    let ja = (((a - t0) / dt).floor().max(0.0)) as usize;
                    let jb = ((((b - t0) / dt).ceil()) as isize).min(n as isize - 1);
                    if jb < ja as isize {
                        continue;
                    }
                    let jb = jb as usize;
                    let x0 = kf * tn - c.ell * times[ja];
                    exp_abs_series(x0, -c.ell * dt, jb - ja + 1, &mut ebuf);
                    let src = &rho[c.src];
                    let mut acc = C64::new(0.0, 0.0);
                    for (o, j) in (ja..=jb).enumerate() {
                        let w = if j == 0 { 0.5 } else { 1.0 };
                        acc += src[j] * (w * (tn - times[j]) * ebuf[o]);
                    }
                    g += acc * (c.coef * dt);
                }
            }
            let value = match opts.self_term {
                SelfTerm::Direct => {
                    let lag = &self_lag[mi];
                    let mut acc = C64::new(0.0, 0.0);
                    let lo = n.saturating_sub(lag.len() - 1);
                    for j in lo..n {
                        let w = if j == 0 { 0.5 } else { 1.0 };
                        acc += rho[mi][j] * (w * lag[n - j]);
                    }
                    g + acc * dt
                }
                SelfTerm::Resolvent => {
                    g_hist[mi][n] = g;
                    let lag = &res_lag[mi];
                    let mut acc = C64::new(0.0, 0.0);
                    let lo = n.saturating_sub(lag.len() - 1);
                    for j in lo..n {
                        let w = if j == 0 { 0.5 } else { 1.0 };
                        acc += g_hist[mi][j] * (w * lag[n - j]);
                    }
                    g + acc * dt
                }
            };
            rho[mi][n] = value;
        }
    }
    Ok(DensityHistory {
        times,
        modes,
        values: rho,
    })
}

/// Samples of the distribution on a mode set and frequency list.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSlice {
    pub t: f64,
    pub modes: Vec<i64>,
    pub etas: Vec<f64>,
    /// `values[m][j]` at `(modes[m], etas[j])`.
    pub values: Vec<Vec<C64>>,
}

impl DistributionSlice {
    pub fn get(&self, k: i64, j: usize) -> C64 {
        self.modes
            .iter()
            .position(|&m| m == k)
            .map(|i| self.values[i][j])
            .unwrap_or_default()
    }
}

/// Trapezoid nodes `(index, weight)` covering `[t0, t]`, plus the interpolation weight of the end point.
fn quadrature_plan(times: &[f64], t: f64) -> (usize, f64) {
    let m = times.partition_point(|&x| x <= t + 1e-12 * t.abs().max(1.0));
    let m = m.max(1) - 1;
    let theta = if m + 1 < times.len() {
        ((t - times[m]) / (times[m + 1] - times[m])).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (m, theta)
}

fn reconstruct_impl(
    rho: &DensityHistory,
    data: &HighFreqData,
    p: &ScenarioParams,
    t: f64,
    kgrid: &[i64],
    etagrid: &[f64],
    moment: bool,
) -> DistributionSlice {
    let times = &rho.times;
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    let (m, theta) = quadrature_plan(times, t);
    let t_last = times.get(m).copied().unwrap_or(t);
    let interp = |series: &[C64], j: usize| -> C64 {
        if j + 1 < series.len() {
            series[j] * (1.0 - theta) + series[j + 1] * theta
        } else {
            series[j]
        }
    };
    let mut values = Vec::with_capacity(kgrid.len());
    for &k in kgrid {
        let kf = k as f64;
        let mut row = Vec::with_capacity(etagrid.len());
        for &eta in etagrid {
            let mut f = C64::new(if moment { data.d_eta(k, eta) } else { data.value(k, eta) }, 0.0);
            if times.is_empty() {
                row.push(f);
                continue;
            }
            // term integrands as functions of tau and the sampled density
            let self_w = -(1.0 / (2.0 * PI)) * p.w_hat(kf) * kf;
            let self_g = |tau: f64| -> f64 {
                let xi = eta - kf * tau;
                if xi.abs() > WINDOW {
                    return 0.0;
                }
                if moment {
                    f0_hat(xi, p.delta) * (1.0 - xi.abs())
                } else {
                    xi * f0_hat(xi, p.delta)
                }
            };
            let mut parts: Vec<(Option<&[C64]>, f64, Box<dyn Fn(f64) -> f64 + '_>)> = Vec::new();
            if k != 0 {
                parts.push((rho.series(k), self_w, Box::new(self_g)));
            }
            for l in [k - 1, k + 1] {
                if l == 0 {
                    continue;
                }
                let lf = l as f64;
                let coef = -p.epsilon * p.coupling * lf * p.w_hat(lf);
                let g = move |tau: f64| -> f64 {
                    let y = eta - lf * tau;
                    if y.abs() > WINDOW {
                        return 0.0;
                    }
                    let x = eta - kf * tau;
                    let e = (-y.abs()).exp();
                    if moment {
                        e * (1.0 - x * sign(y))
                    } else {
                        x * e
                    }
                };
                parts.push((rho.series(l), coef, Box::new(g)));
            }
            for (series, coef, g) in parts {
                let Some(s) = series else { continue };
                if coef == 0.0 {
                    continue;
                }
                // restrict to nodes where the kernel window is open
                let mut acc = C64::new(0.0, 0.0);
                for (j, &tau) in times.iter().enumerate().take(m + 1) {
                    let gv = g(tau);
                    if gv == 0.0 {
                        continue;
                    }
                    let mut w = if j == 0 || j == m { 0.5 } else { 1.0 };
                    if j == m {
                        w += 0.5 * theta;
                    }
                    if m == 0 {
                        w = 0.5 * theta;
                    }
                    acc += s[j] * (w * gv);
                }
                if theta > 0.0 && m + 1 < times.len() {
                    let tt = t_last + theta * dt;
                    acc += interp(s, m) * (0.5 * theta * g(tt));
                }
                f += acc * (coef * dt);
            }
            row.push(f);
        }
        values.push(row);
    }
    DistributionSlice {
        t,
        modes: kgrid.to_vec(),
        etas: etagrid.to_vec(),
        values,
    }
}

/// Integrates the distribution equation in time from the initial data.
pub fn reconstruct_distribution(
    rho: &DensityHistory,
    data: &HighFreqData,
    p: &ScenarioParams,
    t: f64,
    kgrid: &[i64],
    etagrid: &[f64],
) -> DistributionSlice {
    reconstruct_impl(rho, data, p, t, kgrid, etagrid, false)
}

/// `d/d eta` of [`reconstruct_distribution`], with the integrand differentiated analytically.
pub fn moment_distribution(
    rho: &DensityHistory,
    data: &HighFreqData,
    p: &ScenarioParams,
    t: f64,
    kgrid: &[i64],
    etagrid: &[f64],
) -> DistributionSlice {
    reconstruct_impl(rho, data, p, t, kgrid, etagrid, true)
}

/// [`reconstruct_distribution`] on every point of a solver grid at once.
///
/// Each history node only touches the frequencies inside its kernel window, and nodes whose
/// density is below `floor` times the history maximum are skipped.
pub fn reconstruct_field(
    rho: &DensityHistory,
    data: &HighFreqData,
    p: &ScenarioParams,
    t: f64,
    template: &SpectralField,
) -> SpectralField {
    let mut out = template.same_grid(t);
    let n = out.n_eta;
    let times = &rho.times;
    let top = rho
        .values
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, v| m.max(v.norm()));
    let cut = p.grid.floor * top.max(data.amplitude);
    let (m, theta) = quadrature_plan(times, t);
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    // (time, weight, node index, partial-panel flag)
    let mut nodes: Vec<(f64, f64, usize, bool)> = Vec::new();
    if !times.is_empty() {
        for (j, &tau) in times.iter().enumerate().take(m + 1) {
            let mut w = if j == 0 || j == m { 0.5 } else { 1.0 };
            if j == m {
                w += 0.5 * theta;
            }
            if m == 0 {
                w = 0.5 * theta;
            }
            nodes.push((tau, w, j, false));
        }
        if theta > 0.0 && m + 1 < times.len() {
            nodes.push((times[m] + theta * dt, 0.5 * theta, m, true));
        }
    }
    let value_at = |s: &[C64], j: usize, partial: bool| -> C64 {
        if partial {
            s[j] * (1.0 - theta) + s[j + 1] * theta
        } else {
            s[j]
        }
    };
    let span = (2.0 * WINDOW / out.d_eta).ceil() as usize + 2;
    for k in out.modes().collect::<Vec<_>>() {
        let kf = k as f64;
        let mut acc: Vec<C64> = (0..n)
            .map(|j| C64::new(data.value(k, out.eta(j)), 0.0))
            .collect();
        let mut parts: Vec<(&[C64], f64, f64)> = Vec::new();
        if k != 0 {
            if let Some(s) = rho.series(k) {
                parts.push((s, -(1.0 / (2.0 * PI)) * p.w_hat(kf) * kf, kf));
            }
        }
        for l in [k - 1, k + 1] {
            if l == 0 {
                continue;
            }
            if let Some(s) = rho.series(l) {
                let lf = l as f64;
                parts.push((s, -p.epsilon * p.coupling * lf * p.w_hat(lf), lf));
            }
        }
        for (pi, &(series, coef, speed)) in parts.iter().enumerate() {
            let is_self = k != 0 && pi == 0 && speed == kf;
            for &(tau, w, j, partial) in &nodes {
                let v = value_at(series, j, partial);
                if v.norm() < cut {
                    continue;
                }
                let c = speed * tau;
                let lo = ((c - WINDOW + out.eta_max) / out.d_eta).floor().max(0.0) as usize;
                if lo >= n {
                    continue;
                }
                let hi = (lo + span).min(n - 1);
                let scale = v * (w * coef * dt);
                for (i, a) in acc.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    let eta = -out.eta_max + i as f64 * out.d_eta;
                    let y = eta - c;
                    if y.abs() > WINDOW {
                        continue;
                    }
                    let g = if is_self {
                        y * f0_hat(y, p.delta)
                    } else {
                        (eta - kf * tau) * (-y.abs()).exp()
                    };
                    *a += scale * g;
                }
            }
        }
        for a in &mut acc {
            if a.norm() < cut {
                *a = C64::new(0.0, 0.0);
            }
        }
        out.set_row(k, 0, acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub max_ratio: f64,
    pub at_t: f64,
    pub at_k: i64,
    pub bound: f64,
    pub pass: bool,
}

/// `r(t) = 1/4 + (1/4)(t_in/t)^b`.
pub fn envelope_rate(t: f64, t_in: f64, b: f64) -> f64 {
    0.25 + 0.25 * (t_in / t).powf(b)
}

/// Ratio of `|rho|` to the predicted localisation envelope, maximised over the history.
pub fn check_envelope(rho: &DensityHistory, p: &ScenarioParams, data: &HighFreqData) -> Result<EnvelopeReport> {
    let d = p.derive()?;
    let k0 = data.k0.max(1) as f64;
    let (profile, electro) = match data.variant {
        Variant::Gravitational => (GrowthProfile::for_scenario(GrowthFamily::C, p, &d), false),
        Variant::Electrostatic => (GrowthProfile::for_scenario(GrowthFamily::X, p, &d), true),
    };
    let mut best = (0.0f64, d.t_in, 0i64);
    for (mi, &k) in rho.modes.iter().enumerate() {
        let ka = k.unsigned_abs() as f64;
        let gk = profile.get(k);
        for (i, &t) in rho.times.iter().enumerate() {
            let a = rho.values[mi][i].norm();
            if a == 0.0 {
                continue;
            }
            let ln_env = if electro {
                data.amplitude.ln() + gk.ln() - p.kappa * (data.eta0 - ka * t).abs()
            } else {
                data.amplitude.ln() + gk.ln()
                    - envelope_rate(t, d.t_in, p.b_exp) * (data.eta0 - ka * t).abs()
                    - ka / k0
            };
            let r = (a.ln() - ln_env).exp();
            if r > best.0 {
                best = (r, t, k);
            }
        }
    }
    let bound = p.checks.envelope_bound;
    Ok(EnvelopeReport {
        max_ratio: best.0,
        at_t: best.1,
        at_k: best.2,
        bound,
        pass: best.0 <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub variant: Variant,
    pub t: f64,
    /// Smallest observed `|f| / bound` over points where the bound is positive.
    pub fitted_c: f64,
    pub required_c: f64,
    pub positive_points: usize,
    pub pass: bool,
}

/// Checks the mode-one lower bound at `t_star` on the frequency window near `eta0`.
pub fn verify_lower_bound(rho: &DensityHistory, p: &ScenarioParams, data: &HighFreqData) -> Result<LowerBoundReport> {
    let d = p.derive()?;
    let t = d.t_star.min(*rho.times.last().unwrap_or(&d.t_star));
    let (half, required) = match data.variant {
        Variant::Gravitational => (2.0, p.checks.lower_bound_c),
        Variant::Electrostatic => (1.0 / p.alpha, 1.0),
    };
    let n = 161;
    let etas: Vec<f64> = (0..n)
        .map(|i| data.eta0 - half + 2.0 * half * i as f64 / (n - 1) as f64)
        .filter(|e| (e - data.eta0).abs() < half)
        .collect();
    let field = reconstruct_distribution(rho, data, p, t, &[1], &etas);
    lower_bound_from_slice(&field, p, &d, data, required)
}

pub fn lower_bound_from_slice(
    field: &DistributionSlice,
    p: &ScenarioParams,
    d: &Derived,
    data: &HighFreqData,
    required: f64,
) -> Result<LowerBoundReport> {
    let a = data.amplitude;
    let bound = |eta: f64| -> f64 {
        let y = (eta - data.eta0).abs();
        match data.variant {
            Variant::Gravitational => {
                let d1 = growth_factor(1, data.eta0, p.km_prime, p.epsilon);
                let d1p = growth_factor(1, data.eta0, p.km_double_prime, p.epsilon);
                d1 * a * (-y).exp() - p.epsilon.powf(p.checks.lower_gamma) * d1p * a * (-y / 8.0).exp()
            }
            Variant::Electrostatic => {
                let x1p = growth_factor(1, data.eta0, d.kf_prime, p.epsilon);
                let x1 = growth_factor(1, data.eta0, d.kf, p.epsilon);
                x1p * a * (-p.alpha * y).exp() - p.delta.powf(0.25) * x1 * a * (-p.kappa * y).exp()
            }
        }
    };
    let mut c = f64::INFINITY;
    let mut count = 0;
    for (j, &eta) in field.etas.iter().enumerate() {
        let b = bound(eta);
        if b > 0.0 {
            count += 1;
            c = c.min(field.get(1, j).norm() / b);
        }
    }
    Ok(LowerBoundReport {
        variant: data.variant,
        t: field.t,
        fitted_c: c,
        required_c: required,
        positive_points: count,
        pass: c >= required,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignSample {
    pub k: i64,
    pub t: f64,
    pub value: f64,
}

/// `Re f(t_{k,eta0}, k, eta0)` down the cascade `k = k0, ..., 1`.
pub fn sign_trace(rho: &DensityHistory, p: &ScenarioParams, data: &HighFreqData) -> Vec<SignSample> {
    (1..=data.k0)
        .rev()
        .map(|k| {
            let t = critical_time(k as u32, data.eta0);
            let f = reconstruct_distribution(rho, data, p, t, &[k], &[data.eta0]);
            SignSample {
                k,
                t,
                value: f.values[0][0].re,
            }
        })
        .collect()
}

pub fn signs_alternate(trace: &[SignSample]) -> bool {
    trace.windows(2).all(|w| w[0].value * w[1].value < 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Echo {
    pub k: i64,
    pub t_peak: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoReport {
    pub echoes: Vec<Echo>,
    pub missing: Vec<i64>,
    /// `(k, amplitude(k-1) / amplitude(k))` for consecutive detected modes.
    pub gains: Vec<(i64, f64)>,
}

impl EchoReport {
    pub fn get(&self, k: i64) -> Option<&Echo> {
        self.echoes.iter().find(|e| e.k == k)
    }

    pub fn time_ordered(&self, ks: &[i64]) -> bool {
        ks.windows(2).all(|w| match (self.get(w[0]), self.get(w[1])) {
            (Some(a), Some(b)) => (a.t_peak < b.t_peak) == (w[0] > w[1]),
            _ => false,
        })
    }
}

/// Vertex of the parabola through three samples.
fn parabola_peak(t: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (t[1] - t[0]);
    let d2 = (y[2] - y[1]) / (t[2] - t[1]);
    let a = (d2 - d1) / (t[2] - t[0]);
    if a >= 0.0 {
        return (t[1], y[1]);
    }
    let b = d1 - a * (t[0] + t[1]);
    let c = y[0] - a * t[0] * t[0] - b * t[0];
    let tv = (-b / (2.0 * a)).clamp(t[0], t[2]);
    (tv, a * tv * tv + b * tv + c)
}

/// Global maximum of `|rho(., k)|` over `window` with sub-grid refinement.
pub fn detect_echo_in(rho: &DensityHistory, k: i64, window: (f64, f64)) -> Result<Echo> {
    let s = rho.series(k).ok_or(LabError::NoPeak { k })?;
    let mut best: Option<usize> = None;
    for (i, &t) in rho.times.iter().enumerate() {
        if t < window.0 || t > window.1 {
            continue;
        }
        if best.is_none_or(|b| s[i].norm() > s[b].norm()) {
            best = Some(i);
        }
    }
    let b = best.ok_or(LabError::NoPeak { k })?;
    let first = rho.times.iter().position(|&t| t >= window.0).unwrap_or(0);
    let amp = s[b].norm();
    if !(amp > 0.0 && amp > 2.0 * s[first].norm()) {
        return Err(LabError::NoPeak { k });
    }
    if b == 0 || b + 1 >= s.len() {
        return Ok(Echo {
            k,
            t_peak: rho.times[b],
            amplitude: amp,
        });
    }
    let (tp, ap) = parabola_peak(
        [rho.times[b - 1], rho.times[b], rho.times[b + 1]],
        [s[b - 1].norm(), amp, s[b + 1].norm()],
    );
    Ok(Echo {
        k,
        t_peak: tp,
        amplitude: ap.max(amp),
    })
}

pub fn detect_echoes(rho: &DensityHistory) -> EchoReport {
    let all = (f64::NEG_INFINITY, f64::INFINITY);
    let mut echoes = Vec::new();
    let mut missing = Vec::new();
    let mut ks: Vec<i64> = rho.modes.iter().copied().filter(|&k| k > 0).collect();
    ks.sort_unstable();
    for &k in &ks {
        match detect_echo_in(rho, k, all) {
            Ok(e) => echoes.push(e),
            Err(_) => missing.push(k),
        }
    }
    let gains = gains_of(&echoes);
    EchoReport { echoes, missing, gains }
}

pub fn gains_of(echoes: &[Echo]) -> Vec<(i64, f64)> {
    echoes
        .iter()
        .filter_map(|e| {
            echoes
                .iter()
                .find(|x| x.k == e.k - 1)
                .map(|lower| (e.k, lower.amplitude / e.amplitude))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRow {
    pub k: u32,
    pub start: f64,
    pub end: f64,
    pub amplitude_in: f64,
    pub amplitude_out: f64,
    pub gain: f64,
    pub predicted: f64,
}

/// `int_{I_k} exp(-2|k tau - eta|) dtau` in closed form.
pub fn resonant_kernel_integral(k: u32, eta: f64) -> f64 {
    let iv = critical_interval(k, eta);
    let kf = k as f64;
    let c = eta / kf;
    ((1.0 - (-2.0 * kf * (c - iv.start)).exp()) + (1.0 - (-2.0 * kf * (iv.end - c)).exp())) / (2.0 * kf)
}

/// Integrates the resonant two-mode sub-system across the critical intervals of `eta`,
/// starting from the data bump on mode `k0` and feeding each interval's output forward.
pub fn run_resonant_toy(p: &ScenarioParams, eta: f64) -> Result<Vec<ToyRow>> {
    let d = p.derive()?;
    let data = HighFreqData::from_scenario(p, &d);
    let band = 80.0 / data.decay.min(1.0);
    let de = p.grid.d_eta.min(0.25);
    let nb = (2.0 * band / de).round() as usize + 1;
    let grid: Vec<f64> = (0..nb).map(|i| eta - band + i as f64 * de).collect();
    let sample = |prof: &[f64], x: f64| -> f64 {
        let u = (x - grid[0]) / de;
        if u < 0.0 || u > (nb - 1) as f64 {
            return 0.0;
        }
        let i = (u.floor() as usize).min(nb - 2);
        let w = u - i as f64;
        prof[i] * (1.0 - w) + prof[i + 1] * w
    };
    let mut profile: Vec<f64> = grid
        .iter()
        .map(|&x| data.amplitude * (-data.decay * (x - eta).abs()).exp())
        .collect();
    let mut rows = Vec::new();
    let dt = p.grid.dt;
    let mut k = d.k0;
    while k >= 2 {
        let iv = critical_interval(k, eta);
        let kf = k as f64;
        let n = ((iv.end - iv.start) / dt).ceil() as usize + 1;
        let h = (iv.end - iv.start) / (n - 1) as f64;
        let forcing = ForcingHistory::from_fn(iv.start, h, n, |t| C64::new(sample(&profile, kf * t), 0.0));
        let kernel = ResolventKernel::for_mode(p, k as i64);
        let rho = solve_volterra_convolution(&forcing, |s| C64::new(kernel.memory(s), 0.0))?;
        let wk = p.w_hat(kf);
        let mut next = vec![0.0; nb];
        for (g, out) in grid.iter().zip(next.iter_mut()) {
            let mut acc = 0.0;
            for (j, r) in rho.iter().enumerate() {
                let tau = iv.start + j as f64 * h;
                let y = g - kf * tau;
                if y.abs() > WINDOW {
                    continue;
                }
                let w = if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
                acc += w * r.re * (g - (kf - 1.0) * tau) * (-y.abs()).exp();
            }
            *out = -p.epsilon * p.coupling * wk * kf * acc * h;
        }
        let a_in = profile.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a_out = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let predicted = p.epsilon * wk.abs() * eta * resonant_kernel_integral(k, eta);
        rows.push(ToyRow {
            k,
            start: iv.start,
            end: iv.end,
            amplitude_in: a_in,
            amplitude_out: a_out,
            gain: if a_in > 0.0 { a_out / a_in } else { 0.0 },
            predicted,
        });
        profile = next;
        k -= 1;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_examples() {
        // K eps eta = 27
        assert!((growth_factor(1, 27.0, 1.0, 1.0) - 3.375).abs() < 1e-14);
        assert_eq!(growth_factor(2, 27.0, 1.0, 1.0), 1.0);
        assert!((growth_factor(1, 8.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(growth_factor(10, 1000.0, 1.0, 1.0), 1.0);
        assert!((growth_factor(9, 1000.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inclusive_product_example() {
        let v = ln_inclusive_product(1000.0, 10).exp();
        assert!((v / 2.09e10 - 1.0).abs() < 5e-3, "{v}");
    }

    #[test]
    fn exp_series_matches_direct() {
        let mut out = Vec::new();
        for &(x0, step) in &[(5.0, -0.3), (-4.0, 0.25), (0.1, 0.1), (3.0, 0.5)] {
            exp_abs_series(x0, step, 60, &mut out);
            for (j, v) in out.iter().enumerate() {
                let x: f64 = x0 + j as f64 * step;
                assert!((v - (-x.abs()).exp()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn parabola_recovers_vertex() {
        let f = |t: f64| 3.0 - (t - 1.3) * (t - 1.3);
        let (t, y) = parabola_peak([1.0, 1.5, 2.0], [f(1.0), f(1.5), f(2.0)]);
        assert!((t - 1.3).abs() < 1e-12 && (y - 3.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_integral_near_one_over_k() {
        for k in 1..6 {
            let v = resonant_kernel_integral(k, 4000.0);
            assert!((v * k as f64 - 1.0).abs() < 1e-6);
        }
    }
}
