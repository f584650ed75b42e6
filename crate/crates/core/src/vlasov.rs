//! Full nonlinear solver in glide coordinates.
//!
//! The state lives on a uniform frequency grid cut into fixed-size chunks that are
//! allocated on first write, so only the parts of phase space that ever carry
//! signal above the floor cost memory or time. The live set only grows.

use std::f64::consts::PI;

use serde::Serialize;

use crate::cascade::HighFreqData;
use crate::error::{LabError, Result};
use crate::history::DensityHistory;
use crate::norms::{self, MultiplierSpec, Multiplier, WeightedNorm};
use crate::scenario::{bracket, Derived, ScenarioParams};
use crate::volterra::f0_hat;
use crate::C64;

const CHUNK: usize = 64;
const DEAD: u32 = u32::MAX;
/// Widest exponential window `exp(-|xi|)` ever evaluated for the background term.
const MAX_WINDOW: f64 = 700.0;
/// Frequency distance over which the error scale of a chunk is pooled.
const ERROR_REACH: f64 = 40.0;

/// One mode's coefficients on `[start, start + values.len())`; zero elsewhere.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub start: usize,
    pub values: Vec<C64>,
}

impl Row {
    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    pub fn get(&self, j: usize) -> C64 {
        if j >= self.start && j < self.end() {
            self.values[j - self.start]
        } else {
            C64::new(0.0, 0.0)
        }
    }

    fn trimmed(mut self) -> Self {
        let zero = C64::new(0.0, 0.0);
        let Some(first) = self.values.iter().position(|v| *v != zero) else {
            return Row::default();
        };
        let last = self.values.iter().rposition(|v| *v != zero).unwrap_or(first);
        self.values.truncate(last + 1);
        self.values.drain(..first);
        self.start += first;
        self
    }
}

/// Fourier coefficients `f(k, eta)` on modes `-k_max..=k_max` and a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub t: f64,
    pub k_max: u32,
    pub eta_max: f64,
    pub d_eta: f64,
    pub n_eta: usize,
    /// `rows[k + k_max]`, grid point `j` at `eta = -eta_max + j d_eta`.
    pub rows: Vec<Row>,
}

impl SpectralField {
    pub fn zeros(t: f64, k_max: u32, eta_max: f64, d_eta: f64) -> Self {
        SpectralField {
            t,
            k_max,
            eta_max,
            d_eta,
            n_eta: (2.0 * eta_max / d_eta).round() as usize + 1,
            rows: vec![Row::default(); 2 * k_max as usize + 1],
        }
    }

    pub fn same_grid(&self, t: f64) -> Self {
        Self::zeros(t, self.k_max, self.eta_max, self.d_eta)
    }

    pub fn eta(&self, j: usize) -> f64 {
        -self.eta_max + j as f64 * self.d_eta
    }

    pub fn etas(&self) -> Vec<f64> {
        (0..self.n_eta).map(|j| self.eta(j)).collect()
    }

    /// Grid index nearest to `eta`, if on the grid.
    pub fn index_of(&self, eta: f64) -> Option<usize> {
        let u = ((eta + self.eta_max) / self.d_eta).round();
        (u >= 0.0 && (u as usize) < self.n_eta).then_some(u as usize)
    }

    pub fn modes(&self) -> impl Iterator<Item = i64> {
        let k = self.k_max as i64;
        -k..=k
    }

    pub fn slot(&self, k: i64) -> Option<usize> {
        let i = k + self.k_max as i64;
        (i >= 0 && i < self.rows.len() as i64).then_some(i as usize)
    }

    pub fn row(&self, k: i64) -> &Row {
        &self.rows[self.slot(k).expect("mode on grid")]
    }

    pub fn get(&self, k: i64, j: usize) -> C64 {
        self.slot(k).map_or(C64::new(0.0, 0.0), |s| self.rows[s].get(j))
    }

    pub fn set_row(&mut self, k: i64, start: usize, values: Vec<C64>) {
        let s = self.slot(k).expect("mode on grid");
        assert!(start + values.len() <= self.n_eta, "row exceeds grid");
        self.rows[s] = Row { start, values }.trimmed();
    }

    /// Fills mode `k` from `f(eta)`, flushing values below `cutoff` to zero.
    pub fn fill_mode(&mut self, k: i64, cutoff: f64, f: impl Fn(f64) -> C64) {
        let values = (0..self.n_eta)
            .map(|j| {
                let v = f(self.eta(j));
                if v.norm() < cutoff {
                    C64::new(0.0, 0.0)
                } else {
                    v
                }
            })
            .collect();
        self.set_row(k, 0, values);
    }

    pub fn dense_row(&self, k: i64) -> Vec<C64> {
        (0..self.n_eta).map(|j| self.get(k, j)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.values.iter())
            .fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn stored_points(&self) -> usize {
        self.rows.iter().map(|r| r.values.len()).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            for v in &mut r.values {
                *v *= s;
            }
        }
        out
    }

    /// `self + s * other` on a common grid.
    pub fn axpy(&self, s: f64, other: &SpectralField) -> Self {
        assert_eq!(self.n_eta, other.n_eta, "grids differ");
        let mut out = self.clone();
        for k in self.modes() {
            let a = self.row(k);
            let b = other.slot(k).map(|i| &other.rows[i]).cloned().unwrap_or_default();
            if b.values.is_empty() {
                continue;
            }
            let (lo, hi) = if a.values.is_empty() {
                (b.start, b.end())
            } else {
                (a.start.min(b.start), a.end().max(b.end()))
            };
            let vals = (lo..hi).map(|j| a.get(j) + b.get(j) * s).collect();
            out.set_row(k, lo, vals);
        }
        out
    }

    /// Largest `|f(-k, -eta) - conj f(k, eta)|` relative to the field maximum.
    pub fn reality_defect(&self) -> f64 {
        let scale = self.max_abs();
        let n = self.n_eta;
        let mut worst: f64 = 0.0;
        for k in self.modes() {
            let r = self.row(k);
            for j in r.start..r.end() {
                let d = r.get(j) - self.get(-k, n - 1 - j).conj();
                worst = worst.max(d.norm());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }
}

/// Low-frequency wave `2 pi eps exp(-|eta|)` on modes `+-1`.
pub fn low_frequency_data(epsilon: f64, k: i64, eta: f64) -> f64 {
    if k.abs() == 1 {
        2.0 * PI * epsilon * (-eta.abs()).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Dynamics {
    /// Full quadratic right-hand side.
    Nonlinear,
    /// Only the background term; reproduces the linear density equation.
    Linearized,
    /// Force disabled; every coefficient is static.
    FreeTransport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dynamics: Dynamics,
    pub rtol: f64,
    pub h_max: f64,
    pub floor: f64,
    /// Times at which full fields are kept, in integration order.
    pub snapshots: Vec<f64>,
    pub max_steps: usize,
}

impl SolverConfig {
    pub fn from_scenario(p: &ScenarioParams) -> Self {
        SolverConfig {
            dynamics: Dynamics::Nonlinear,
            rtol: p.grid.rtol,
            h_max: p.grid.h_max,
            floor: p.grid.floor,
            snapshots: Vec::new(),
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Physics {
    zeta: f64,
    gamma0: f64,
    delta: f64,
}

impl Physics {
    fn w_hat(&self, k: i64) -> f64 {
        self.zeta * (k as f64).abs().powf(-1.0 - self.gamma0)
    }
}

/// Four-point Lagrange weights on nodes `-1, 0, 1, 2` at fractional position `u`.
fn lagrange4(u: f64) -> [f64; 4] {
    [
        -u * (u - 1.0) * (u - 2.0) / 6.0,
        (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
        -(u + 1.0) * u * (u - 2.0) / 2.0,
        (u + 1.0) * u * (u - 1.0) / 6.0,
    ]
}

struct Layout {
    k_max: i64,
    n: usize,
    slot: Vec<Vec<u32>>,
    owner: Vec<(i64, usize)>,
}

impl Layout {
    fn new(k_max: i64, n: usize) -> Self {
        let nc = n.div_ceil(CHUNK);
        Layout {
            k_max,
            n,
            slot: vec![vec![DEAD; nc]; (2 * k_max + 1) as usize],
            owner: Vec::new(),
        }
    }

    fn mode_ok(&self, k: i64) -> bool {
        k.abs() <= self.k_max
    }

    fn slot_of(&self, k: i64, c: usize) -> u32 {
        self.slot[(k + self.k_max) as usize][c]
    }

    fn ensure(&mut self, k: i64, c: usize) {
        let s = &mut self.slot[(k + self.k_max) as usize][c];
        if *s == DEAD {
            *s = self.owner.len() as u32;
            self.owner.push((k, c));
        }
    }

    fn len(&self) -> usize {
        self.owner.len() * CHUNK
    }

    #[inline]
    fn read(&self, buf: &[C64], k: i64, i: isize) -> C64 {
        if i < 0 || i as usize >= self.n {
            return C64::new(0.0, 0.0);
        }
        let i = i as usize;
        let s = self.slot_of(k, i / CHUNK);
        if s == DEAD {
            C64::new(0.0, 0.0)
        } else {
            buf[s as usize * CHUNK + i % CHUNK]
        }
    }
}

enum TermKind {
    Shift { src: i64, base_shift: isize, w: [f64; 4], e: C64 },
    Background { e: C64 },
}

struct Term {
    k: i64,
    kind: TermKind,
    ranges: Vec<(usize, usize)>,
}

fn merge(mut v: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    v.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

// Dormand-Prince 5(4).
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const Y: usize = 0;
const TMP: usize = 8;
const ERR: usize = 9;

/// Closed-form initial data `f(k, eta)`.
pub type Profile<'a> = &'a (dyn Fn(i64, f64) -> C64 + Sync);

/// Initial data kept in closed form; the buffers then hold only the deviation from it.
struct Base<'a> {
    f: Profile<'a>,
    /// Support `[lo, hi]` of each mode, empty when `lo > hi`.
    span: Vec<(f64, f64)>,
    /// Chunk maxima of the initial data, per slot allocated at start.
    cmax: Vec<f64>,
}

struct Engine<'a> {
    base: Option<Base<'a>>,
    phys: Physics,
    dynamics: Dynamics,
    eta_min: f64,
    d_eta: f64,
    layout: Layout,
    /// 0: state, 1..=7: stages, 8: stage input, 9: error estimate.
    bufs: Vec<Vec<C64>>,
    floor: f64,
    fmax: f64,
    eref: f64,
    edge_warnings: usize,
    mode_warnings: usize,
}

impl<'a> Engine<'a> {
    fn new(
        init: &SpectralField,
        exact: Option<Profile<'a>>,
        p: &ScenarioParams,
        dynamics: Dynamics,
        floor: f64,
    ) -> Self {
        let k_max = init.k_max as i64;
        let mut layout = Layout::new(k_max, init.n_eta);
        let fmax = init.max_abs();
        let cut = floor * fmax;
        for k in init.modes() {
            let r = init.row(k);
            for j in r.start..r.end() {
                if r.get(j).norm() > cut {
                    layout.ensure(k, j / CHUNK);
                }
            }
        }
        let mut y = vec![C64::new(0.0, 0.0); layout.len()];
        for k in init.modes() {
            let r = init.row(k);
            for j in r.start..r.end() {
                let v = r.get(j);
                if v.norm() > cut {
                    let s = layout.slot_of(k, j / CHUNK) as usize;
                    y[s * CHUNK + j % CHUNK] = v;
                }
            }
        }
        let len = y.len();
        let base = exact.map(|f| {
            let span = init
                .modes()
                .map(|k| {
                    let r = init.row(k);
                    if r.values.is_empty() {
                        (1.0, 0.0)
                    } else {
                        (init.eta(r.start), init.eta(r.end() - 1))
                    }
                })
                .collect();
            let cmax = y
                .chunks(CHUNK)
                .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.norm())))
                .collect();
            Base { f, span, cmax }
        });
        let mut bufs = vec![vec![C64::new(0.0, 0.0); len]; 10];
        bufs[Y] = y;
        let mut eng = Engine {
            base,
            phys: Physics {
                zeta: p.zeta as f64,
                gamma0: p.gamma0,
                delta: p.delta,
            },
            dynamics,
            eta_min: -init.eta_max,
            d_eta: init.d_eta,
            layout,
            bufs,
            floor,
            fmax,
            eref: 0.0,
            edge_warnings: 0,
            mode_warnings: 0,
        };
        if eng.base.is_some() {
            // keep only the remainder on the grid
            let mut y = std::mem::take(&mut eng.bufs[Y]);
            for (s, &(k, c)) in eng.layout.owner.iter().enumerate() {
                for i in 0..CHUNK {
                    let j = c * CHUNK + i;
                    if j < eng.layout.n {
                        y[s * CHUNK + i] -= eng.exact_at(k, eng.eta(j));
                    }
                }
            }
            eng.bufs[Y] = y;
        }
        eng
    }

    fn grow(&mut self) {
        let len = self.layout.len();
        for b in &mut self.bufs {
            b.resize(len, C64::new(0.0, 0.0));
        }
    }

    fn eta(&self, j: usize) -> f64 {
        self.eta_min + j as f64 * self.d_eta
    }

    fn exact_at(&self, k: i64, eta: f64) -> C64 {
        match &self.base {
            Some(b) => {
                let (lo, hi) = b.span[(k + self.layout.k_max) as usize];
                if eta >= lo && eta <= hi {
                    (b.f)(k, eta)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            None => C64::new(0.0, 0.0),
        }
    }

    fn has_base(&self, k: i64) -> bool {
        self.base.as_ref().is_some_and(|b| {
            let (lo, hi) = b.span[(k + self.layout.k_max) as usize];
            lo <= hi
        })
    }

    fn base_cmax(&self, slot: usize) -> f64 {
        self.base.as_ref().and_then(|b| b.cmax.get(slot).copied()).unwrap_or(0.0)
    }

    /// `rho(t, l) = f(l, l t)` by cubic interpolation of the deviation plus the exact initial data.
    fn density(&self, buf: usize, t: f64) -> Vec<C64> {
        let km = self.layout.k_max;
        let y = &self.bufs[buf];
        (-km..=km)
            .map(|l| {
                if l == 0 {
                    return C64::new(0.0, 0.0);
                }
                let u = (t * l as f64 - self.eta_min) / self.d_eta;
                let i = u.floor();
                let w = lagrange4(u - i);
                let i = i as isize;
                (0..4).map(|r| self.layout.read(y, l, i - 1 + r as isize) * w[r]).sum::<C64>()
                    + self.exact_at(l, t * l as f64)
            })
            .collect()
    }

    fn chunk_max(&self, buf: usize) -> Vec<f64> {
        self.bufs[buf]
            .chunks(CHUNK)
            .enumerate()
            .map(|(s, c)| c.iter().fold(self.base_cmax(s), |m, v| m.max(v.norm())))
            .collect()
    }

    fn rhs(&mut self, t: f64, src: usize, dst: usize) {
        let km = self.layout.k_max;
        let n = self.layout.n;
        let rho = self.density(src, t);
        let efield: Vec<C64> = (-km..=km)
            .map(|l| {
                if l == 0 || self.dynamics == Dynamics::FreeTransport {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(0.0, -(l as f64) * self.phys.w_hat(l)) * rho[(l + km) as usize]
                }
            })
            .collect();
        let emax = efield.iter().fold(0.0f64, |m, e| m.max(e.norm()));
        self.eref = self.eref.max(emax);
        let thresh = self.floor * self.eref * self.fmax;
        let cmax = self.chunk_max(src);
        let row_max: Vec<f64> = (-km..=km)
            .map(|k| {
                self.layout.slot[(k + km) as usize]
                    .iter()
                    .filter(|&&s| s != DEAD)
                    .fold(0.0f64, |m, &s| m.max(cmax[s as usize]))
            })
            .collect();

        let mut terms: Vec<Term> = Vec::new();
        if emax > 0.0 {
            for k in -km..=km {
                let e_k = efield[(k + km) as usize];
                if k != 0 && e_k.norm() > 0.0 {
                    let l = (e_k.norm() * 2.0 * PI * self.phys.delta / thresh.max(f64::MIN_POSITIVE)).ln();
                    if l > 0.0 {
                        let l = l.min(MAX_WINDOW);
                        let c = t * k as f64;
                        let lo = ((c - l - self.eta_min) / self.d_eta).floor().max(0.0);
                        let hi = ((c + l - self.eta_min) / self.d_eta).ceil().min((n - 1) as f64);
                        if lo <= hi {
                            terms.push(Term {
                                k,
                                kind: TermKind::Background { e: e_k },
                                ranges: vec![(lo as usize, hi as usize)],
                            });
                        }
                        if c - l < self.eta_min || c + l > -self.eta_min {
                            self.edge_warnings += 1;
                        }
                    }
                }
                if self.dynamics != Dynamics::Nonlinear {
                    continue;
                }
                for l in -km..=km {
                    let s = k - l;
                    if l == 0 || !self.layout.mode_ok(s) {
                        continue;
                    }
                    let e = efield[(l + km) as usize];
                    let en = e.norm();
                    if en == 0.0 || en * row_max[(s + km) as usize] <= thresh {
                        continue;
                    }
                    let shift = t * l as f64 / self.d_eta;
                    let m = shift.floor();
                    let w = lagrange4(1.0 - (shift - m));
                    let m = m as isize;
                    let mut ranges = Vec::new();
                    for (c, &sl) in self.layout.slot[(s + km) as usize].iter().enumerate() {
                        if sl == DEAD || en * cmax[sl as usize] <= thresh {
                            continue;
                        }
                        let a = (c * CHUNK) as isize + m - 1;
                        let b = (c * CHUNK + CHUNK - 1) as isize + m + 2;
                        if a < 0 || b >= n as isize {
                            self.edge_warnings += 1;
                        }
                        let (a, b) = (a.max(0), b.min(n as isize - 1));
                        if a <= b {
                            ranges.push((a as usize, b as usize));
                        }
                    }
                    if !ranges.is_empty() {
                        terms.push(Term {
                            k,
                            kind: TermKind::Shift {
                                src: s,
                                base_shift: -m - 1,
                                w,
                                e,
                            },
                            ranges: merge(ranges),
                        });
                    }
                }
            }
            if self.dynamics == Dynamics::Nonlinear {
                // flux leaving the mode range
                for s in -km..=km {
                    for l in -km..=km {
                        let e = efield[(l + km) as usize].norm();
                        if l != 0 && !self.layout.mode_ok(s + l) && e * row_max[(s + km) as usize] > thresh {
                            self.mode_warnings += 1;
                        }
                    }
                }
            }
        }

        for term in &terms {
            for &(a, b) in &term.ranges {
                for c in a / CHUNK..=b / CHUNK {
                    self.layout.ensure(term.k, c);
                }
            }
        }
        self.grow();

        let mut out = std::mem::take(&mut self.bufs[dst]);
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        let y = &self.bufs[src];
        let inv2pi = 1.0 / (2.0 * PI);
        for term in &terms {
            let tk = t * term.k as f64;
            for &(a, b) in &term.ranges {
                for j in a..=b {
                    let s = self.layout.slot_of(term.k, j / CHUNK) as usize * CHUNK + j % CHUNK;
                    let eta = self.eta(j);
                    let coef = C64::new(0.0, -(eta - tk) * inv2pi);
                    match term.kind {
                        TermKind::Background { e } => {
                            out[s] += coef * e * f0_hat(eta - tk, self.phys.delta);
                        }
                        TermKind::Shift { src, base_shift, w, e } => {
                            let i0 = j as isize + base_shift;
                            let mut v = self.layout.read(y, src, i0 - 1) * w[0]
                                + self.layout.read(y, src, i0) * w[1]
                                + self.layout.read(y, src, i0 + 1) * w[2]
                                + self.layout.read(y, src, i0 + 2) * w[3];
                            if self.has_base(src) {
                                v += self.exact_at(src, eta - t * (term.k - src) as f64);
                            }
                            out[s] += coef * e * v;
                        }
                    }
                }
            }
        }
        self.bufs[dst] = out;
    }

    fn combine(&mut self, out: usize, base: usize, h: f64, coefs: &[(usize, f64)]) {
        let mut o = std::mem::take(&mut self.bufs[out]);
        o.copy_from_slice(&self.bufs[base]);
        for &(s, c) in coefs {
            if c == 0.0 {
                continue;
            }
            let hc = h * c;
            for (x, k) in o.iter_mut().zip(&self.bufs[s]) {
                *x += k * hc;
            }
        }
        self.bufs[out] = o;
    }

    fn error_norm(&mut self, h: f64, rtol: f64) -> f64 {
        let len = self.layout.len();
        let mut err = std::mem::take(&mut self.bufs[ERR]);
        err.resize(len, C64::new(0.0, 0.0));
        err.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (s, &c) in E.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (x, k) in err.iter_mut().zip(&self.bufs[s + 1]) {
                *x += k * (h * c);
            }
        }
        let atol = self.floor * self.fmax;
        // each chunk is measured against the largest value within `ERROR_REACH` in frequency on
        // its own mode, so the decaying flanks of a bump are held to the accuracy of the bump
        let scale: Vec<f64> = self.bufs[Y]
            .chunks(CHUNK)
            .zip(self.bufs[TMP].chunks(CHUNK))
            .enumerate()
            .map(|(s, (y0, y1))| y0.iter().chain(y1).fold(self.base_cmax(s), |m, v| m.max(v.norm())))
            .collect();
        let reach = (ERROR_REACH / (CHUNK as f64 * self.d_eta)).ceil() as usize;
        let mut worst: f64 = 0.0;
        for (s, e) in err.chunks(CHUNK).enumerate() {
            let (k, c) = self.layout.owner[s];
            let row = &self.layout.slot[(k + self.layout.k_max) as usize];
            let lo = c.saturating_sub(reach);
            let hi = (c + reach).min(row.len() - 1);
            let local = row[lo..=hi]
                .iter()
                .filter(|&&sl| sl != DEAD)
                .fold(0.0f64, |m, &sl| m.max(scale[sl as usize]));
            let emax = e.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            worst = worst.max(emax / (atol + rtol * local));
        }
        self.bufs[ERR] = err;
        worst
    }

    fn export(&self, t: f64, template: &SpectralField) -> SpectralField {
        let mut f = template.same_grid(t);
        let km = self.layout.k_max;
        for k in -km..=km {
            let slots = &self.layout.slot[(k + km) as usize];
            let Some(first) = slots.iter().position(|&s| s != DEAD) else {
                continue;
            };
            let last = slots.iter().rposition(|&s| s != DEAD).unwrap_or(first);
            let lo = first * CHUNK;
            let hi = ((last + 1) * CHUNK).min(self.layout.n);
            let vals = (lo..hi)
                .map(|j| self.layout.read(&self.bufs[Y], k, j as isize) + self.exact_at(k, self.eta(j)))
                .collect();
            f.set_row(k, lo, vals);
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrajectory {
    pub snapshots: Vec<SpectralField>,
    pub density: DensityHistory,
    pub accepted: usize,
    pub rejected: usize,
    /// Writes clipped at the frequency-grid edge.
    pub edge_warnings: usize,
    /// Significant transfers to modes outside the range.
    pub mode_warnings: usize,
    pub final_field: SpectralField,
}

fn integrate(
    init: &SpectralField,
    exact: Option<Profile<'_>>,
    p: &ScenarioParams,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<FieldTrajectory> {
    let mut eng = Engine::new(init, exact, p, cfg.dynamics, cfg.floor);
    let k_max = init.k_max;
    let modes = DensityHistory::symmetric_modes(k_max);
    let mut density = DensityHistory::empty(modes);
    let dir = if t_end >= init.t { 1.0 } else { -1.0 };
    let mut t = init.t;
    let record = |eng: &Engine, density: &mut DensityHistory, t: f64| {
        let rho = eng.density(Y, t);
        let row: Vec<C64> = (-(k_max as i64)..=k_max as i64)
            .filter(|&l| l != 0)
            .map(|l| rho[(l + k_max as i64) as usize])
            .collect();
        density.push(t, &row);
    };
    record(&eng, &mut density, t);
    let mut snaps = Vec::new();
    let mut pending: Vec<f64> = cfg.snapshots.clone();
    pending.retain(|&s| (s - t) * dir >= 0.0 && (t_end - s) * dir >= 0.0);
    pending.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
    pending.reverse();
    while pending.last().is_some_and(|&s| s == t) {
        pending.pop();
        snaps.push(eng.export(t, init));
    }
    let span = (t_end - t).abs();
    if span == 0.0 {
        let final_field = eng.export(t, init);
        return Ok(FieldTrajectory {
            snapshots: snaps,
            density,
            accepted: 0,
            rejected: 0,
            edge_warnings: 0,
            mode_warnings: 0,
            final_field,
        });
    }
    let mut h = (0.01f64).min(cfg.h_max).min(span);
    let mut accepted = 0;
    let mut rejected = 0;
    eng.rhs(t, Y, 1);
    while (t_end - t) * dir > 0.0 {
        if accepted + rejected > cfg.max_steps {
            return Err(LabError::StepSizeUnderflow { t, h });
        }
        let target = pending.last().copied().unwrap_or(t_end);
        let remaining = (target - t).abs();
        let mut hs = h.min(remaining);
        let hits = hs == remaining;
        if !hits && remaining < 1.05 * hs {
            hs = 0.5 * remaining;
        }
        let hd = hs * dir;
        for s in 1..7 {
            let coefs: Vec<(usize, f64)> = (0..s).map(|j| (j + 1, A[s][j])).collect();
            eng.combine(TMP, Y, hd, &coefs);
            eng.rhs(t + C[s] * hd, TMP, s + 1);
        }
        let err = eng.error_norm(hd, cfg.rtol);
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            eng.bufs.swap(Y, TMP);
            eng.bufs.swap(1, 7);
            t = if hits { target } else { t + hd };
            accepted += 1;
            record(&eng, &mut density, t);
            if hits && pending.last().is_some_and(|&s| s == target) {
                pending.pop();
                snaps.push(eng.export(t, init));
            }
            h = (hs * factor).min(cfg.h_max);
        } else {
            rejected += 1;
            h = hs * factor.min(1.0);
        }
        if h < 1e-12 * t.abs().max(1.0) {
            return Err(LabError::StepSizeUnderflow { t, h });
        }
    }
    if dir < 0.0 {
        density.times.reverse();
        for v in &mut density.values {
            v.reverse();
        }
    }
    let final_field = eng.export(t, init);
    Ok(FieldTrajectory {
        snapshots: snaps,
        density,
        accepted,
        rejected,
        edge_warnings: eng.edge_warnings,
        mode_warnings: eng.mode_warnings,
        final_field,
    })
}

/// Integrates from `init.t` to `t_end` with the embedded 5(4) pair.
pub fn run_forward(init: &SpectralField, p: &ScenarioParams, t_end: f64, cfg: &SolverConfig) -> Result<FieldTrajectory> {
    run_forward_with(init, None, p, t_end, cfg)
}

/// As [`run_forward`], with the bulk of `init` given in closed form by `exact`, which must be
/// static under the free flow. Interpolation then only sees the remainder, which stays smooth
/// across kinks of the closed-form part.
pub fn run_forward_with(
    init: &SpectralField,
    exact: Option<Profile<'_>>,
    p: &ScenarioParams,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<FieldTrajectory> {
    if t_end < init.t {
        return Err(LabError::Domain(format!("t_end {t_end} precedes the initial time {}", init.t)));
    }
    integrate(init, exact, p, t_end, cfg)
}

/// Same right-hand side integrated from `fin.t` back to zero.
pub fn run_backward(fin: &SpectralField, p: &ScenarioParams, cfg: &SolverConfig) -> Result<FieldTrajectory> {
    integrate(fin, None, p, 0.0, cfg)
}

pub fn run_backward_with(
    fin: &SpectralField,
    exact: Option<Profile<'_>>,
    p: &ScenarioParams,
    cfg: &SolverConfig,
) -> Result<FieldTrajectory> {
    integrate(fin, exact, p, 0.0, cfg)
}

/// Time derivative of `field` at its time stamp; every contribution is kept when `floor = 0`.
pub fn rhs_nonlinear(field: &SpectralField, p: &ScenarioParams, dynamics: Dynamics, floor: f64) -> SpectralField {
    let mut eng = Engine::new(field, None, p, dynamics, floor);
    eng.rhs(field.t, Y, 1);
    eng.bufs.swap(Y, 1);
    eng.export(field.t, field)
}

/// Mode range wide enough for the phase spread `2 eps |W(1)| eta t`-type modulation of the
/// high-frequency bump by the low-frequency field over `[0, t_in]`.
pub fn backward_mode_range(p: &ScenarioParams, d: &Derived) -> u32 {
    if let Some(k) = p.grid.k_max_backward {
        return k;
    }
    let phi = 2.0 * p.epsilon * p.w_hat(1.0).abs() * (d.eta0 + 60.0) * (1.0 - (-d.t_in).exp());
    (d.k0 as f64 + phi + 4.0 * phi.cbrt() + 10.0).ceil() as u32
}

/// `f_L + f_H_in` at `t_in` on a grid with the given mode range.
pub fn initial_field(p: &ScenarioParams, d: &Derived, data: &HighFreqData, k_max: u32) -> SpectralField {
    let mut f = SpectralField::zeros(d.t_in, k_max, d.eta_max(p), p.grid.d_eta);
    let fmax = (2.0 * PI * p.epsilon).max(data.amplitude);
    let cut = p.grid.floor * fmax;
    let mut ks = vec![1i64, -1];
    if data.k0 <= k_max as i64 {
        ks.extend([data.k0, -data.k0]);
    }
    ks.sort_unstable();
    ks.dedup();
    let exact = initial_profile(p, data);
    for k in ks {
        f.fill_mode(k, cut, |eta| exact(k, eta));
    }
    f
}

/// Closed form of [`initial_field`], for use with [`run_forward_with`].
pub fn initial_profile<'a>(p: &ScenarioParams, data: &'a HighFreqData) -> impl Fn(i64, f64) -> C64 + Sync + 'a {
    let eps = p.epsilon;
    move |k, eta| C64::new(low_frequency_data(eps, k, eta) + data.value(k, eta), 0.0)
}

/// `(sum_k int <k,eta>^(2 sigma) (|f|^2 + moment |d_eta f|^2))^(1/2)`.
pub fn sobolev_norm(field: &SpectralField, sigma: f64, moment: bool) -> WeightedNorm {
    norms::weighted_norm(field, |k, j| sigma * bracket(k as f64, field.eta(j)).ln(), moment)
}

/// `int exp(-lambda |x| - |x - y|) dx = 2/(1-l^2) e^{-l|y|} - 2l/(1-l^2) e^{-|y|}`.
pub fn exact_exp_integral(lambda: f64, y: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(LabError::Domain(format!("rate must lie in [0, 1), got {lambda}")));
    }
    let d = 1.0 - lambda * lambda;
    Ok(2.0 / d * (-lambda * y.abs()).exp() - 2.0 * lambda / d * (-y.abs()).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxReport {
    pub times: Vec<f64>,
    pub a_error: Vec<f64>,
    pub a_approx: Vec<f64>,
    pub b_error: Vec<f64>,
    pub b_approx: Vec<f64>,
    /// `sup_t ||A <v> g|| / sup_t ||A <v> f_E||`.
    pub ratio_a: f64,
    pub ratio_b: f64,
    pub truncated: bool,
}

/// Multiplier norms of `g = f - f_E` against those of `f_E` at matching times.
pub fn compare_to_approx(
    solution: &[SpectralField],
    approx: &[SpectralField],
    spec: &MultiplierSpec,
) -> ApproxReport {
    let mut r = ApproxReport {
        times: Vec::new(),
        a_error: Vec::new(),
        a_approx: Vec::new(),
        b_error: Vec::new(),
        b_approx: Vec::new(),
        ratio_a: 0.0,
        ratio_b: 0.0,
        truncated: false,
    };
    let (mut la_g, mut la_e, mut lb_g, mut lb_e) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (f, fe) in solution.iter().zip(approx) {
        let g = f.axpy(-1.0, fe);
        let ag = norms::norm_apply(&g, spec, Multiplier::A, true);
        let ae = norms::norm_apply(fe, spec, Multiplier::A, true);
        let bg = norms::norm_apply(&g, spec, Multiplier::B, true);
        let be = norms::norm_apply(fe, spec, Multiplier::B, true);
        r.truncated |= ag.truncated || ae.truncated;
        la_g = la_g.max(ag.ln_value);
        la_e = la_e.max(ae.ln_value);
        lb_g = lb_g.max(bg.ln_value);
        lb_e = lb_e.max(be.ln_value);
        r.times.push(f.t);
        r.a_error.push(ag.ln_value);
        r.a_approx.push(ae.ln_value);
        r.b_error.push(bg.ln_value);
        r.b_approx.push(be.ln_value);
    }
    r.ratio_a = (la_g - la_e).exp();
    r.ratio_b = (lb_g - lb_e).exp();
    r
}

/// `|corr(rho(t, x), cos(k x))|` over one period, with `rho(t, x) = sum_l rho(t, l) e^{i l x}`.
pub fn density_shape_correlation(rho: &DensityHistory, k: i64, t: f64) -> f64 {
    let n = 512;
    let xs: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let coeffs: Vec<(i64, C64)> = rho.modes.iter().map(|&l| (l, rho.sample(l, t))).collect();
    let signal: Vec<f64> = xs
        .iter()
        .map(|&x| {
            coeffs
                .iter()
                .map(|&(l, c)| (c * C64::from_polar(1.0, l as f64 * x)).re)
                .sum()
        })
        .collect();
    let probe: Vec<f64> = xs.iter().map(|&x| (k as f64 * x).cos()).collect();
    pearson(&signal, &probe).abs()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    #[test]
    fn exp_integral_examples() {
        assert!((exact_exp_integral(0.0, 7.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((exact_exp_integral(0.5, 0.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(exact_exp_integral(1.0, 0.0).is_err());
        for &l in &[0.3, 0.9] {
            for &y in &[-5.0, 0.0, 2.0] {
                let f = |x: f64| (-l * x.abs() - (x - y).abs()).exp();
                let q = quad::integrate_pieces(f, -200.0, 200.0, &[0.0f64.min(y), 0.0f64.max(y)], 1e-14, 1e-14);
                assert!((q - exact_exp_integral(l, y).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lagrange_weights_reproduce_cubics() {
        for &u in &[0.0, 0.3, 0.77, 1.0] {
            let w = lagrange4(u);
            let f = |x: f64| 2.0 - x + 0.5 * x * x - 0.25 * x * x * x;
            let v: f64 = (0..4).map(|r| w[r] * f(r as f64 - 1.0)).sum();
            assert!((v - f(u)).abs() < 1e-13);
        }
    }

    #[test]
    fn merge_joins_adjacent_ranges() {
        assert_eq!(merge(vec![(5, 9), (0, 3), (4, 4), (12, 20)]), vec![(0, 9), (12, 20)]);
    }

    #[test]
    fn row_trimming() {
        let mut f = SpectralField::zeros(0.0, 1, 2.0, 0.5);
        let z = C64::new(0.0, 0.0);
        f.set_row(1, 2, vec![z, C64::new(1.0, 0.0), z]);
        assert_eq!(f.row(1).start, 3);
        assert_eq!(f.row(1).values.len(), 1);
        assert_eq!(f.get(1, 3), C64::new(1.0, 0.0));
        assert_eq!(f.get(1, 2), z);
    }
}
