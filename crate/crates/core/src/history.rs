//! Time series of density Fourier modes.

use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistory {
    pub times: Vec<f64>,
    pub modes: Vec<i64>,
    /// `values[m][i]` is the density of `modes[m]` at `times[i]`.
    pub values: Vec<Vec<C64>>,
}

impl DensityHistory {
    pub fn new(times: Vec<f64>, modes: Vec<i64>) -> Self {
        let n = times.len();
        let values = modes.iter().map(|_| vec![C64::new(0.0, 0.0); n]).collect();
        DensityHistory { times, modes, values }
    }

    pub fn empty(modes: Vec<i64>) -> Self {
        Self::new(Vec::new(), modes)
    }

    /// Modes `-k_max..=-1, 1..=k_max`.
    pub fn symmetric_modes(k_max: u32) -> Vec<i64> {
        let k = k_max as i64;
        (-k..=k).filter(|&m| m != 0).collect()
    }

    pub fn mode_index(&self, k: i64) -> Option<usize> {
        self.modes.iter().position(|&m| m == k)
    }

    pub fn series(&self, k: i64) -> Option<&[C64]> {
        self.mode_index(k).map(|i| self.values[i].as_slice())
    }

    pub fn push(&mut self, t: f64, row: &[C64]) {
        debug_assert_eq!(row.len(), self.modes.len());
        self.times.push(t);
        for (v, r) in self.values.iter_mut().zip(row) {
            v.push(*r);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Linear interpolation in time; zero outside the recorded range.
    pub fn sample(&self, k: i64, t: f64) -> C64 {
        let Some(s) = self.series(k) else {
            return C64::new(0.0, 0.0);
        };
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return C64::new(0.0, 0.0);
        }
        let j = self.times.partition_point(|&x| x <= t);
        if j == 0 {
            return s[0];
        }
        if j >= n {
            return s[n - 1];
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        s[j - 1] * (1.0 - w) + s[j] * w
    }

    /// Largest relative deviation from `rho(t,-k) = conj(rho(t,k))`.
    pub fn reality_defect(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for (mi, &k) in self.modes.iter().enumerate() {
            if k <= 0 {
                continue;
            }
            let Some(nj) = self.mode_index(-k) else { continue };
            for (a, b) in self.values[mi].iter().zip(&self.values[nj]) {
                scale = scale.max(a.norm());
                worst = worst.max((a - b.conj()).norm());
            }
        }
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }
}
