//! Trial container, Butterworth bandpass filtering and covariance estimation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spd_core::SpdMatrix;

/// One epoch: `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial<T: Real> {
    pub data: DMatrix<T>,
    pub fs: f64,
    pub channel_names: Option<Vec<String>>,
}

impl<T: Real> Trial<T> {
    pub fn new(data: DMatrix<T>, fs: f64) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::invalid(format!(
                "trial needs at least 2 channels, got {}",
                data.nrows()
            )));
        }
        if !(fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trial contains NaN or infinite samples"));
        }
        if data.ncols() <= data.nrows() {
            log::warn!(
                "trial has {} samples for {} channels; covariance may be rank deficient",
                data.ncols(),
                data.nrows()
            );
        }
        Ok(Trial {
            data,
            fs,
            channel_names: None,
        })
    }

    pub fn with_channel_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_channels() {
            return Err(Error::invalid(format!(
                "{} channel names for {} channels",
                names.len(),
                self.n_channels()
            )));
        }
        self.channel_names = Some(names);
        Ok(self)
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Unnormalized scatter `X Xᵀ`.
    pub fn scatter(&self) -> DMatrix<T> {
        &self.data * self.data.transpose()
    }

    pub fn select_channels(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_channels()) {
            return Err(Error::invalid(format!(
                "channel index {bad} out of range for {} channels",
                self.n_channels()
            )));
        }
        let data = self.data.select_rows(idx.iter());
        let names = self
            .channel_names
            .as_ref()
            .map(|n| idx.iter().map(|&i| n[i].clone()).collect());
        let mut t = Trial::new(data, self.fs)?;
        t.channel_names = names;
        Ok(t)
    }

    /// Samples `[start, end)`.
    pub fn crop(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_samples() {
            return Err(Error::invalid(format!(
                "window [{start}, {end}) outside trial of {} samples",
                self.n_samples()
            )));
        }
        Ok(Trial {
            data: self.data.columns(start, end - start).into_owned(),
            fs: self.fs,
            channel_names: self.channel_names.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    /// Forward-backward application (doubles the effective order, no phase shift).
    pub zero_phase: bool,
}

impl Default for BandpassSpec {
    fn default() -> Self {
        BandpassSpec {
            low_hz: 8.0,
            high_hz: 30.0,
            order: 5,
            zero_phase: true,
        }
    }
}

/// Second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = self.a[0] + zi * (self.a[1] + zi * self.a[2]);
        num / den
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form II state reached after an infinitely long unit step.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[2] * y]
    }
}

/// A designed Butterworth bandpass as a cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub zero_phase: bool,
}

/// Designs an order-`order` Butterworth bandpass (bilinear transform with prewarping).
///
/// The analog lowpass prototype poles are shifted to the band with the usual
/// lowpass-to-bandpass substitution, giving `2·order` poles, `order` zeros at
/// DC and `order` at infinity. After the bilinear map every biquad carries one
/// zero at `z = 1` and one at `z = -1`. The gain is normalized to unity at the
/// digital image of the geometric band center.
pub fn design_bandpass(spec: &BandpassSpec, fs: f64) -> Result<BandpassFilter> {
    let nyquist = fs / 2.0;
    if !(spec.low_hz > 0.0 && spec.low_hz < spec.high_hz && spec.high_hz < nyquist) {
        return Err(Error::invalid(format!(
            "band [{}, {}] Hz must satisfy 0 < low < high < fs/2 = {nyquist}",
            spec.low_hz, spec.high_hz
        )));
    }
    if spec.order == 0 {
        return Err(Error::invalid("filter order must be at least 1"));
    }
    let n = spec.order;
    let k = 2.0 * fs;
    let w1 = k * (std::f64::consts::PI * spec.low_hz / fs).tan();
    let w2 = k * (std::f64::consts::PI * spec.high_hz / fs).tan();
    let w0_sq = w1 * w2;
    let bw = w2 - w1;

    let mut poles = Vec::with_capacity(2 * n);
    for i in 0..n {
        let theta = std::f64::consts::PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let q = p * (bw / 2.0);
        let disc = (q * q - w0_sq).sqrt();
        for s in [q + disc, q - disc] {
            poles.push((k + s) / (k - s));
        }
    }
    if let Some(p) = poles.iter().find(|p| p.norm() >= 1.0) {
        return Err(Error::numerical(format!(
            "designed bandpass is unstable (pole magnitude {:.6})",
            p.norm()
        )));
    }

    let imag_eps = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > imag_eps).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= imag_eps)
        .map(|p| p.re)
        .collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);
    if real.len() % 2 != 0 {
        return Err(Error::numerical("odd number of real poles in bandpass design"));
    }

    let mut sections = Vec::with_capacity(n);
    for pair in real.chunks(2) {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    for p in &complex {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    debug_assert_eq!(sections.len(), n);

    let center = 2.0 * (w0_sq.sqrt() / k).atan();
    let z0 = Complex64::from_polar(1.0, center);
    let h: Complex64 = sections.iter().map(|s| s.response(z0)).product();
    let g = (1.0 / h.norm()).powf(1.0 / n as f64);
    for s in &mut sections {
        for b in &mut s.b {
            *b *= g;
        }
    }

    Ok(BandpassFilter {
        sections,
        order: n,
        zero_phase: spec.zero_phase,
    })
}

impl BandpassFilter {
    /// Single-pass complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * freq_hz / fs);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// Number of samples reflected at each edge in zero-phase mode.
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.order + 1)
    }

    fn run(&self, x: &[f64], initial_scale: Option<f64>) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut cum_gain = 1.0;
        for s in &self.sections {
            let mut z = match initial_scale {
                Some(x0) => {
                    let st = s.step_state();
                    [st[0] * cum_gain * x0, st[1] * cum_gain * x0]
                }
                None => [0.0, 0.0],
            };
            for v in cur.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z[0];
                z[0] = s.b[1] * xin - s.a[1] * y + z[1];
                z[1] = s.b[2] * xin - s.a[2] * y;
                *v = y;
            }
            cum_gain *= s.dc_gain();
        }
        cur
    }

    /// Filters one channel, forward-backward when `zero_phase` is set.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        if !self.zero_phase {
            return self.run(x, None);
        }
        let n = x.len();
        let pad = self.pad_len().min(n - 1);
        // odd reflection about the end samples
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let x0 = ext[0];
        let mut y = self.run(&ext, Some(x0));
        y.reverse();
        let y0 = y[0];
        let mut y = self.run(&y, Some(y0));
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Bandpasses every channel of `trial` independently.
pub fn butterworth_bandpass<T: Real>(trial: &Trial<T>, spec: &BandpassSpec) -> Result<Trial<T>> {
    let filter = design_bandpass(spec, trial.fs)?;
    let mut out = trial.data.clone();
    let row_buf: Vec<f64> = Vec::with_capacity(trial.n_samples());
    let mut row_buf = row_buf;
    for c in 0..trial.n_channels() {
        row_buf.clear();
        row_buf.extend(trial.data.row(c).iter().map(|v| v.as_f64()));
        let y = filter.apply(&row_buf);
        for (t, v) in y.into_iter().enumerate() {
            out[(c, t)] = T::of(v);
        }
    }
    Ok(Trial {
        data: out,
        fs: trial.fs,
        channel_names: trial.channel_names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovEstimator {
    #[default]
    Plain,
    LedoitWolf,
}

impl CovEstimator {
    pub fn estimate<T: Real>(self, trial: &Trial<T>) -> Result<SpdMatrix<T>> {
        match self {
            CovEstimator::Plain => trial_covariance(trial),
            CovEstimator::LedoitWolf => ledoit_wolf_covariance(trial),
        }
    }
}

/// `X Xᵀ / tr(X Xᵀ)`, without mean removal.
pub fn trial_covariance<T: Real>(trial: &Trial<T>) -> Result<SpdMatrix<T>> {
    let s = trial.scatter();
    let tr = s.trace();
    if !(tr > T::zero()) {
        return Err(Error::degenerate("trial has zero signal energy"));
    }
    SpdMatrix::new(s / tr)
}

/// Sample second-moment matrix and its Ledoit-Wolf shrinkage intensity.
///
/// Samples are the `T` columns of the trial, taken as already centered.
pub fn ledoit_wolf_shrinkage<T: Real>(trial: &Trial<T>) -> Result<(DMatrix<T>, T)> {
    let x = &trial.data;
    let c = x.nrows();
    let n = T::of(x.ncols() as f64);
    let cf = T::of(c as f64);
    let emp = trial.scatter() / n;
    let tr = emp.trace();
    if !(tr > T::zero()) {
        return Err(Error::degenerate("trial has zero signal energy"));
    }
    let mu = tr / cf;

    // Σ_t ‖x_t‖⁴: fourth moments of the sample vectors
    let mut fourth = T::zero();
    for col in x.column_iter() {
        let sq = col.norm_squared();
        fourth += sq * sq;
    }
    let emp_sq = emp.norm_squared();
    let beta = (fourth / n - emp_sq) / (cf * n);
    let delta = (emp_sq - T::of(2.0) * mu * tr + cf * mu * mu) / cf;
    let beta = if beta < delta { beta } else { delta };
    let rho = if delta > T::zero() {
        let r = beta / delta;
        if r < T::zero() {
            T::zero()
        } else {
            r
        }
    } else {
        T::zero()
    };
    Ok((emp, rho))
}

/// `(1-ρ) S + ρ (tr S / C) I`, then trace-normalized.
pub fn ledoit_wolf_covariance<T: Real>(trial: &Trial<T>) -> Result<SpdMatrix<T>> {
    let (emp, rho) = ledoit_wolf_shrinkage(trial)?;
    let c = emp.nrows();
    let mu = emp.trace() / T::of(c as f64);
    let shrunk = emp * (T::one() - rho) + DMatrix::identity(c, c) * (rho * mu);
    let tr = shrunk.trace();
    SpdMatrix::new(shrunk / tr)
}
