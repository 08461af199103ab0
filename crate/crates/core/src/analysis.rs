//! Mixing diagnostics: overlap series between paired chains, their
//! autocorrelation, and exponential decay-rate fits.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mcmc::{ChainTrace, KernelKind};
use crate::ising::SpinConfig;

pub const DEFAULT_CUTOFF: f64 = 0.05;
pub const DEFAULT_BURN_IN: f64 = 0.1;
/// Fewest lags a decay fit accepts.
pub const MIN_FIT_LAGS: usize = 4;

/// `q(t) = |x(t) AND x'(t)| / N` for two chains sampled at the same steps.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapSeries {
    pub values: Vec<f64>,
    pub n_sites: usize,
}

impl OverlapSeries {
    /// Drop the leading `fraction` of the series.
    pub fn after_burn_in(&self, fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return invalid(format!("burn-in fraction {fraction} outside [0, 1)"));
        }
        let skip = (self.values.len() as f64 * fraction).floor() as usize;
        Ok(Self {
            values: self.values[skip..].to_vec(),
            n_sites: self.n_sites,
        })
    }
}

pub fn overlap_series(a: &ChainTrace, b: &ChainTrace) -> Result<OverlapSeries> {
    if a.n != b.n || a.len() != b.len() || a.thin != b.thin {
        return invalid(format!(
            "traces differ in shape: n {} vs {}, length {} vs {}, thin {} vs {}",
            a.n,
            b.n,
            a.len(),
            b.len(),
            a.thin,
            b.thin
        ));
    }
    let n = a.n as f64;
    let values = (0..a.len())
        .map(|t| {
            let common: u32 = a
                .packed(t)
                .iter()
                .zip(b.packed(t))
                .map(|(x, y)| (x & y).count_ones())
                .sum();
            f64::from(common) / n
        })
        .collect();
    Ok(OverlapSeries {
        values,
        n_sites: a.n,
    })
}

/// Overlap of two stored configuration sequences, as read back from trace files.
pub fn overlap_from_configs(a: &[SpinConfig], b: &[SpinConfig]) -> Result<OverlapSeries> {
    if a.len() != b.len() {
        return invalid(format!("sequences differ in length: {} vs {}", a.len(), b.len()));
    }
    let n = a.first().map_or(0, SpinConfig::len);
    if a.iter().chain(b).any(|x| x.len() != n) {
        return invalid("configurations differ in size");
    }
    let values = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let common = x.bits().iter().zip(y.bits()).filter(|(p, q)| **p == 1 && **q == 1).count();
            common as f64 / n as f64
        })
        .collect();
    Ok(OverlapSeries { values, n_sites: n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrResult {
    /// `rho[l]` for lags `0..=max_lag`.
    pub rho: Vec<f64>,
    pub mean_q: f64,
    pub var_q: f64,
    /// The series was constant; `rho` is then all ones.
    pub degenerate: bool,
}

/// Above this many multiply-adds the autocovariance goes through an FFT.
const DIRECT_LIMIT: usize = 20_000_000;

/// Normalised autocorrelation with the biased (divide by `T`) covariance
/// estimator and the whole-series mean.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<AutocorrResult> {
    let t = series.len();
    if t <= max_lag + 10 {
        return Err(Error::InsufficientData(format!(
            "series of length {t} is too short for {max_lag} lags"
        )));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let centred: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let cov = if t * (max_lag + 1) <= DIRECT_LIMIT {
        autocov_direct(&centred, max_lag)
    } else {
        autocov_fft(&centred, max_lag)
    };
    let var = cov[0];
    if var <= 0.0 || centred.iter().all(|&c| c == 0.0) {
        return Ok(AutocorrResult {
            rho: vec![1.0; max_lag + 1],
            mean_q: mean,
            var_q: 0.0,
            degenerate: true,
        });
    }
    Ok(AutocorrResult {
        rho: cov.iter().map(|c| c / var).collect(),
        mean_q: mean,
        var_q: var,
        degenerate: false,
    })
}

fn autocov_direct(c: &[f64], max_lag: usize) -> Vec<f64> {
    let t = c.len() as f64;
    (0..=max_lag)
        .map(|l| c.iter().zip(&c[l..]).map(|(a, b)| a * b).sum::<f64>() / t)
        .collect()
}

fn autocov_fft(c: &[f64], max_lag: usize) -> Vec<f64> {
    let n = (c.len() + max_lag + 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut buf);
    for v in &mut buf {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let scale = 1.0 / (n as f64 * c.len() as f64);
    buf[..=max_lag].iter().map(|v| v.re * scale).collect()
}

/// `rho(l) ~ A exp(-tau l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    /// Inclusive lag range used.
    pub fit_window: (usize, usize),
    /// RMS of the log-domain residuals.
    pub residual: f64,
    /// The correlation never fell below the cutoff, or the fitted rate is zero.
    pub slow_mixing: bool,
}

/// Weighted least squares of `ln rho(l)` on `l` over the contiguous run of
/// lags `l >= 1` with `rho(l) > cutoff`, weights `rho(l)^2`.
pub fn fit_decay_rate(rho: &[f64], cutoff: f64) -> Result<DecayFit> {
    let mut end = 0;
    for (l, &r) in rho.iter().enumerate().skip(1) {
        if r > cutoff && r.is_finite() {
            end = l;
        } else {
            break;
        }
    }
    if end < MIN_FIT_LAGS {
        return Err(Error::InsufficientData(format!(
            "only {end} lags above cutoff {cutoff}, need {MIN_FIT_LAGS}"
        )));
    }
    let pts: Vec<(f64, f64, f64)> = (1..=end)
        .map(|l| (l as f64, rho[l].ln(), rho[l] * rho[l]))
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / pts.len() as f64)
        .sqrt();
    let rate = (-slope).max(0.0);
    Ok(DecayFit {
        amplitude: intercept.exp(),
        rate,
        fit_window: (1, end),
        residual,
        slow_mixing: end + 1 == rho.len() || rate == 0.0,
    })
}

/// Running minimum of the energies.
pub fn best_energy_trace(energies: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    energies
        .iter()
        .map(|&e| {
            best = best.min(e);
            best
        })
        .collect()
}

/// Pointwise mean and sample standard deviation of several `rho` curves,
/// truncated to the shortest.
pub fn mean_autocorrelation(curves: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    if curves.is_empty() {
        return invalid("no autocorrelation curves to average");
    }
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for l in 0..len {
        let m = curves.iter().map(|c| c[l]).sum::<f64>() / n;
        mean[l] = m;
        if curves.len() > 1 {
            std[l] = (curves.iter().map(|c| (c[l] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        }
    }
    Ok((mean, std))
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub kernel: KernelKind,
    pub tau_mean: f64,
    pub tau_std: f64,
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub kernels: Vec<KernelSummary>,
    /// `(a, b, tau_mean(a) / tau_mean(b))` for every ordered pair `a != b`.
    pub ratios: Vec<(KernelKind, KernelKind, f64)>,
}

impl EnsembleSummary {
    pub fn ratio(&self, a: KernelKind, b: KernelKind) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.0 == a && r.1 == b)
            .map(|r| r.2)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "kernel,tau_mean,tau_std,repeats")?;
        for k in &self.kernels {
            writeln!(w, "{},{},{},{}", k.kernel, k.tau_mean, k.tau_std, k.repeats)?;
        }
        Ok(())
    }
}

/// Per-kernel `tau` mean and spread across repeats, plus pairwise ratios.
pub fn ensemble_summary(fits: &BTreeMap<KernelKind, Vec<DecayFit>>) -> Result<EnsembleSummary> {
    let mut kernels = Vec::new();
    for (&kernel, list) in fits {
        if list.is_empty() {
            return invalid(format!("no fits for kernel {kernel}"));
        }
        let taus: Vec<f64> = list.iter().map(|f| f.rate).collect();
        let (tau_mean, tau_std) = mean_std(&taus);
        kernels.push(KernelSummary {
            kernel,
            tau_mean,
            tau_std,
            repeats: taus.len(),
        });
    }
    let mut ratios = Vec::new();
    for a in &kernels {
        for b in &kernels {
            if a.kernel != b.kernel {
                ratios.push((a.kernel, b.kernel, a.tau_mean / b.tau_mean));
            }
        }
    }
    Ok(EnsembleSummary { kernels, ratios })
}

/// `lag,rho_mean,rho_std` rows.
pub fn write_rho_csv(w: &mut impl Write, mean: &[f64], std: &[f64]) -> Result<()> {
    writeln!(w, "lag,rho_mean,rho_std")?;
    for (l, (m, s)) in mean.iter().zip(std).enumerate() {
        writeln!(w, "{l},{m},{s}")?;
    }
    Ok(())
}

/// `step,best_energy` rows.
pub fn write_best_energy_csv(w: &mut impl Write, best: &[f64]) -> Result<()> {
    writeln!(w, "step,best_energy")?;
    for (t, e) in best.iter().enumerate() {
        writeln!(w, "{t},{e}")?;
    }
    Ok(())
}

/// Overlap series of a chain pair after burn-in, its autocorrelation up to
/// `max_lag` (shortened to fit the series) and the decay fit.
pub fn analyse_pair(
    a: &ChainTrace,
    b: &ChainTrace,
    burn_in: f64,
    max_lag: usize,
    cutoff: f64,
) -> Result<(AutocorrResult, Result<DecayFit>)> {
    analyse_overlap(&overlap_series(a, b)?, burn_in, max_lag, cutoff)
}

/// [`analyse_pair`] on a precomputed overlap series.
pub fn analyse_overlap(
    q: &OverlapSeries,
    burn_in: f64,
    max_lag: usize,
    cutoff: f64,
) -> Result<(AutocorrResult, Result<DecayFit>)> {
    let q = q.after_burn_in(burn_in)?;
    let lag = max_lag.min(q.values.len().saturating_sub(11));
    let ac = autocorrelation(&q.values, lag)?;
    let fit = fit_decay_rate(&ac.rho, cutoff);
    Ok((ac, fit))
}
