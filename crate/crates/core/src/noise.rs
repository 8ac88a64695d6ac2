//! Q-Wiener increments and exact per-mode stochastic convolutions.
//!
//! The covariance operators are diagonal in the sine basis, so every
//! convolution against the heat semigroup or the wave group decouples into
//! scalar (heat) or 2×2 (wave) Gaussian blocks that are sampled exactly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::spectral::{SpectralBasis, SpectralField, WaveState};

/// Eigenvalues `λ_k` of a trace-class covariance aligned with the sine basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QWienerSpec {
    lambdas: Vec<f64>,
}

impl QWienerSpec {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if let Some(k) = lambdas.iter().position(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::usage(format!(
                "covariance eigenvalue for mode {} must be finite and non-negative",
                k + 1
            )));
        }
        Ok(Self { lambdas })
    }

    /// `λ_k = c k^{-p}` for `k = 1..n`; `p > 1` keeps the infinite sequence summable.
    pub fn power_law(n: usize, c: f64, p: f64) -> Result<Self> {
        if !(p > 1.0) {
            return Err(Error::usage(format!("power-law exponent must exceed 1, got {p}")));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::usage(format!("power-law prefactor must be non-negative, got {c}")));
        }
        Self::new((1..=n).map(|k| c * (k as f64).powf(-p)).collect())
    }

    /// Default spectrum `λ_k = k^{-2}`.
    pub fn default_for(n: usize) -> Self {
        Self::power_law(n, 1.0, 2.0).expect("valid default spectrum")
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Increment `W(t + dt) - W(t)`: mode `k` is `Normal(0, λ_k dt)`.
pub fn sample_increment<R: Rng + ?Sized>(q: &QWienerSpec, dt: f64, rng: &mut R) -> Result<SpectralField> {
    if !(dt >= 0.0) {
        return Err(Error::usage(format!("increment needs dt >= 0, got {dt}")));
    }
    Ok(SpectralField(
        q.lambdas.iter().map(|l| (l * dt).sqrt() * normal(rng)).collect(),
    ))
}

/// Per-mode variance of `σ ∫_0^h E_{h-s} dW_s`: `σ² λ_k (1 - e^{-2α_k h}) / (2α_k)`.
pub fn heat_convolution_variance(q: &QWienerSpec, sigma: f64, h: f64, basis: &SpectralBasis) -> Result<Vec<f64>> {
    check_dim(basis.modes(), q.len())?;
    if !(h > 0.0) {
        return Err(Error::usage(format!("stochastic convolution needs h > 0, got {h}")));
    }
    Ok(q.lambdas
        .iter()
        .zip(basis.alphas())
        .map(|(l, a)| sigma * sigma * l * (-(-2.0 * a * h).exp_m1()) / (2.0 * a))
        .collect())
}

/// Precomputed standard deviations of the heat convolution over one step.
#[derive(Debug, Clone)]
pub struct HeatConvolution {
    std: Vec<f64>,
}

impl HeatConvolution {
    pub fn new(q: &QWienerSpec, sigma: f64, h: f64, basis: &SpectralBasis) -> Result<Self> {
        let var = heat_convolution_variance(q, sigma, h, basis)?;
        Ok(Self {
            std: var.into_iter().map(f64::sqrt).collect(),
        })
    }

    /// Adds one sample to `out` in place.
    pub fn add_sample<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        for (o, s) in out.iter_mut().zip(&self.std) {
            *o += s * normal(rng);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralField {
        let mut out = vec![0.0; self.std.len()];
        self.add_sample(&mut out, rng);
        SpectralField(out)
    }
}

pub fn sample_heat_convolution<R: Rng + ?Sized>(
    q: &QWienerSpec,
    sigma: f64,
    h: f64,
    basis: &SpectralBasis,
    rng: &mut R,
) -> Result<SpectralField> {
    Ok(HeatConvolution::new(q, sigma, h, basis)?.sample(rng))
}

/// Covariance block of one mode of `σ ∫_0^h 𝒮_{h-s} B dW_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCovariance {
    pub uu: f64,
    pub uv: f64,
    pub vv: f64,
}

/// `y - sin(y)` without cancellation for small `y`.
fn y_minus_sin(y: f64) -> f64 {
    if y.abs() < 0.1 {
        let y2 = y * y;
        y * y2 / 6.0 * (1.0 - y2 / 20.0 * (1.0 - y2 / 42.0 * (1.0 - y2 / 72.0 * (1.0 - y2 / 110.0))))
    } else {
        y - y.sin()
    }
}

/// Closed-form per-mode covariances from `∫ sin²`, `∫ cos²`, `∫ sin cos` over `[0, h]`.
pub fn wave_convolution_covariance(
    q: &QWienerSpec,
    sigma: f64,
    h: f64,
    basis: &SpectralBasis,
) -> Result<Vec<ModeCovariance>> {
    check_dim(basis.modes(), q.len())?;
    if !(h > 0.0) {
        return Err(Error::usage(format!("stochastic convolution needs h > 0, got {h}")));
    }
    Ok(q.lambdas
        .iter()
        .zip(basis.omegas())
        .map(|(&l, &w)| {
            let s2 = sigma * sigma * l;
            let x = w * h;
            let int_sin2 = y_minus_sin(2.0 * x) / (4.0 * w);
            let int_cos2 = h - int_sin2;
            let int_sin_cos = x.sin().powi(2) / (2.0 * w);
            ModeCovariance {
                uu: s2 * int_sin2 / (w * w),
                uv: s2 * int_sin_cos / w,
                vv: s2 * int_cos2,
            }
        })
        .collect())
}

/// Cholesky factors of the per-mode wave-convolution covariance for one step.
#[derive(Debug, Clone)]
pub struct WaveConvolution {
    factors: Vec<[f64; 3]>,
}

impl WaveConvolution {
    pub fn new(q: &QWienerSpec, sigma: f64, h: f64, basis: &SpectralBasis) -> Result<Self> {
        let cov = wave_convolution_covariance(q, sigma, h, basis)?;
        let mut factors = Vec::with_capacity(cov.len());
        for (k, c) in cov.iter().enumerate() {
            let l11 = c.uu.sqrt();
            let l21 = if l11 > 0.0 { c.uv / l11 } else { 0.0 };
            let mut d = c.vv - l21 * l21;
            if d < 0.0 {
                let scale = c.uu.max(c.vv).max(f64::MIN_POSITIVE);
                if d < -1e-14 * scale.max(1.0) {
                    return Err(Error::Internal(format!(
                        "wave convolution covariance of mode {} is not positive semidefinite",
                        k + 1
                    )));
                }
                d = 0.0;
            }
            factors.push([l11, l21, d.sqrt()]);
        }
        Ok(Self { factors })
    }

    /// Adds one sample to `(u, v)` in place.
    pub fn add_sample<R: Rng + ?Sized>(&self, u: &mut [f64], v: &mut [f64], rng: &mut R) {
        for ((f, uk), vk) in self.factors.iter().zip(u.iter_mut()).zip(v.iter_mut()) {
            let z1 = normal(rng);
            let z2 = normal(rng);
            *uk += f[0] * z1;
            *vk += f[1] * z1 + f[2] * z2;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WaveState {
        let n = self.factors.len();
        let mut x = WaveState::zeros(n);
        self.add_sample(&mut x.u.0, &mut x.v.0, rng);
        x
    }
}

pub fn sample_wave_convolution<R: Rng + ?Sized>(
    q: &QWienerSpec,
    sigma: f64,
    h: f64,
    basis: &SpectralBasis,
    rng: &mut R,
) -> Result<WaveState> {
    Ok(WaveConvolution::new(q, sigma, h, basis)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};

    /// Composite Simpson, the independent oracle for the closed forms.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn spectra_constructors() {
        let q = QWienerSpec::power_law(3, 2.0, 2.0).unwrap();
        assert_eq!(q.lambdas(), &[2.0, 0.5, 2.0 / 9.0]);
        assert!(QWienerSpec::power_law(3, 1.0, 1.0).is_err());
        assert!(QWienerSpec::new(vec![1.0, -0.1]).is_err());
        assert!((QWienerSpec::default_for(2).trace() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn zero_increment() {
        let q = QWienerSpec::default_for(4);
        let mut rng = RngStream::new(1, Purpose::Diagnostic).at(0);
        let z = sample_increment(&q, 0.0, &mut rng).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
        assert!(sample_increment(&q, -1.0, &mut rng).is_err());
    }

    #[test]
    fn heat_variance_matches_quadrature() {
        let b = SpectralBasis::new(1.3, 5).unwrap();
        let q = QWienerSpec::power_law(5, 0.7, 1.5).unwrap();
        let (sigma, h) = (0.8, 0.037);
        let var = heat_convolution_variance(&q, sigma, h, &b).unwrap();
        for k in 0..5 {
            let a = b.alphas()[k];
            let want = sigma * sigma * q.lambdas()[k] * simpson(|s| (-2.0 * a * s).exp(), 0.0, h, 2000);
            assert!((var[k] - want).abs() <= 1e-10 * want.max(1e-300), "mode {k}");
        }
        // Stationary limit and vanishing-step limit.
        let big = heat_convolution_variance(&q, sigma, 1e3, &b).unwrap();
        for k in 0..5 {
            let stat = sigma * sigma * q.lambdas()[k] / (2.0 * b.alphas()[k]);
            assert!((big[k] - stat).abs() <= 1e-14 * stat);
        }
        let tiny = heat_convolution_variance(&q, sigma, 1e-14, &b).unwrap();
        assert!(tiny.iter().all(|&v| v < 1e-13));
        assert!(heat_convolution_variance(&q, sigma, 0.0, &b).is_err());
    }

    #[test]
    fn wave_covariance_matches_quadrature() {
        let b = SpectralBasis::new(1.0, 6).unwrap();
        let q = QWienerSpec::default_for(6);
        let sigma = 0.5;
        for &h in &[1e-3, 0.05, 0.7] {
            let cov = wave_convolution_covariance(&q, sigma, h, &b).unwrap();
            for k in 0..6 {
                let w = b.omegas()[k];
                let s2 = sigma * sigma * q.lambdas()[k];
                let m = 4000;
                let uu = s2 * simpson(|s| (w * s).sin().powi(2), 0.0, h, m) / (w * w);
                let uv = s2 * simpson(|s| (w * s).sin() * (w * s).cos(), 0.0, h, m) / w;
                let vv = s2 * simpson(|s| (w * s).cos().powi(2), 0.0, h, m);
                assert!((cov[k].uu - uu).abs() <= 1e-10 * uu.abs().max(1e-12), "uu h={h} k={k}");
                assert!((cov[k].uv - uv).abs() <= 1e-10 * uv.abs().max(1e-12), "uv h={h} k={k}");
                assert!((cov[k].vv - vv).abs() <= 1e-10 * vv.abs(), "vv h={h} k={k}");
                let closed = s2 * (h / 2.0 + (2.0 * w * h).sin() / (4.0 * w));
                assert!((cov[k].vv - closed).abs() <= 1e-12 * closed);
            }
        }
    }

    #[test]
    fn wave_covariance_vanishes_with_step() {
        let b = SpectralBasis::new(1.0, 4).unwrap();
        let q = QWienerSpec::default_for(4);
        let cov = wave_convolution_covariance(&q, 1.0, 1e-12, &b).unwrap();
        for c in cov {
            assert!(c.uu >= 0.0 && c.uu < 1e-30);
            assert!(c.vv < 1e-11);
        }
        assert!(WaveConvolution::new(&q, 1.0, -1.0, &b).is_err());
    }

    #[test]
    fn empirical_increment_moments() {
        let q = QWienerSpec::power_law(4, 1.0, 2.0).unwrap();
        let dt = 0.01;
        let n = 100_000;
        let stream = RngStream::new(11, Purpose::Diagnostic);
        let mut sum_sq = [0.0; 4];
        let mut cross = 0.0;
        for i in 0..n {
            let z = sample_increment(&q, dt, &mut stream.at(i)).unwrap();
            for k in 0..4 {
                sum_sq[k] += z.coeffs()[k].powi(2);
            }
            cross += z.coeffs()[0] * z.coeffs()[1];
        }
        let mut total = 0.0;
        for k in 0..4 {
            let v = sum_sq[k] / n as f64;
            total += v;
            let want = q.lambdas()[k] * dt;
            assert!((v / want - 1.0).abs() < 0.05, "mode {k}: {v} vs {want}");
        }
        assert!((total / (dt * q.trace()) - 1.0).abs() < 0.05);
        let rho = cross / n as f64 / (q.lambdas()[0] * q.lambdas()[1]).sqrt() / dt;
        assert!(rho.abs() < 0.02, "rho = {rho}");
    }

    #[test]
    fn empirical_wave_covariance() {
        let b = SpectralBasis::new(1.0, 3).unwrap();
        let q = QWienerSpec::default_for(3);
        let h = 0.2;
        let wc = WaveConvolution::new(&q, 0.5, h, &b).unwrap();
        let cov = wave_convolution_covariance(&q, 0.5, h, &b).unwrap();
        let n = 100_000;
        let stream = RngStream::new(5, Purpose::Diagnostic);
        let mut acc = [[0.0f64; 3]; 3];
        for i in 0..n {
            let x = wc.sample(&mut stream.at(i));
            for k in 0..3 {
                let (u, v) = (x.u.coeffs()[k], x.v.coeffs()[k]);
                acc[k][0] += u * u;
                acc[k][1] += u * v;
                acc[k][2] += v * v;
            }
        }
        for k in 0..3 {
            let uu = acc[k][0] / n as f64;
            let vv = acc[k][2] / n as f64;
            let uv = acc[k][1] / n as f64;
            assert!((uu / cov[k].uu - 1.0).abs() < 0.05, "uu mode {k}");
            assert!((vv / cov[k].vv - 1.0).abs() < 0.05, "vv mode {k}");
            // Cross term judged on the correlation scale.
            let rho_emp = uv / (uu * vv).sqrt();
            let rho = cov[k].uv / (cov[k].uu * cov[k].vv).sqrt();
            assert!((rho_emp - rho).abs() < 0.05 * rho.abs().max(0.2), "uv mode {k}");
        }
    }

    #[test]
    fn reproducible_samples() {
        let b = SpectralBasis::new(1.0, 5).unwrap();
        let q = QWienerSpec::default_for(5);
        let s = RngStream::new(9, Purpose::SlowNoise).replica(3);
        let a = sample_wave_convolution(&q, 0.5, 0.01, &b, &mut s.at(17)).unwrap();
        let c = sample_wave_convolution(&q, 0.5, 0.01, &b, &mut s.at(17)).unwrap();
        assert_eq!(a, c);
    }
}
