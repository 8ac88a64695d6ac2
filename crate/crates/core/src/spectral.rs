//! Dirichlet sine eigenbasis on `[0, L]` and the exact per-mode linear flows.
//!
//! Mode `k` (1-based in the maths, 0-based in every slice here) carries the
//! normalized eigenfunction `e_k(ξ) = sqrt(2/L) sin(kπξ/L)` with Laplacian
//! eigenvalue `-α_k`, `α_k = (kπ/L)²`. Fields are stored as their coefficient
//! vectors against `{e_k}`, so the heat semigroup and the wave group act
//! diagonally (2×2 blocks for the wave group).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    length: f64,
    alphas: Vec<f64>,
    omegas: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(length: f64, modes: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::config("basis.L", format!("interval length must be positive, got {length}")));
        }
        if modes == 0 {
            return Err(Error::config("basis.N", "truncation level must be at least 1"));
        }
        let omegas: Vec<f64> = (1..=modes).map(|k| k as f64 * PI / length).collect();
        let alphas = omegas.iter().map(|w| w * w).collect();
        Ok(Self {
            length,
            alphas,
            omegas,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn modes(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `ω_k = sqrt(α_k)`, the angular frequency of mode `k` under the wave group.
    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    /// Smallest eigenvalue α₁; the dissipativity threshold for the reaction term.
    pub fn alpha_1(&self) -> f64 {
        self.alphas[0]
    }

    pub fn alpha_max(&self) -> f64 {
        *self.alphas.last().expect("basis has at least one mode")
    }

    /// Value of the normalized eigenfunction of 0-based mode index `k` at `xi`.
    pub fn eigenfunction(&self, k: usize, xi: f64) -> f64 {
        (2.0 / self.length).sqrt() * (self.omegas[k] * xi).sin()
    }

    /// Pointwise evaluation of the field's sine series.
    pub fn evaluate(&self, f: &SpectralField, xi: f64) -> f64 {
        f.coeffs()
            .iter()
            .enumerate()
            .map(|(k, c)| c * self.eigenfunction(k, xi))
            .sum()
    }

    /// `‖f‖_s = (Σ α_k^s f_k²)^{1/2}`.
    pub fn sobolev_norm(&self, f: &SpectralField, s: f64) -> Result<f64> {
        check_dim(self.modes(), f.len())?;
        Ok(self.weighted_sq(f.coeffs(), s).sqrt())
    }

    fn weighted_sq(&self, c: &[f64], s: f64) -> f64 {
        if s == 0.0 {
            return c.iter().map(|x| x * x).sum();
        }
        c.iter()
            .zip(&self.alphas)
            .map(|(x, a)| a.powf(s) * x * x)
            .sum()
    }

    /// Product-space norm `‖|x|‖_α = (‖u‖_α² + ‖v‖_{α-1}²)^{1/2}`.
    pub fn product_norm(&self, x: &WaveState, alpha: f64) -> Result<f64> {
        check_dim(self.modes(), x.u.len())?;
        check_dim(self.modes(), x.v.len())?;
        Ok((self.weighted_sq(x.u.coeffs(), alpha) + self.weighted_sq(x.v.coeffs(), alpha - 1.0)).sqrt())
    }

    /// Heat semigroup `E_t`: mode `k` is damped by `e^{-α_k t}`.
    pub fn apply_heat_semigroup(&self, f: &SpectralField, t: f64) -> Result<SpectralField> {
        check_dim(self.modes(), f.len())?;
        if !(t >= 0.0) {
            return Err(Error::usage(format!("heat semigroup needs t >= 0, got {t}")));
        }
        let coeffs = f
            .coeffs()
            .iter()
            .zip(&self.alphas)
            .map(|(c, a)| c * (-a * t).exp())
            .collect();
        Ok(SpectralField(coeffs))
    }

    /// Wave group `𝒮_t`, defined for every real `t`.
    pub fn apply_wave_group(&self, x: &WaveState, t: f64) -> Result<WaveState> {
        check_dim(self.modes(), x.u.len())?;
        check_dim(self.modes(), x.v.len())?;
        let mut out = x.clone();
        for (k, &w) in self.omegas.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            let (u, v) = (x.u.0[k], x.v.0[k]);
            out.u.0[k] = c * u + s / w * v;
            out.v.0[k] = -w * s * u + c * v;
        }
        Ok(out)
    }

    /// Collocation operator for pointwise (Nemytskii) nonlinearities.
    pub fn collocation(&self, grid_size: usize) -> Result<Collocation> {
        Collocation::new(self, grid_size)
    }

    /// Default collocation grid, twice the truncation level.
    pub fn default_collocation(&self) -> Collocation {
        Collocation::new(self, 2 * self.modes()).expect("2N >= N")
    }
}

/// Coefficients of an `H`-valued function against the sine eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralField(pub(crate) Vec<f64>);

impl SpectralField {
    /// Checked constructor: every coefficient must be finite.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::usage(format!("non-finite coefficient at mode {}", i + 1)));
        }
        Ok(Self(coeffs))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Unit coefficient in 0-based mode `k`.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut c = vec![0.0; n];
        c[k] = 1.0;
        Self(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// `H` inner product (Euclidean on coefficients, the basis being orthonormal).
    pub fn dot(&self, other: &SpectralField) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        SpectralField(self.0.iter().map(|c| c * s).collect())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        SpectralField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// Position/velocity pair of the wave system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveState {
    pub u: SpectralField,
    pub v: SpectralField,
}

impl WaveState {
    pub fn new(u: SpectralField, v: SpectralField) -> Result<Self> {
        check_dim(u.len(), v.len())?;
        Ok(Self { u, v })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            u: SpectralField::zeros(n),
            v: SpectralField::zeros(n),
        }
    }

    pub fn modes(&self) -> usize {
        self.u.len()
    }

    pub fn scaled(&self, s: f64) -> WaveState {
        WaveState {
            u: self.u.scaled(s),
            v: self.v.scaled(s),
        }
    }
}

/// Sampling and projection between coefficients and the interior nodes
/// `ξ_j = jL/(G+1)`, `j = 1..G`.
///
/// On these nodes the sampled sine vectors of modes `1..G` are mutually
/// orthogonal (DST-I), so `from_grid` is the exact discrete projection and
/// `from_grid ∘ to_grid` is the identity whenever `G >= N`.
#[derive(Debug, Clone)]
pub struct Collocation {
    modes: usize,
    nodes: Vec<f64>,
    /// Row-major `G × N` table of `e_k(ξ_j)`.
    table: Vec<f64>,
    weight: f64,
}

impl Collocation {
    pub fn new(basis: &SpectralBasis, grid_size: usize) -> Result<Self> {
        let n = basis.modes();
        if grid_size < n {
            return Err(Error::usage(format!(
                "collocation grid of {grid_size} nodes aliases {n} modes"
            )));
        }
        let h = basis.length() / (grid_size as f64 + 1.0);
        let nodes: Vec<f64> = (1..=grid_size).map(|j| j as f64 * h).collect();
        let mut table = Vec::with_capacity(grid_size * n);
        for j in 0..grid_size {
            for k in 0..n {
                // Integer phase index keeps the DST-I orthogonality exact to rounding.
                let phase = PI * ((k + 1) * (j + 1)) as f64 / (grid_size as f64 + 1.0);
                table.push((2.0 / basis.length()).sqrt() * phase.sin());
            }
        }
        Ok(Self {
            modes: n,
            nodes,
            table,
            weight: h,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn grid_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Quadrature weight `L/(G+1)` of the discrete inner product.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn to_grid(&self, f: &SpectralField) -> Result<Vec<f64>> {
        check_dim(self.modes, f.len())?;
        let mut out = vec![0.0; self.grid_size()];
        self.to_grid_into(f.coeffs(), &mut out);
        Ok(out)
    }

    pub fn from_grid(&self, values: &[f64]) -> Result<SpectralField> {
        check_dim(self.grid_size(), values.len())?;
        let mut out = vec![0.0; self.modes];
        self.from_grid_into(values, &mut out);
        Ok(SpectralField(out))
    }

    /// Allocation-free sampling for hot loops.
    pub fn to_grid_into(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.modes;
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.table[j * n..(j + 1) * n];
            *o = row.iter().zip(coeffs).map(|(e, c)| e * c).sum();
        }
    }

    pub fn from_grid_into(&self, values: &[f64], out: &mut [f64]) {
        let n = self.modes;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &val) in values.iter().enumerate() {
            let row = &self.table[j * n..(j + 1) * n];
            for (o, e) in out.iter_mut().zip(row) {
                *o += e * val;
            }
        }
        out.iter_mut().for_each(|o| *o *= self.weight);
    }

    /// Value of `e_k` (0-based) at node `j` (0-based).
    pub fn basis_value(&self, j: usize, k: usize) -> f64 {
        self.table[j * self.modes + k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basis_eigenvalues() {
        let b = SpectralBasis::new(PI, 3).unwrap();
        assert_relative_eq!(b.alphas()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.alphas()[1], 4.0, epsilon = 1e-14);
        assert_relative_eq!(b.alphas()[2], 9.0, epsilon = 1e-13);

        let b = SpectralBasis::new(1.0, 1).unwrap();
        assert_relative_eq!(b.alpha_1(), 9.869_604_401_089_358, epsilon = 1e-12);
    }

    #[test]
    fn basis_rejects_bad_input() {
        assert!(matches!(SpectralBasis::new(0.0, 4), Err(Error::Config(_))));
        assert!(matches!(SpectralBasis::new(-1.0, 4), Err(Error::Config(_))));
        assert!(matches!(SpectralBasis::new(1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn omega_squares_to_alpha() {
        let b = SpectralBasis::new(2.3, 40).unwrap();
        for (w, a) in b.omegas().iter().zip(b.alphas()) {
            assert!((w * w - a).abs() <= a * f64::EPSILON);
        }
        assert!(b.alphas().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn eigenfunctions_orthonormal_by_quadrature() {
        // Composite Simpson on a fine grid, independent of the DST table.
        let b = SpectralBasis::new(1.7, 6).unwrap();
        let m = 4000;
        let h = b.length() / m as f64;
        for j in 0..6 {
            for k in 0..6 {
                let f = |x: f64| b.eigenfunction(j, x) * b.eigenfunction(k, x);
                let mut s = f(0.0) + f(b.length());
                for i in 1..m {
                    s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
                }
                let val = s * h / 3.0;
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((val - want).abs() <= 1e-10, "({j},{k}) -> {val}");
            }
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let b = SpectralBasis::new(PI, 2).unwrap();
        let f = SpectralField::new(vec![3.0, 4.0]).unwrap();
        assert_relative_eq!(b.sobolev_norm(&f, 0.0).unwrap(), 5.0);
        let b = SpectralBasis::new(PI, 5).unwrap();
        for k in 0..5 {
            let e = SpectralField::unit(5, k);
            assert_relative_eq!(b.sobolev_norm(&e, 1.0).unwrap(), (k + 1) as f64, epsilon = 1e-12);
        }
        assert_eq!(b.sobolev_norm(&SpectralField::zeros(5), 1.5).unwrap(), 0.0);
        assert!(matches!(
            b.sobolev_norm(&SpectralField::zeros(4), 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn product_norm_examples() {
        let b = SpectralBasis::new(PI, 3).unwrap();
        assert_eq!(b.product_norm(&WaveState::zeros(3), 0.0).unwrap(), 0.0);
        let x = WaveState::new(SpectralField::unit(3, 0), SpectralField::zeros(3)).unwrap();
        assert_relative_eq!(b.product_norm(&x, 0.0).unwrap(), 1.0, epsilon = 1e-14);
        let x = WaveState::new(SpectralField::zeros(3), SpectralField::unit(3, 0)).unwrap();
        assert_relative_eq!(b.product_norm(&x, 0.0).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn heat_semigroup_examples() {
        let b = SpectralBasis::new(PI, 4).unwrap();
        let f = SpectralField::new(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(b.apply_heat_semigroup(&f, 0.0).unwrap(), f);
        let e = b.apply_heat_semigroup(&SpectralField::unit(4, 0), 1.0).unwrap();
        assert_relative_eq!(e.coeffs()[0], 0.367_879_441_171_442_3, epsilon = 1e-15);
        let e = b.apply_heat_semigroup(&SpectralField::unit(4, 2), 0.3).unwrap();
        assert_relative_eq!(e.coeffs()[2], (-9.0f64 * 0.3).exp(), epsilon = 1e-15);
        assert!(matches!(b.apply_heat_semigroup(&f, -0.1), Err(Error::Usage(_))));
    }

    #[test]
    fn wave_group_quarter_period() {
        let b = SpectralBasis::new(PI, 2).unwrap();
        let x = WaveState::new(SpectralField::unit(2, 0), SpectralField::zeros(2)).unwrap();
        let y = b.apply_wave_group(&x, PI / 2.0).unwrap();
        assert!((y.u.coeffs()[0]).abs() < 1e-15);
        assert!((y.v.coeffs()[0] + 1.0).abs() < 1e-15);
        assert_eq!(b.apply_wave_group(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn grid_samples_first_mode() {
        let b = SpectralBasis::new(2.0, 4).unwrap();
        let c = b.collocation(9).unwrap();
        let vals = c.to_grid(&SpectralField::unit(4, 0)).unwrap();
        for (j, v) in vals.iter().enumerate() {
            let xi = (j + 1) as f64 * 2.0 / 10.0;
            let want = (2.0f64 / 2.0).sqrt() * (PI * xi / 2.0).sin();
            assert!((v - want).abs() < 1e-14);
        }
        let zero = c.from_grid(&[0.0; 9]).unwrap();
        assert!(zero.coeffs().iter().all(|&x| x == 0.0));
        assert!(matches!(b.collocation(3), Err(Error::Usage(_))));
    }

    #[test]
    fn parseval_against_continuum_quadrature() {
        let b = SpectralBasis::new(1.0, 8).unwrap();
        let f = SpectralField::new((1..=8).map(|k| (k as f64).powi(-2) * (k as f64).cos()).collect()).unwrap();
        let m = 20000;
        let h = 1.0 / m as f64;
        let g = |x: f64| b.evaluate(&f, x).powi(2);
        let mut s = g(0.0) + g(1.0);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        let l2 = (s * h / 3.0).sqrt();
        assert!((l2 - b.sobolev_norm(&f, 0.0).unwrap()).abs() < 1e-8);
    }
}
