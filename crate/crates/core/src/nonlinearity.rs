//! Catalog of admissible drifts `g` (fast reaction) and `F` (slow coupling),
//! their Nemytskii realization on the collocation grid, and the averaged
//! drift `F̄(u) = ∫ F(u, y) μ(dy)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fast::InvariantSample;
use crate::spectral::{Collocation, SpectralBasis, SpectralField};

/// Scalar functions applied pointwise. Every member is globally Lipschitz
/// with bounded first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScalarFn {
    Zero,
    /// `a x + b`
    Affine { a: f64, b: f64 },
    /// `a tanh(x)`
    ScaledTanh { a: f64 },
    /// `sin(x + c)`
    SinShift { c: f64 },
}

impl ScalarFn {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Affine { a, b } => a * x + b,
            ScalarFn::ScaledTanh { a } => a * x.tanh(),
            ScalarFn::SinShift { c } => (x + c).sin(),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Affine { a, .. } => a,
            ScalarFn::ScaledTanh { a } => {
                let t = x.tanh();
                a * (1.0 - t * t)
            }
            ScalarFn::SinShift { c } => (x + c).cos(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Zero | ScalarFn::Affine { .. } => 0.0,
            ScalarFn::ScaledTanh { a } => {
                let t = x.tanh();
                -2.0 * a * t * (1.0 - t * t)
            }
            ScalarFn::SinShift { c } => -(x + c).sin(),
        }
    }

    /// `sup |f'|`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Affine { a, .. } => a.abs(),
            ScalarFn::ScaledTanh { a } => a.abs(),
            ScalarFn::SinShift { .. } => 1.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Zero)
            || matches!(self, ScalarFn::Affine { a, b } if *a == 0.0 && *b == 0.0)
            || matches!(self, ScalarFn::ScaledTanh { a } if *a == 0.0)
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, ScalarFn::Zero | ScalarFn::Affine { .. })
    }

    /// `E f(Z)` for `Z ~ Normal(0, var)`, in closed form.
    pub fn gaussian_expectation(&self, var: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Affine { b, .. } => b,
            // odd function of a symmetric law
            ScalarFn::ScaledTanh { .. } => 0.0,
            ScalarFn::SinShift { c } => c.sin() * (-0.5 * var).exp(),
        }
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ScalarFn::Zero => write!(f, "zero"),
            ScalarFn::Affine { a, b } => write!(f, "affine:{a},{b}"),
            ScalarFn::ScaledTanh { a } => write!(f, "scaled_tanh:{a}"),
            ScalarFn::SinShift { c } => write!(f, "sin_shift:{c}"),
        }
    }
}

impl FromStr for ScalarFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (s.trim(), ""),
        };
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number {x:?} in {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        if nums.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse(format!("non-finite parameter in {s:?}")));
        }
        match (name, nums.as_slice()) {
            ("zero", []) => Ok(ScalarFn::Zero),
            ("affine", [a]) => Ok(ScalarFn::Affine { a: *a, b: 0.0 }),
            ("affine", [a, b]) => Ok(ScalarFn::Affine { a: *a, b: *b }),
            ("scaled_tanh", [a]) => Ok(ScalarFn::ScaledTanh { a: *a }),
            ("sin", []) => Ok(ScalarFn::SinShift { c: 0.0 }),
            ("sin_shift", [c]) => Ok(ScalarFn::SinShift { c: *c }),
            _ => Err(Error::Parse(format!(
                "unknown scalar function {s:?} (expected zero, affine:a[,b], scaled_tanh:a, sin, sin_shift:c)"
            ))),
        }
    }
}

impl TryFrom<String> for ScalarFn {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScalarFn> for String {
    fn from(f: ScalarFn) -> String {
        f.to_string()
    }
}

/// Reaction term `g` of the fast equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReactionSpec {
    pub kind: ScalarFn,
}

impl ReactionSpec {
    pub fn new(kind: ScalarFn) -> Result<Self> {
        if let ScalarFn::SinShift { .. } = kind {
            return Err(Error::config(
                "nonlinearities.reaction",
                "reaction must be one of zero, affine:a,b, scaled_tanh:a",
            ));
        }
        Ok(Self { kind })
    }

    pub fn zero() -> Self {
        Self { kind: ScalarFn::Zero }
    }

    pub fn lipschitz(&self) -> f64 {
        self.kind.lipschitz()
    }

    pub fn is_zero(&self) -> bool {
        self.kind.is_zero()
    }

    /// Mixing rate `η = α₁ - L_g`; fails unless `L_g < α₁`.
    pub fn mixing_rate(&self, basis: &SpectralBasis) -> Result<f64> {
        let lg = self.lipschitz();
        if lg >= basis.alpha_1() {
            return Err(Error::config(
                "nonlinearities.reaction.lipschitz",
                format!(
                    "L_g = {lg} >= alpha_1 = {}: the fast reaction must satisfy L_g < alpha_1",
                    basis.alpha_1()
                ),
            ));
        }
        Ok(basis.alpha_1() - lg)
    }

    pub fn eval(&self, colloc: &Collocation, y: &SpectralField) -> Result<SpectralField> {
        check_dim(colloc.modes(), y.len())?;
        let mut scratch = GridScratch::new(colloc);
        let mut out = vec![0.0; y.len()];
        self.eval_into(colloc, y.coeffs(), &mut scratch, &mut out);
        Ok(SpectralField(out))
    }

    pub(crate) fn eval_into(&self, colloc: &Collocation, y: &[f64], s: &mut GridScratch, out: &mut [f64]) {
        if self.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        colloc.to_grid_into(y, &mut s.a);
        for x in s.a.iter_mut() {
            *x = self.kind.value(*x);
        }
        colloc.from_grid_into(&s.a, out);
    }
}

/// Reusable grid buffers for allocation-free Nemytskii evaluation.
#[derive(Debug, Clone)]
pub struct GridScratch {
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
}

impl GridScratch {
    pub fn new(colloc: &Collocation) -> Self {
        let g = colloc.grid_size();
        Self {
            a: vec![0.0; g],
            b: vec![0.0; g],
        }
    }
}

/// Coupling drift `F(u, y)` of the slow equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingSpec {
    /// `F(u, y)(ξ) = f1(u(ξ)) + f2(y(ξ))`
    Separable { f1: ScalarFn, f2: ScalarFn },
    /// `F(u, y)(ξ) = sin(u(ξ) + y(ξ))`
    EntangledSin,
}

impl CouplingSpec {
    pub fn separable(f1: ScalarFn, f2: ScalarFn) -> Self {
        CouplingSpec::Separable { f1, f2 }
    }

    /// `L_F` with `‖F(u,y) - F(u',y')‖ <= L_F (‖u-u'‖ + ‖y-y'‖)`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            CouplingSpec::Separable { f1, f2 } => f1.lipschitz().max(f2.lipschitz()),
            CouplingSpec::EntangledSin => 1.0,
        }
    }

    /// Bound `L` on `‖D_u F(u,y)·w‖ / ‖w‖`.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            CouplingSpec::Separable { f1, .. } => f1.lipschitz(),
            CouplingSpec::EntangledSin => 1.0,
        }
    }

    /// True when `F` does not depend on `y`, so `F̄ = F`.
    pub fn ignores_fast(&self) -> bool {
        matches!(self, CouplingSpec::Separable { f2, .. } if f2.is_zero())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CouplingSpec::Separable { f1, f2 } if f1.is_zero() && f2.is_zero())
    }

    #[inline]
    fn point(&self, u: f64, y: f64) -> f64 {
        match self {
            CouplingSpec::Separable { f1, f2 } => f1.value(u) + f2.value(y),
            CouplingSpec::EntangledSin => (u + y).sin(),
        }
    }

    #[inline]
    fn point_du(&self, u: f64, y: f64) -> f64 {
        match self {
            CouplingSpec::Separable { f1, .. } => f1.derivative(u),
            CouplingSpec::EntangledSin => (u + y).cos(),
        }
    }

    pub fn eval(&self, colloc: &Collocation, u: &SpectralField, y: &SpectralField) -> Result<SpectralField> {
        check_dim(colloc.modes(), u.len())?;
        check_dim(colloc.modes(), y.len())?;
        let mut s = GridScratch::new(colloc);
        let mut out = vec![0.0; u.len()];
        self.eval_into(colloc, u.coeffs(), y.coeffs(), &mut s, &mut out);
        Ok(SpectralField(out))
    }

    pub(crate) fn eval_into(&self, colloc: &Collocation, u: &[f64], y: &[f64], s: &mut GridScratch, out: &mut [f64]) {
        if self.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        colloc.to_grid_into(u, &mut s.a);
        colloc.to_grid_into(y, &mut s.b);
        for (a, b) in s.a.iter_mut().zip(&s.b) {
            *a = self.point(*a, *b);
        }
        colloc.from_grid_into(&s.a, out);
    }

    /// Values of `F(u, y)` at the collocation nodes.
    pub(crate) fn eval_nodes(&self, u_nodes: &[f64], y_nodes: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(u_nodes).zip(y_nodes) {
            *o = self.point(*a, *b);
        }
    }

    /// Directional derivative `D_u F(u, y)·w` by the pointwise chain rule.
    pub fn du(&self, colloc: &Collocation, u: &SpectralField, y: &SpectralField, w: &SpectralField) -> Result<SpectralField> {
        check_dim(colloc.modes(), u.len())?;
        check_dim(colloc.modes(), y.len())?;
        check_dim(colloc.modes(), w.len())?;
        let u_n = colloc.to_grid(u)?;
        let y_n = colloc.to_grid(y)?;
        let mut w_n = colloc.to_grid(w)?;
        for ((x, a), b) in w_n.iter_mut().zip(&u_n).zip(&y_n) {
            *x *= self.point_du(*a, *b);
        }
        colloc.from_grid(&w_n)
    }
}

pub fn eval_g(spec: &ReactionSpec, colloc: &Collocation, y: &SpectralField) -> Result<SpectralField> {
    spec.eval(colloc, y)
}

pub fn eval_f(spec: &CouplingSpec, colloc: &Collocation, u: &SpectralField, y: &SpectralField) -> Result<SpectralField> {
    spec.eval(colloc, u, y)
}

pub fn df_u(
    spec: &CouplingSpec,
    colloc: &Collocation,
    u: &SpectralField,
    y: &SpectralField,
    w: &SpectralField,
) -> Result<SpectralField> {
    spec.du(colloc, u, y, w)
}

/// Variance `s²(ξ) = Σ_k v_k e_k(ξ)²` of a centered field with independent
/// mode variances `v_k`, at each collocation node.
pub fn pointwise_variance(colloc: &Collocation, mode_variances: &[f64]) -> Result<Vec<f64>> {
    check_dim(colloc.modes(), mode_variances.len())?;
    Ok((0..colloc.grid_size())
        .map(|j| {
            mode_variances
                .iter()
                .enumerate()
                .map(|(k, v)| v * colloc.basis_value(j, k).powi(2))
                .sum()
        })
        .collect())
}

/// Stationary per-mode variances `σ₂² λ_k / (2α_k)` of the Ornstein-Uhlenbeck fast process.
pub fn ou_stationary_variances(basis: &SpectralBasis, lambdas: &[f64], sigma: f64) -> Vec<f64> {
    lambdas
        .iter()
        .zip(basis.alphas())
        .map(|(l, a)| sigma * sigma * l / (2.0 * a))
        .collect()
}

/// Frozen averaged drift: either a closed form (OU fast process, separable `F`)
/// or an empirical average over a fixed set of invariant-measure samples.
#[derive(Debug, Clone)]
pub enum AveragedDrift {
    Oracle {
        f1: ScalarFn,
        /// `E f2(Z_ξ)` at each node.
        offset_nodes: Vec<f64>,
        colloc: Collocation,
    },
    Ergodic {
        coupling: CouplingSpec,
        /// Samples `y_i` at the collocation nodes.
        sample_nodes: Vec<Vec<f64>>,
        /// Precomputed `(1/n) Σ f2(y_i)` at the nodes when `F` is separable.
        separable_offset: Option<(ScalarFn, Vec<f64>)>,
        colloc: Collocation,
    },
}

impl AveragedDrift {
    /// Closed-form `F̄` when the fast process is Ornstein-Uhlenbeck (`g ≡ 0`).
    pub fn oracle(
        coupling: &CouplingSpec,
        reaction: &ReactionSpec,
        ou_variances: &[f64],
        colloc: &Collocation,
    ) -> Result<Self> {
        if !reaction.is_zero() {
            return Err(Error::UnsupportedOracle(
                "the fast process is not Ornstein-Uhlenbeck (reaction is nonzero)".into(),
            ));
        }
        let CouplingSpec::Separable { f1, f2 } = *coupling else {
            return Err(Error::UnsupportedOracle("coupling is not separable".into()));
        };
        let s2 = pointwise_variance(colloc, ou_variances)?;
        Ok(AveragedDrift::Oracle {
            f1,
            offset_nodes: s2.iter().map(|v| f2.gaussian_expectation(*v)).collect(),
            colloc: colloc.clone(),
        })
    }

    /// Empirical `F̄` frozen on `inv`'s samples.
    pub fn ergodic(coupling: &CouplingSpec, inv: &InvariantSample, colloc: &Collocation) -> Result<Self> {
        if inv.samples.is_empty() {
            return Err(Error::usage("invariant sample is empty"));
        }
        let sample_nodes = inv
            .samples
            .iter()
            .map(|y| colloc.to_grid(y))
            .collect::<Result<Vec<_>>>()?;
        let separable_offset = match *coupling {
            CouplingSpec::Separable { f1, f2 } => {
                let g = colloc.grid_size();
                let mut acc = vec![0.0; g];
                for s in &sample_nodes {
                    for (a, y) in acc.iter_mut().zip(s) {
                        *a += f2.value(*y);
                    }
                }
                let n = sample_nodes.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                Some((f1, acc))
            }
            CouplingSpec::EntangledSin => None,
        };
        Ok(AveragedDrift::Ergodic {
            coupling: *coupling,
            sample_nodes,
            separable_offset,
            colloc: colloc.clone(),
        })
    }

    /// `F̄ ≡ 0`.
    pub fn zero(colloc: &Collocation) -> Self {
        AveragedDrift::Oracle {
            f1: ScalarFn::Zero,
            offset_nodes: vec![0.0; colloc.grid_size()],
            colloc: colloc.clone(),
        }
    }

    pub fn collocation(&self) -> &Collocation {
        match self {
            AveragedDrift::Oracle { colloc, .. } | AveragedDrift::Ergodic { colloc, .. } => colloc,
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, AveragedDrift::Oracle { .. })
    }

    /// `F̄` at the collocation nodes, given `u` at the nodes.
    pub(crate) fn eval_nodes(&self, u_nodes: &[f64], out: &mut [f64]) {
        match self {
            AveragedDrift::Oracle { f1, offset_nodes, .. }
            | AveragedDrift::Ergodic {
                separable_offset: Some((f1, offset_nodes)),
                ..
            } => {
                for ((o, u), c) in out.iter_mut().zip(u_nodes).zip(offset_nodes) {
                    *o = f1.value(*u) + c;
                }
            }
            AveragedDrift::Ergodic {
                coupling, sample_nodes, ..
            } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for s in sample_nodes {
                    for ((o, u), y) in out.iter_mut().zip(u_nodes).zip(s) {
                        *o += coupling.point(*u, *y);
                    }
                }
                let n = sample_nodes.len() as f64;
                out.iter_mut().for_each(|o| *o /= n);
            }
        }
    }

    /// Pointwise multiplier `m(ξ)` with `D F̄(u)·w = m w` at the nodes.
    pub(crate) fn derivative_nodes(&self, u_nodes: &[f64], out: &mut [f64]) {
        match self {
            AveragedDrift::Oracle { f1, .. }
            | AveragedDrift::Ergodic {
                separable_offset: Some((f1, _)),
                ..
            } => {
                for (o, u) in out.iter_mut().zip(u_nodes) {
                    *o = f1.derivative(*u);
                }
            }
            AveragedDrift::Ergodic {
                coupling, sample_nodes, ..
            } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for s in sample_nodes {
                    for ((o, u), y) in out.iter_mut().zip(u_nodes).zip(s) {
                        *o += coupling.point_du(*u, *y);
                    }
                }
                let n = sample_nodes.len() as f64;
                out.iter_mut().for_each(|o| *o /= n);
            }
        }
    }

    pub(crate) fn eval_into(&self, u: &[f64], s: &mut GridScratch, out: &mut [f64]) {
        let colloc = self.collocation();
        colloc.to_grid_into(u, &mut s.a);
        self.eval_nodes(&s.a, &mut s.b);
        colloc.from_grid_into(&s.b, out);
    }

    pub fn eval(&self, u: &SpectralField) -> Result<SpectralField> {
        let colloc = self.collocation();
        check_dim(colloc.modes(), u.len())?;
        let mut s = GridScratch::new(colloc);
        let mut out = vec![0.0; u.len()];
        self.eval_into(u.coeffs(), &mut s, &mut out);
        Ok(SpectralField(out))
    }

    /// `D F̄(u)·w`.
    pub fn derivative(&self, u: &SpectralField, w: &SpectralField) -> Result<SpectralField> {
        let colloc = self.collocation();
        check_dim(colloc.modes(), u.len())?;
        check_dim(colloc.modes(), w.len())?;
        let u_n = colloc.to_grid(u)?;
        let mut m = vec![0.0; u_n.len()];
        self.derivative_nodes(&u_n, &mut m);
        let mut w_n = colloc.to_grid(w)?;
        for (x, mk) in w_n.iter_mut().zip(&m) {
            *x *= mk;
        }
        colloc.from_grid(&w_n)
    }
}

/// Closed-form `F̄(u)` for an Ornstein-Uhlenbeck fast process.
pub fn fbar_oracle(
    coupling: &CouplingSpec,
    reaction: &ReactionSpec,
    colloc: &Collocation,
    u: &SpectralField,
    ou_variances: &[f64],
) -> Result<SpectralField> {
    AveragedDrift::oracle(coupling, reaction, ou_variances, colloc)?.eval(u)
}

/// Sample-average estimate of `F̄(u)` with standard errors per mode and per node.
#[derive(Debug, Clone, Serialize)]
pub struct FbarEstimate {
    pub mean: SpectralField,
    pub stderr: Vec<f64>,
    pub node_mean: Vec<f64>,
    pub node_stderr: Vec<f64>,
    pub samples: usize,
}

/// Standard error of the mean of a (possibly autocorrelated) chain by
/// non-overlapping batch means; plain iid formula below 16 samples.
pub fn batch_means_stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    if n < 16 {
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        return (v / n as f64).sqrt();
    }
    let batches = (n as f64).sqrt().floor() as usize;
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (v / batches as f64).sqrt()
}

pub fn estimate_fbar(
    coupling: &CouplingSpec,
    colloc: &Collocation,
    u: &SpectralField,
    inv: &InvariantSample,
) -> Result<FbarEstimate> {
    check_dim(colloc.modes(), u.len())?;
    let n = inv.samples.len();
    if n == 0 {
        return Err(Error::usage("cannot estimate the averaged drift from an empty sample"));
    }
    let g = colloc.grid_size();
    let u_n = colloc.to_grid(u)?;
    let mut node_series = vec![Vec::with_capacity(n); g];
    let mut mode_series = vec![Vec::with_capacity(n); colloc.modes()];
    let mut y_n = vec![0.0; g];
    let mut f_n = vec![0.0; g];
    let mut f_c = vec![0.0; colloc.modes()];
    for y in &inv.samples {
        check_dim(colloc.modes(), y.len())?;
        colloc.to_grid_into(y.coeffs(), &mut y_n);
        coupling.eval_nodes(&u_n, &y_n, &mut f_n);
        colloc.from_grid_into(&f_n, &mut f_c);
        for (s, v) in node_series.iter_mut().zip(&f_n) {
            s.push(*v);
        }
        for (s, v) in mode_series.iter_mut().zip(&f_c) {
            s.push(*v);
        }
    }
    let mean = |s: &Vec<f64>| s.iter().sum::<f64>() / n as f64;
    Ok(FbarEstimate {
        mean: SpectralField(mode_series.iter().map(mean).collect()),
        stderr: mode_series.iter().map(|s| batch_means_stderr(s)).collect(),
        node_mean: node_series.iter().map(mean).collect(),
        node_stderr: node_series.iter().map(|s| batch_means_stderr(s)).collect(),
        samples: n,
    })
}

/// Finite-difference derivative of the empirical `F̄` against the empirical
/// average of `D_u F`, both on the same frozen sample set.
#[derive(Debug, Clone, Serialize)]
pub struct ExchangeReport {
    pub delta: f64,
    pub finite_difference: SpectralField,
    pub averaged_derivative: SpectralField,
    /// `‖finite_difference - averaged_derivative‖`.
    pub discrepancy: f64,
}

pub fn dfbar_exchange_check(
    coupling: &CouplingSpec,
    colloc: &Collocation,
    u: &SpectralField,
    w: &SpectralField,
    inv: &InvariantSample,
    delta: f64,
) -> Result<ExchangeReport> {
    if !(delta > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let drift = AveragedDrift::ergodic(coupling, inv, colloc)?;
    let base = drift.eval(u)?;
    let mut shifted = u.clone();
    shifted.axpy(delta, w);
    let fd = drift.eval(&shifted)?.sub(&base).scaled(1.0 / delta);
    let avg = drift.derivative(u, w)?;
    let discrepancy = fd.sub(&avg).norm();
    Ok(ExchangeReport {
        delta,
        finite_difference: fd,
        averaged_derivative: avg,
        discrepancy,
    })
}

/// Gauss–Hermite rule for weight `e^{-x²}` (nodes ascending).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on the orthonormal recurrence, seeded with the
    // classical asymptotic guesses; symmetric so only half the roots are found.
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// `E f(Z)`, `Z ~ Normal(0, var)`, by an `n`-node Gauss–Hermite rule.
pub fn gaussian_expectation_quadrature(f: impl Fn(f64) -> f64, var: f64, n: usize) -> f64 {
    let (x, w) = gauss_hermite(n);
    let s = (2.0 * var).sqrt();
    x.iter().zip(&w).map(|(xi, wi)| wi * f(s * xi)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::QWienerSpec;
    use crate::rng::{Purpose, RngStream};
    use rand::Rng;

    fn setup(n: usize) -> (SpectralBasis, Collocation) {
        let b = SpectralBasis::new(1.0, n).unwrap();
        let c = b.default_collocation();
        (b, c)
    }

    fn random_field(n: usize, scale: f64, rng: &mut impl Rng) -> SpectralField {
        SpectralField((1..=n).map(|k| scale * rng.random_range(-1.0..1.0) / k as f64).collect())
    }

    #[test]
    fn parse_catalog() {
        assert_eq!("zero".parse::<ScalarFn>().unwrap(), ScalarFn::Zero);
        assert_eq!("affine:2,0.5".parse::<ScalarFn>().unwrap(), ScalarFn::Affine { a: 2.0, b: 0.5 });
        assert_eq!("scaled_tanh:0.5".parse::<ScalarFn>().unwrap(), ScalarFn::ScaledTanh { a: 0.5 });
        assert_eq!("sin_shift:0.7".parse::<ScalarFn>().unwrap(), ScalarFn::SinShift { c: 0.7 });
        assert!("cubic:1".parse::<ScalarFn>().is_err());
        assert!("scaled_tanh".parse::<ScalarFn>().is_err());
        for s in ["zero", "affine:2,0.5", "scaled_tanh:0.5", "sin_shift:0.7"] {
            let f: ScalarFn = s.parse().unwrap();
            assert_eq!(f.to_string().parse::<ScalarFn>().unwrap(), f);
        }
        assert!(ReactionSpec::new(ScalarFn::SinShift { c: 0.0 }).is_err());
    }

    #[test]
    fn g_examples() {
        let (_, c) = setup(6);
        let y = SpectralField::unit(6, 2).scaled(0.8);
        let z = ReactionSpec::zero().eval(&c, &y).unwrap();
        assert!(z.coeffs().iter().all(|&x| x == 0.0));
        let g = ReactionSpec::new(ScalarFn::Affine { a: -1.5, b: 0.0 }).unwrap();
        let out = g.eval(&c, &y).unwrap();
        for (o, yk) in out.coeffs().iter().zip(y.coeffs()) {
            assert!((o + 1.5 * yk).abs() < 1e-13);
        }
    }

    #[test]
    fn g_lipschitz_on_random_pairs() {
        let (_, c) = setup(8);
        let g = ReactionSpec::new(ScalarFn::ScaledTanh { a: 3.0 }).unwrap();
        let mut rng = RngStream::new(3, Purpose::Diagnostic).at(0);
        for _ in 0..500 {
            let y = random_field(8, 3.0, &mut rng);
            let y2 = random_field(8, 3.0, &mut rng);
            let lhs = g.eval(&c, &y).unwrap().sub(&g.eval(&c, &y2).unwrap()).norm();
            assert!(lhs <= 3.0 * y.sub(&y2).norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mixing_rate_boundary() {
        let b = SpectralBasis::new(1.0, 4).unwrap();
        let a1 = b.alpha_1();
        let ok = ReactionSpec::new(ScalarFn::ScaledTanh { a: 0.5 * a1 }).unwrap();
        assert!((ok.mixing_rate(&b).unwrap() - 0.5 * a1).abs() < 1e-12);
        let edge = ReactionSpec::new(ScalarFn::ScaledTanh { a: a1 }).unwrap();
        assert!(matches!(edge.mixing_rate(&b), Err(Error::Config(_))));
    }

    #[test]
    fn f_examples() {
        let (_, c) = setup(6);
        let u = SpectralField::unit(6, 0);
        let y = SpectralField::unit(6, 1);
        let zero = CouplingSpec::separable(ScalarFn::Zero, ScalarFn::Zero);
        assert!(zero.eval(&c, &u, &y).unwrap().coeffs().iter().all(|&x| x == 0.0));
        let lin = CouplingSpec::separable(ScalarFn::Affine { a: 2.0, b: 0.0 }, ScalarFn::Affine { a: -0.5, b: 0.0 });
        let out = lin.eval(&c, &u, &y).unwrap();
        let mut want = vec![0.0; 6];
        want[0] = 2.0;
        want[1] = -0.5;
        for (o, w) in out.coeffs().iter().zip(&want) {
            assert!((o - w).abs() < 1e-13);
        }
        assert!(matches!(
            lin.eval(&c, &SpectralField::zeros(5), &y),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn f_lipschitz_sampled() {
        let (_, c) = setup(8);
        let mut rng = RngStream::new(4, Purpose::Diagnostic).at(0);
        for spec in [
            CouplingSpec::separable(ScalarFn::ScaledTanh { a: 0.5 }, ScalarFn::SinShift { c: 0.7 }),
            CouplingSpec::EntangledSin,
        ] {
            let l = spec.lipschitz();
            for _ in 0..1000 {
                let (u, u2) = (random_field(8, 2.0, &mut rng), random_field(8, 2.0, &mut rng));
                let (y, y2) = (random_field(8, 2.0, &mut rng), random_field(8, 2.0, &mut rng));
                let lhs = spec.eval(&c, &u, &y).unwrap().sub(&spec.eval(&c, &u2, &y2).unwrap()).norm();
                let rhs = l * (u.sub(&u2).norm() + y.sub(&y2).norm());
                assert!(lhs <= rhs * (1.0 + 1e-12), "{spec:?}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn du_examples() {
        let (_, c) = setup(8);
        let mut rng = RngStream::new(5, Purpose::Diagnostic).at(0);
        let u = random_field(8, 1.0, &mut rng);
        let y = random_field(8, 1.0, &mut rng);
        let w = random_field(8, 1.0, &mut rng);
        let aff = CouplingSpec::separable(ScalarFn::Affine { a: 1.7, b: 0.3 }, ScalarFn::SinShift { c: 0.1 });
        let d = aff.du(&c, &u, &y, &w).unwrap();
        for (a, b) in d.coeffs().iter().zip(w.coeffs()) {
            assert!((a - 1.7 * b).abs() < 1e-13);
        }
        // Taylor remainder is O(δ): halving δ halves the error.
        for spec in [
            CouplingSpec::separable(ScalarFn::ScaledTanh { a: 0.5 }, ScalarFn::SinShift { c: 0.7 }),
            CouplingSpec::EntangledSin,
        ] {
            let d = spec.du(&c, &u, &y, &w).unwrap();
            let err = |delta: f64| {
                let mut up = u.clone();
                up.axpy(delta, &w);
                spec.eval(&c, &up, &y)
                    .unwrap()
                    .sub(&spec.eval(&c, &u, &y).unwrap())
                    .scaled(1.0 / delta)
                    .sub(&d)
                    .norm()
            };
            let (e1, e2) = (err(1e-3), err(5e-4));
            let slope = (e1 / e2).log2();
            assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
            assert!(d.norm() <= spec.derivative_bound() * w.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gauss_hermite_rule() {
        let (x, w) = gauss_hermite(30);
        assert!((w.iter().sum::<f64>() - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        for (c, var) in [(0.7, 0.3), (0.0, 1.0), (1.3, 0.01)] {
            let f = ScalarFn::SinShift { c };
            let q = gaussian_expectation_quadrature(|z| f.value(z), var, 30);
            assert!((q - f.gaussian_expectation(var)).abs() < 1e-12);
        }
        let t = ScalarFn::ScaledTanh { a: 2.0 };
        assert!(gaussian_expectation_quadrature(|z| t.value(z), 0.8, 30).abs() < 1e-14);
        // E Z² = var
        assert!((gaussian_expectation_quadrature(|z| z * z, 0.37, 30) - 0.37).abs() < 1e-13);
    }

    #[test]
    fn oracle_examples() {
        let (b, c) = setup(8);
        let var = ou_stationary_variances(&b, QWienerSpec::default_for(8).lambdas(), 0.5);
        let u = SpectralField::unit(8, 0).scaled(0.4);
        let zero_g = ReactionSpec::zero();

        let odd = CouplingSpec::separable(ScalarFn::ScaledTanh { a: 0.5 }, ScalarFn::SinShift { c: 0.0 });
        let fb = fbar_oracle(&odd, &zero_g, &c, &u, &var).unwrap();
        let f1_only = ReactionSpec { kind: ScalarFn::ScaledTanh { a: 0.5 } }.eval(&c, &u).unwrap();
        assert!(fb.sub(&f1_only).norm() < 1e-14);

        let aff = CouplingSpec::separable(ScalarFn::Zero, ScalarFn::Affine { a: 3.0, b: 0.25 });
        let fb = fbar_oracle(&aff, &zero_g, &c, &u, &var).unwrap();
        let want = c.from_grid(&vec![0.25; c.grid_size()]).unwrap();
        assert!(fb.sub(&want).norm() < 1e-14);

        let shift = CouplingSpec::separable(ScalarFn::Zero, ScalarFn::SinShift { c: 0.7 });
        let drift = AveragedDrift::oracle(&shift, &zero_g, &var, &c).unwrap();
        let s2 = pointwise_variance(&c, &var).unwrap();
        let mut nodes = vec![0.0; c.grid_size()];
        drift.eval_nodes(&c.to_grid(&u).unwrap(), &mut nodes);
        for (v, s) in nodes.iter().zip(&s2) {
            assert!((v - 0.7f64.sin() * (-0.5 * s).exp()).abs() < 1e-15);
        }

        let tanh_g = ReactionSpec::new(ScalarFn::ScaledTanh { a: 1.0 }).unwrap();
        assert!(matches!(
            fbar_oracle(&shift, &tanh_g, &c, &u, &var),
            Err(Error::UnsupportedOracle(_))
        ));
        assert!(matches!(
            fbar_oracle(&CouplingSpec::EntangledSin, &zero_g, &c, &u, &var),
            Err(Error::UnsupportedOracle(_))
        ));
    }

    fn iid_gaussian_sample(var: &[f64], n: usize, seed: u64) -> InvariantSample {
        let s = RngStream::new(seed, Purpose::Diagnostic);
        let samples = (0..n as u64)
            .map(|i| {
                let mut r = s.at(i);
                SpectralField(
                    var.iter()
                        .map(|v| v.sqrt() * r.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect(),
                )
            })
            .collect();
        InvariantSample {
            samples,
            burn_in: 0.0,
            thinning: 0.0,
        }
    }

    #[test]
    fn estimate_single_sample_is_exact() {
        let (_, c) = setup(6);
        let spec = CouplingSpec::separable(ScalarFn::ScaledTanh { a: 0.5 }, ScalarFn::SinShift { c: 0.7 });
        let inv = iid_gaussian_sample(&[0.1; 6], 1, 1);
        let u = SpectralField::unit(6, 1);
        let est = estimate_fbar(&spec, &c, &u, &inv).unwrap();
        let direct = spec.eval(&c, &u, &inv.samples[0]).unwrap();
        assert!(est.mean.sub(&direct).norm() < 1e-15);
        let empty = InvariantSample {
            samples: vec![],
            burn_in: 0.0,
            thinning: 0.0,
        };
        assert!(matches!(estimate_fbar(&spec, &c, &u, &empty), Err(Error::Usage(_))));
    }

    #[test]
    fn estimate_agrees_with_oracle_and_is_lipschitz() {
        let (b, c) = setup(8);
        let var = ou_stationary_variances(&b, QWienerSpec::default_for(8).lambdas(), 0.5);
        let spec = CouplingSpec::separable(ScalarFn::ScaledTanh { a: 0.5 }, ScalarFn::SinShift { c: 0.7 });
        let inv = iid_gaussian_sample(&var, 4000, 2);
        let u = SpectralField::unit(8, 0).scaled(0.3);
        let est = estimate_fbar(&spec, &c, &u, &inv).unwrap();
        let oracle = fbar_oracle(&spec, &ReactionSpec::zero(), &c, &u, &var).unwrap();
        for k in 0..8 {
            let d = (est.mean.coeffs()[k] - oracle.coeffs()[k]).abs();
            assert!(d <= 3.0 * est.stderr[k] + 1e-12, "mode {k}: {d} vs {}", est.stderr[k]);
        }
        let mut rng = RngStream::new(6, Purpose::Diagnostic).at(0);
        let drift = AveragedDrift::ergodic(&spec, &inv, &c).unwrap();
        for _ in 0..50 {
            let (u1, u2) = (random_field(8, 2.0, &mut rng), random_field(8, 2.0, &mut rng));
            let lhs = drift.eval(&u1).unwrap().sub(&drift.eval(&u2).unwrap()).norm();
            assert!(lhs <= spec.lipschitz() * u1.sub(&u2).norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn exchange_check_behaviour() {
        let (b, c) = setup(8);
        let var = ou_stationary_variances(&b, QWienerSpec::default_for(8).lambdas(), 0.5);
        let inv = iid_gaussian_sample(&var, 200, 3);
        let u = SpectralField::unit(8, 0).scaled(0.5);
        let w = SpectralField::new(vec![0.3, -0.2, 0.1, 0.0, 0.05, 0.0, 0.0, 0.01]).unwrap();

        let lin = CouplingSpec::separable(ScalarFn::Affine { a: 0.8, b: 0.1 }, ScalarFn::Affine { a: -0.3, b: 0.0 });
        let r = dfbar_exchange_check(&lin, &c, &u, &w, &inv, 1e-3).unwrap();
        assert!(r.discrepancy < 1e-10);

        for spec in [
            CouplingSpec::separable(ScalarFn::ScaledTanh { a: 0.5 }, ScalarFn::SinShift { c: 0.7 }),
            CouplingSpec::EntangledSin,
        ] {
            let r1 = dfbar_exchange_check(&spec, &c, &u, &w, &inv, 1e-2).unwrap();
            let r2 = dfbar_exchange_check(&spec, &c, &u, &w, &inv, 5e-3).unwrap();
            let order = (r1.discrepancy / r2.discrepancy).log2();
            assert!(order >= 0.9, "{spec:?}: observed order {order}");
            assert!(r1.discrepancy < 1e-2);
        }
    }

    #[test]
    fn batch_means_on_iid_data() {
        let s = RngStream::new(8, Purpose::Diagnostic);
        let mut r = s.at(0);
        let xs: Vec<f64> = (0..10_000).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let se = batch_means_stderr(&xs);
        assert!((se / 0.01 - 1.0).abs() < 0.25, "{se}");
        assert!(batch_means_stderr(&[1.0]).is_nan());
    }
}
