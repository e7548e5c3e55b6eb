//! Energy functional of an action distribution and its first variation.
//!
//! `E[nu] = int F(nu) + int v dnu + 1/2 iint phi(y, z) dnu(y) dnu(z)` with
//! first variation `V[nu](y) = f(nu(y)) + v(y) + int phi(y, z) dnu(z)`.
//! Structural checks (monotonicity, symmetry, convexity) are probe based:
//! a failed probe proves the property false, a passed probe proves nothing.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteDensity, Grid, Interval};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Normalization of the entropy primitive. Both share `f(s) = log s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyConvention {
    /// `F(s) = s log s - s`, so that `F' = f`.
    #[default]
    SLogSMinusS,
    /// `F(s) = s log s`.
    SLogS,
}

impl EntropyConvention {
    pub fn label(&self) -> &'static str {
        match self {
            EntropyConvention::SLogSMinusS => "s_log_s_minus_s",
            EntropyConvention::SLogS => "s_log_s",
        }
    }
}

fn log_probes() -> impl Iterator<Item = f64> {
    (-24..=24).map(|k| 10f64.powf(k as f64 / 8.0))
}

/// Local congestion cost `f` and its primitive `F`.
#[derive(Clone)]
pub enum CongestionSpec {
    Entropy {
        convention: EntropyConvention,
    },
    /// `f(s) = a s^alpha`, `F(s) = a s^(alpha + 1) / (alpha + 1)`.
    Power {
        alpha: f64,
        a: f64,
    },
    Custom(CustomCongestion),
}

/// User-supplied congestion. The Inada and growth flags are declarations.
#[derive(Clone)]
pub struct CustomCongestion {
    pub name: String,
    pub f: ScalarFn,
    pub primitive: ScalarFn,
    pub f_inv: Option<ScalarFn>,
    pub f_prime: ScalarFn,
    pub inada: bool,
    pub growth: bool,
}

impl fmt::Debug for CongestionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CongestionSpec::Entropy { convention } => write!(f, "Entropy({})", convention.label()),
            CongestionSpec::Power { alpha, a } => write!(f, "Power(alpha={alpha}, a={a})"),
            CongestionSpec::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl CongestionSpec {
    pub fn entropy() -> Self {
        CongestionSpec::Entropy {
            convention: EntropyConvention::default(),
        }
    }

    pub fn entropy_with(convention: EntropyConvention) -> Self {
        CongestionSpec::Entropy { convention }
    }

    pub fn power(alpha: f64, a: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("power congestion needs alpha > 0, got {alpha}")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::invalid(format!("power congestion needs a > 0, got {a}")));
        }
        Ok(CongestionSpec::Power { alpha, a })
    }

    /// Validates that `f` is strictly increasing and `F' = f` on probes.
    pub fn custom(spec: CustomCongestion) -> Result<Self> {
        let out = CongestionSpec::Custom(spec);
        out.check()?;
        Ok(out)
    }

    pub fn label(&self) -> String {
        match self {
            CongestionSpec::Entropy { .. } => "entropy".into(),
            CongestionSpec::Power { alpha, a } => format!("power(alpha={alpha}, a={a})"),
            CongestionSpec::Custom(c) => c.name.clone(),
        }
    }

    /// Convention label recorded in result metadata.
    pub fn convention_label(&self) -> &'static str {
        match self {
            CongestionSpec::Entropy { convention } => convention.label(),
            CongestionSpec::Power { .. } => "power_canonical",
            CongestionSpec::Custom(_) => "custom",
        }
    }

    /// `f(s)`; `-inf` at `s = 0` under an Inada congestion.
    pub fn f(&self, s: f64) -> f64 {
        match self {
            CongestionSpec::Entropy { .. } => {
                if s > 0.0 {
                    s.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            CongestionSpec::Power { alpha, a } => a * s.max(0.0).powf(*alpha),
            CongestionSpec::Custom(c) => (c.f)(s),
        }
    }

    /// `F(s)` with `0 log 0 = 0`.
    pub fn primitive(&self, s: f64) -> f64 {
        match self {
            CongestionSpec::Entropy { convention } => {
                let slogs = if s > 0.0 { s * s.ln() } else { 0.0 };
                match convention {
                    EntropyConvention::SLogSMinusS => slogs - s,
                    EntropyConvention::SLogS => slogs,
                }
            }
            CongestionSpec::Power { alpha, a } => a * s.max(0.0).powf(alpha + 1.0) / (alpha + 1.0),
            CongestionSpec::Custom(c) => (c.primitive)(s),
        }
    }

    /// `F'(s)`, which differs from `f` by one under the `s log s` convention.
    pub fn primitive_derivative(&self, s: f64) -> f64 {
        match self {
            CongestionSpec::Entropy {
                convention: EntropyConvention::SLogS,
            } => self.f(s) + 1.0,
            _ => self.f(s),
        }
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        match self {
            CongestionSpec::Entropy { .. } => 1.0 / s,
            CongestionSpec::Power { alpha, a } => a * alpha * s.max(0.0).powf(alpha - 1.0),
            CongestionSpec::Custom(c) => (c.f_prime)(s),
        }
    }

    /// Generalized inverse of `f`; for power congestion the positive part
    /// `(t / a)_+^(1/alpha)`.
    pub fn f_inv(&self, t: f64) -> Option<f64> {
        match self {
            CongestionSpec::Entropy { .. } => Some(t.exp()),
            CongestionSpec::Power { alpha, a } => Some((t / a).max(0.0).powf(1.0 / alpha)),
            CongestionSpec::Custom(c) => c.f_inv.as_ref().map(|g| g(t)),
        }
    }

    pub fn has_inverse(&self) -> bool {
        match self {
            CongestionSpec::Custom(c) => c.f_inv.is_some(),
            _ => true,
        }
    }

    pub fn satisfies_inada(&self) -> bool {
        match self {
            CongestionSpec::Entropy { .. } => true,
            CongestionSpec::Power { .. } => false,
            CongestionSpec::Custom(c) => c.inada,
        }
    }

    pub fn satisfies_growth(&self) -> bool {
        match self {
            CongestionSpec::Entropy { .. } => false,
            CongestionSpec::Power { .. } => true,
            CongestionSpec::Custom(c) => c.growth,
        }
    }

    pub fn satisfies_mccann(&self) -> bool {
        mccann_check(self, 1)
    }

    /// Probes that `f` is strictly increasing and that `F' = f`. The `F' = f`
    /// probe is skipped for the `s log s` entropy, where `F' = f + 1`.
    pub fn check(&self) -> Result<()> {
        let probes: Vec<f64> = log_probes().collect();
        for w in probes.windows(2) {
            let (a, b) = (self.f(w[0]), self.f(w[1]));
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::NonFinite(format!("{} at s = {}", self.label(), w[0])));
            }
            if !(b > a) {
                return Err(Error::Structure(format!(
                    "congestion {} is not strictly increasing on [{}, {}]",
                    self.label(),
                    w[0],
                    w[1]
                )));
            }
        }
        let skip = matches!(
            self,
            CongestionSpec::Entropy {
                convention: EntropyConvention::SLogS
            }
        );
        if !skip {
            for &s in probes.iter().filter(|s| (1e-2..=1e2).contains(*s)) {
                let h = 1e-5 * s;
                let fd = (self.primitive(s + h) - self.primitive(s - h)) / (2.0 * h);
                let f = self.f(s);
                if (fd - f).abs() > 1e-6 * (1.0 + f.abs()) {
                    return Err(Error::Structure(format!(
                        "congestion {}: F' = {fd} but f = {f} at s = {s}",
                        self.label()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Quantile-space density of `int F(nu)`: `s F(1/s)` with `s = G'`.
    pub(crate) fn quantile_energy(&self, s: f64) -> f64 {
        if !(s > 0.0) {
            return f64::INFINITY;
        }
        match self {
            CongestionSpec::Entropy { convention } => match convention {
                EntropyConvention::SLogSMinusS => -s.ln() - 1.0,
                EntropyConvention::SLogS => -s.ln(),
            },
            CongestionSpec::Power { alpha, a } => a * s.powf(-alpha) / (alpha + 1.0),
            CongestionSpec::Custom(c) => s * (c.primitive)(1.0 / s),
        }
    }

    pub(crate) fn quantile_energy_derivative(&self, s: f64) -> f64 {
        match self {
            CongestionSpec::Entropy { .. } => -1.0 / s,
            CongestionSpec::Power { alpha, a } => -alpha * a * s.powf(-alpha - 1.0) / (alpha + 1.0),
            CongestionSpec::Custom(c) => (c.primitive)(1.0 / s) - (c.f)(1.0 / s) / s,
        }
    }

    /// Quantile-space density of `int f(nu) nu`: `f(1/s)`.
    pub(crate) fn quantile_social(&self, s: f64) -> f64 {
        if !(s > 0.0) {
            return f64::INFINITY;
        }
        match self {
            CongestionSpec::Entropy { .. } => -s.ln(),
            CongestionSpec::Power { alpha, a } => a * s.powf(-alpha),
            CongestionSpec::Custom(c) => (c.f)(1.0 / s),
        }
    }

    pub(crate) fn quantile_social_derivative(&self, s: f64) -> f64 {
        match self {
            CongestionSpec::Entropy { .. } => -1.0 / s,
            CongestionSpec::Power { alpha, a } => -alpha * a * s.powf(-alpha - 1.0),
            CongestionSpec::Custom(c) => -(c.f_prime)(1.0 / s) / (s * s),
        }
    }
}

/// True when `g(s) = s^d F(s^-d)` is convex and non-increasing on a log
/// grid of probes spanning `[1e-3, 1e3]`, and `F` is admissible in the sense
/// that `F(s) / s` grows without bound: `g` must keep rising at least
/// logarithmically as `s -> 0`.
pub fn mccann_check(congestion: &CongestionSpec, d: u32) -> bool {
    let s: Vec<f64> = log_probes().collect();
    let g: Vec<f64> = s
        .iter()
        .map(|&x| x.powi(d as i32) * congestion.primitive(x.powi(-(d as i32))))
        .collect();
    if g.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let slopes: Vec<f64> = (0..s.len() - 1)
        .map(|k| (g[k + 1] - g[k]) / (s[k + 1] - s[k]))
        .collect();
    for k in 0..s.len() - 1 {
        if g[k + 1] - g[k] > 1e-9 * (1.0 + g[k].abs()) {
            return false;
        }
    }
    for k in 0..slopes.len() - 1 {
        if slopes[k + 1] - slopes[k] < -1e-9 * (1.0 + slopes[k].abs()) {
            return false;
        }
    }
    // probes are 8 per decade; compare the rise over the first two decades
    let rise = |k: usize| g[k] - g[k + 8];
    rise(0) >= rise(8) * (1.0 - 1e-9) && rise(0) > 0.0
}

/// Symmetric pair interaction `phi(y, z)`.
#[derive(Clone)]
pub enum InteractionKernel {
    /// `kappa |y - z|^2`
    QuadraticDistance { kappa: f64 },
    /// `kappa |y - z|^3`
    CubicDistance { kappa: f64 },
    /// `kappa y z`
    Product { kappa: f64 },
    Custom {
        name: String,
        phi: PairFn,
        /// derivative in the first argument
        d1: PairFn,
        declared_convex: bool,
    },
}

impl fmt::Debug for InteractionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InteractionKernel::QuadraticDistance { kappa } => write!(f, "QuadraticDistance({kappa})"),
            InteractionKernel::CubicDistance { kappa } => write!(f, "CubicDistance({kappa})"),
            InteractionKernel::Product { kappa } => write!(f, "Product({kappa})"),
            InteractionKernel::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

fn probe_pairs(interval: Interval) -> Vec<(f64, f64)> {
    let k = 12;
    let pts: Vec<f64> = (0..=k)
        .map(|i| interval.lo() + interval.length() * i as f64 / k as f64)
        .collect();
    pts.iter().flat_map(|&y| pts.iter().map(move |&z| (y, z))).collect()
}

impl InteractionKernel {
    /// Rejects kernels that are not symmetric on the probe grid, or that fail
    /// the midpoint-convexity probe when declared convex.
    pub fn custom(
        name: impl Into<String>,
        phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        declared_convex: bool,
        interval: Interval,
    ) -> Result<Self> {
        let kernel = InteractionKernel::Custom {
            name: name.into(),
            phi: Arc::new(phi),
            d1: Arc::new(d1),
            declared_convex,
        };
        kernel.check_symmetric(interval)?;
        if declared_convex && !kernel.convexity_probe(interval) {
            return Err(Error::Structure(format!(
                "kernel {} declared convex but fails the midpoint probe",
                kernel.label()
            )));
        }
        Ok(kernel)
    }

    pub fn label(&self) -> String {
        match self {
            InteractionKernel::QuadraticDistance { kappa } => format!("quadratic_distance({kappa})"),
            InteractionKernel::CubicDistance { kappa } => format!("cubic_distance({kappa})"),
            InteractionKernel::Product { kappa } => format!("product({kappa})"),
            InteractionKernel::Custom { name, .. } => name.clone(),
        }
    }

    pub fn phi(&self, y: f64, z: f64) -> f64 {
        match self {
            InteractionKernel::QuadraticDistance { kappa } => kappa * (y - z) * (y - z),
            InteractionKernel::CubicDistance { kappa } => kappa * (y - z).abs().powi(3),
            InteractionKernel::Product { kappa } => kappa * y * z,
            InteractionKernel::Custom { phi, .. } => phi(y, z),
        }
    }

    pub fn d1(&self, y: f64, z: f64) -> f64 {
        match self {
            InteractionKernel::QuadraticDistance { kappa } => 2.0 * kappa * (y - z),
            InteractionKernel::CubicDistance { kappa } => 3.0 * kappa * (y - z) * (y - z).abs(),
            InteractionKernel::Product { kappa } => kappa * z,
            InteractionKernel::Custom { d1, .. } => d1(y, z),
        }
    }

    pub fn declared_symmetric(&self) -> bool {
        true
    }

    /// Joint convexity of `(y, z) -> phi(y, z)`.
    pub fn declared_convex(&self) -> bool {
        match self {
            InteractionKernel::QuadraticDistance { kappa } | InteractionKernel::CubicDistance { kappa } => {
                *kappa >= 0.0
            }
            InteractionKernel::Product { kappa } => *kappa == 0.0,
            InteractionKernel::Custom { declared_convex, .. } => *declared_convex,
        }
    }

    pub fn check_symmetric(&self, interval: Interval) -> Result<()> {
        for (y, z) in probe_pairs(interval) {
            let (a, b) = (self.phi(y, z), self.phi(z, y));
            if (a - b).abs() > 1e-12 {
                return Err(Error::Structure(format!(
                    "kernel {} is not symmetric: phi({y}, {z}) = {a}, phi({z}, {y}) = {b}",
                    self.label()
                )));
            }
        }
        Ok(())
    }

    /// Midpoint convexity of `phi` on segments between probe pairs.
    pub fn convexity_probe(&self, interval: Interval) -> bool {
        let pairs = probe_pairs(interval);
        for (k, &(y0, z0)) in pairs.iter().enumerate() {
            // a deterministic spread of partners
            let (y1, z1) = pairs[(7 * k + 31) % pairs.len()];
            let mid = self.phi(0.5 * (y0 + y1), 0.5 * (z0 + z1));
            let chord = 0.5 * (self.phi(y0, z0) + self.phi(y1, z1));
            if mid > chord + 1e-12 * (1.0 + chord.abs()) {
                return false;
            }
        }
        true
    }

    /// `out[i] = sum_k w_k phi(x_i, x_k)` and, if requested, the matching
    /// sums of `d1`. Linear time for the named families on sorted points.
    pub fn field(&self, x: &[f64], w: &[f64], with_gradient: bool) -> (Vec<f64>, Vec<f64>) {
        let sorted = x.windows(2).all(|p| p[0] <= p[1]);
        match self {
            InteractionKernel::QuadraticDistance { kappa } => quadratic_field(*kappa, x, w, with_gradient),
            InteractionKernel::Product { kappa } => {
                let s1: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                let val = x.iter().map(|&q| kappa * q * s1).collect();
                let grad = if with_gradient {
                    vec![kappa * s1; x.len()]
                } else {
                    Vec::new()
                };
                (val, grad)
            }
            InteractionKernel::CubicDistance { kappa } if sorted => cubic_field(*kappa, x, w, with_gradient),
            _ => {
                let val = x
                    .iter()
                    .map(|&q| x.iter().zip(w).map(|(&z, &wk)| wk * self.phi(q, z)).sum())
                    .collect();
                let grad = if with_gradient {
                    x.iter()
                        .map(|&q| x.iter().zip(w).map(|(&z, &wk)| wk * self.d1(q, z)).sum())
                        .collect()
                } else {
                    Vec::new()
                };
                (val, grad)
            }
        }
    }

    /// `sum_i sum_k w_i w_k phi(x_i, x_k)`
    pub fn pair_energy(&self, x: &[f64], w: &[f64]) -> f64 {
        let (field, _) = self.field(x, w, false);
        field.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

fn weighted_center(x: &[f64], w: &[f64]) -> f64 {
    let s0: f64 = w.iter().sum();
    if s0 > 0.0 {
        x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / s0
    } else {
        0.0
    }
}

fn quadratic_field(kappa: f64, x: &[f64], w: &[f64], with_gradient: bool) -> (Vec<f64>, Vec<f64>) {
    let c = weighted_center(x, w);
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (&xk, &wk) in x.iter().zip(w) {
        let q = xk - c;
        s0 += wk;
        s1 += wk * q;
        s2 += wk * q * q;
    }
    let val = x
        .iter()
        .map(|&xi| {
            let q = xi - c;
            kappa * (s0 * q * q - 2.0 * q * s1 + s2)
        })
        .collect();
    let grad = if with_gradient {
        x.iter().map(|&xi| 2.0 * kappa * (s0 * (xi - c) - s1)).collect()
    } else {
        Vec::new()
    };
    (val, grad)
}

/// Sorted points: split each sum at `i` and expand the cubes with prefix
/// moments.
fn cubic_field(kappa: f64, x: &[f64], w: &[f64], with_gradient: bool) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let c = weighted_center(x, w);
    let q: Vec<f64> = x.iter().map(|a| a - c).collect();
    // prefix[k][i] = sum_{l < i} w_l q_l^k
    let mut prefix = [vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]];
    for i in 0..n {
        let mut p = w[i];
        for row in prefix.iter_mut() {
            row[i + 1] = row[i] + p;
            p *= q[i];
        }
    }
    let total: [f64; 4] = [prefix[0][n], prefix[1][n], prefix[2][n], prefix[3][n]];
    let mut val = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(if with_gradient { n } else { 0 });
    for i in 0..n {
        let t = q[i];
        // left: l <= i, right: l > i (the l = i term vanishes either way)
        let l: [f64; 4] = [prefix[0][i + 1], prefix[1][i + 1], prefix[2][i + 1], prefix[3][i + 1]];
        let r: [f64; 4] = [total[0] - l[0], total[1] - l[1], total[2] - l[2], total[3] - l[3]];
        let t2 = t * t;
        let left3 = t2 * t * l[0] - 3.0 * t2 * l[1] + 3.0 * t * l[2] - l[3];
        let right3 = r[3] - 3.0 * t * r[2] + 3.0 * t2 * r[1] - t2 * t * r[0];
        val.push(kappa * (left3 + right3));
        if with_gradient {
            let left2 = t2 * l[0] - 2.0 * t * l[1] + l[2];
            let right2 = r[2] - 2.0 * t * r[1] + t2 * r[0];
            grad.push(3.0 * kappa * (left2 - right2));
        }
    }
    (val, grad)
}

/// External potential `v(y)`.
#[derive(Clone)]
pub enum PotentialSpec {
    /// `v(y) = sum_k coeffs[k] (y - center)^k`
    Poly {
        coeffs: Vec<f64>,
        center: f64,
        declared_convex: bool,
    },
    Custom {
        name: String,
        v: ScalarFn,
        v_prime: ScalarFn,
        declared_convex: bool,
    },
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialSpec::Poly { coeffs, center, .. } => write!(f, "Poly({coeffs:?} at {center})"),
            PotentialSpec::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl PotentialSpec {
    pub fn poly(coeffs: Vec<f64>, center: f64, declared_convex: bool) -> Result<Self> {
        if coeffs.iter().chain([&center]).any(|c| !c.is_finite()) {
            return Err(Error::invalid("polynomial potential needs finite coefficients"));
        }
        Ok(PotentialSpec::Poly {
            coeffs,
            center,
            declared_convex,
        })
    }

    pub fn custom(
        name: impl Into<String>,
        v: impl Fn(f64) -> f64 + Send + Sync + 'static,
        v_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        declared_convex: bool,
    ) -> Self {
        PotentialSpec::Custom {
            name: name.into(),
            v: Arc::new(v),
            v_prime: Arc::new(v_prime),
            declared_convex,
        }
    }

    pub fn label(&self) -> String {
        match self {
            PotentialSpec::Poly { coeffs, center, .. } => format!("poly({coeffs:?}, center={center})"),
            PotentialSpec::Custom { name, .. } => name.clone(),
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            PotentialSpec::Poly { coeffs, center, .. } => {
                let t = y - center;
                coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            PotentialSpec::Custom { v, .. } => v(y),
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match self {
            PotentialSpec::Poly { coeffs, center, .. } => {
                let t = y - center;
                coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c)
            }
            PotentialSpec::Custom { v_prime, .. } => v_prime(y),
        }
    }

    pub fn declared_convex(&self) -> bool {
        match self {
            PotentialSpec::Poly { declared_convex, .. } | PotentialSpec::Custom { declared_convex, .. } => {
                *declared_convex
            }
        }
    }

    /// Midpoint convexity on a probe grid of the interval.
    pub fn convexity_probe(&self, interval: Interval) -> bool {
        let k = 64;
        let pts: Vec<f64> = (0..=k)
            .map(|i| interval.lo() + interval.length() * i as f64 / k as f64)
            .collect();
        for (i, &a) in pts.iter().enumerate() {
            for &b in pts[i + 1..].iter().step_by(3) {
                let mid = self.value(0.5 * (a + b));
                let chord = 0.5 * (self.value(a) + self.value(b));
                if mid > chord + 1e-12 * (1.0 + chord.abs()) {
                    return false;
                }
            }
        }
        true
    }
}

/// Congestion, interaction and potential on a grid.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    pub congestion: CongestionSpec,
    pub kernel: Option<InteractionKernel>,
    pub potential: Option<PotentialSpec>,
    pub grid: Grid,
}

impl EnergyModel {
    pub fn new(
        congestion: CongestionSpec,
        kernel: Option<InteractionKernel>,
        potential: Option<PotentialSpec>,
        grid: Grid,
    ) -> Result<Self> {
        congestion.check()?;
        if let Some(k) = &kernel {
            k.check_symmetric(grid.interval())?;
        }
        if let Some(p) = &potential {
            for y in grid.nodes() {
                if !p.value(y).is_finite() {
                    return Err(Error::NonFinite(format!("potential {} at {y}", p.label())));
                }
            }
        }
        Ok(Self {
            congestion,
            kernel,
            potential,
            grid,
        })
    }

    /// Congestion only.
    pub fn local(congestion: CongestionSpec, grid: Grid) -> Result<Self> {
        Self::new(congestion, None, None, grid)
    }

    fn check_grid(&self, nu: &DiscreteDensity) -> Result<()> {
        if *nu.grid() != self.grid {
            return Err(Error::invalid("density is not on the model grid"));
        }
        Ok(())
    }

    /// `Delta sum_j phi(y_i, y_j) nu_j`
    pub fn interaction_field(&self, nu: &DiscreteDensity) -> Vec<f64> {
        match &self.kernel {
            None => vec![0.0; self.grid.n()],
            Some(k) => {
                let w = nu.cell_masses();
                k.field(&self.grid.nodes(), &w, false).0
            }
        }
    }

    pub fn potential_values(&self) -> Vec<f64> {
        match &self.potential {
            None => vec![0.0; self.grid.n()],
            Some(p) => self.grid.nodes().iter().map(|&y| p.value(y)).collect(),
        }
    }

    /// Whether the model meets the hypotheses for strict displacement
    /// convexity: McCann congestion, convex kernel and convex potential.
    pub fn displacement_convex(&self) -> bool {
        let interval = self.grid.interval();
        self.congestion.satisfies_mccann()
            && self
                .kernel
                .as_ref()
                .is_none_or(|k| k.declared_convex() && k.convexity_probe(interval))
            && self.potential.as_ref().is_none_or(|p| p.convexity_probe(interval))
    }
}

/// `Delta sum F(nu_i) + Delta sum v(y_i) nu_i + 1/2 Delta^2 sum sum phi nu nu`
pub fn energy_eval(model: &EnergyModel, nu: &DiscreteDensity) -> Result<f64> {
    model.check_grid(nu)?;
    let dx = model.grid.spacing();
    let local: f64 = nu.values().iter().map(|&s| model.congestion.primitive(s)).sum::<f64>() * dx;
    let pot: f64 = model
        .potential_values()
        .iter()
        .zip(nu.values())
        .map(|(v, s)| v * s)
        .sum::<f64>()
        * dx;
    let inter = match &model.kernel {
        None => 0.0,
        Some(k) => 0.5 * k.pair_energy(&model.grid.nodes(), &nu.cell_masses()),
    };
    let total = local + pot + inter;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "energy = {total} (local {local}, potential {pot}, interaction {inter})"
        )));
    }
    Ok(total)
}

/// `V[nu](y_i) = f(nu_i) + v(y_i) + Delta sum_j phi(y_i, y_j) nu_j`. Cells
/// with zero density give `-inf` under an Inada congestion.
pub fn first_variation(model: &EnergyModel, nu: &DiscreteDensity) -> Result<Vec<f64>> {
    model.check_grid(nu)?;
    let field = model.interaction_field(nu);
    let pot = model.potential_values();
    Ok(nu
        .values()
        .iter()
        .zip(field.iter().zip(&pot))
        .map(|(&s, (a, b))| model.congestion.f(s) + a + b)
        .collect())
}
