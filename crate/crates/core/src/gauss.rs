//! Univariate and bivariate standard-normal kernels.
//!
//! Everything that the estimator evaluates per observation goes through here:
//! truncated means on coarsening intervals, their slopes in the index, the two
//! one-sided residuals used by the cut-point equations, and rectangle
//! probabilities of the standard bivariate normal.

#![allow(clippy::excessive_precision)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Interval masses below this are treated as empty.
pub const MIN_MASS: f64 = 1e-300;

/// A half-open interval `(lower, upper]` on the latent scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lower: f64,
    upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() {
            return Err(Error::Domain(format!("interval endpoint is NaN: ({lower}, {upper}]")));
        }
        if lower >= upper {
            return Err(Error::Domain(format!("empty interval ({lower}, {upper}]")));
        }
        Ok(Interval { lower, upper })
    }

    pub fn whole() -> Self {
        Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// The interval translated by `-shift`; infinite endpoints stay infinite.
    pub fn shifted(&self, shift: f64) -> Interval {
        Interval { lower: self.lower - shift, upper: self.upper - shift }
    }
}

pub fn std_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn std_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(z)` without cancellation.
pub fn std_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        // erfcx(-x) = 2exp(x²) - erfcx(x); overflows to inf for large |x|, which is right.
        let (hi, lo) = square_split(x);
        return 2.0 * hi.exp() * (1.0 + lo) - erfcx(-x);
    }
    if x < 26.0 {
        let (hi, lo) = square_split(x);
        return hi.exp() * (1.0 + lo) * libm::erfc(x);
    }
    if x.is_infinite() {
        return 0.0;
    }
    // Laplace continued fraction, converged to double precision well before 26.
    let mut t = x;
    for n in (1..=40).rev() {
        t = x + (n as f64 * 0.5) / t;
    }
    FRAC_1_SQRT_PI / t
}

/// `x²` as an unevaluated sum `hi + lo` so that `exp(x²)` keeps full precision.
fn square_split(x: f64) -> (f64, f64) {
    let hi = x * x;
    let lo = x.mul_add(x, -hi);
    (hi, lo)
}

/// Inverse Mills ratio `φ(x) / (1 - Φ(x))`, the mean of a normal truncated to `(x, ∞)`.
pub fn inv_mills(x: f64) -> f64 {
    if x >= 0.0 {
        SQRT_2_OVER_PI / erfcx(x * FRAC_1_SQRT_2)
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        std_pdf(x) / std_sf(x)
    }
}

/// `ln(1 - Φ(x))`, accurate deep into the upper tail.
fn ln_sf(x: f64) -> f64 {
    if x > 0.0 {
        (0.5 * erfcx(x * FRAC_1_SQRT_2)).ln() - 0.5 * x * x
    } else {
        std_sf(x).ln()
    }
}

/// Standard normal quantile.
pub fn std_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile requires p in (0, 1), got {p}")));
    }
    if p > 0.5 {
        return Ok(-quantile_lower(1.0 - p));
    }
    Ok(quantile_lower(p))
}

// Acklam's rational approximation plus Halley refinement, for p <= 0.5.
fn quantile_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if p == 0.5 {
        return 0.0;
    }
    let mut x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // x < 0 here, so Φ(x) carries full relative precision.
    for _ in 0..2 {
        let u = (std_cdf(x) - p) / std_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Mean, slope and mass of a standard normal truncated to `(a, b]`.
#[derive(Clone, Copy, Debug)]
pub struct Truncated {
    pub mean: f64,
    /// d mean / d shift when the interval is `(a - t, b - t]`; equals `Var - 1`.
    pub slope: f64,
    pub ln_mass: f64,
}

/// Moments of `ε | a < ε ≤ b` for standard normal `ε`.
pub fn truncated(a: f64, b: f64) -> Result<Truncated> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::Domain(format!("invalid truncation interval ({a}, {b}]")));
    }
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return Ok(Truncated { mean: 0.0, slope: 0.0, ln_mass: 0.0 });
    }
    let out = if a >= 0.0 {
        right_tail(a, b)
    } else if b <= 0.0 {
        let t = right_tail(-b, -a);
        Truncated { mean: -t.mean, ..t }
    } else {
        // Straddles zero, so the mass is at least min(Φ(b), 1-Φ(a)) - 1/2 > 0.
        let mass = 1.0 - std_sf(b) - std_cdf(a);
        let (pa, pb) = (std_pdf(a), std_pdf(b));
        let apa = if a.is_infinite() { 0.0 } else { a * pa };
        let bpb = if b.is_infinite() { 0.0 } else { b * pb };
        let mean = (pa - pb) / mass;
        Truncated { mean, slope: (apa - bpb) / mass - mean * mean, ln_mass: mass.ln() }
    };
    if !(out.ln_mass >= MIN_MASS.ln()) || !out.mean.is_finite() {
        return Err(Error::DegenerateInterval { lower: a, upper: b });
    }
    Ok(out)
}

// 0 <= a < b: everything relative to the upper tail at a.
fn right_tail(a: f64, b: f64) -> Truncated {
    let lambda = inv_mills(a);
    let ln_qa = ln_sf(a);
    if b == f64::INFINITY {
        return Truncated { mean: lambda, slope: lambda * (a - lambda), ln_mass: ln_qa };
    }
    let e = (-0.5 * (b - a) * (b + a)).exp(); // φ(b)/φ(a)
    let r = erfcx(b * FRAC_1_SQRT_2) / erfcx(a * FRAC_1_SQRT_2) * e; // Q(b)/Q(a)
    let share = 1.0 - r;
    let mean = lambda * (1.0 - e) / share;
    let slope = lambda * (a - b * e) / share - mean * mean;
    Truncated { mean, slope, ln_mass: ln_qa + (-r).ln_1p() }
}

/// `E[ε | ε ∈ interval - shift]`.
pub fn trunc_mean(interval: Interval, shift: f64) -> Result<f64> {
    let iv = interval.shifted(shift);
    Ok(truncated(iv.lower, iv.upper)?.mean)
}

/// `d/d shift` of [`trunc_mean`].
pub fn trunc_mean_slope(interval: Interval, shift: f64) -> Result<f64> {
    let iv = interval.shifted(shift);
    Ok(truncated(iv.lower, iv.upper)?.slope)
}

/// `E[ε | ε ≤ cut - index]`, always negative; finite for any finite argument.
pub fn lower_residual(cut: f64, index: f64) -> Result<f64> {
    let c = cut - index;
    if c.is_nan() {
        return Err(Error::Domain(format!("lower residual at NaN ({cut} - {index})")));
    }
    Ok(-inv_mills(-c))
}

/// `E[ε | ε > cut - index]`, always positive.
pub fn upper_residual(cut: f64, index: f64) -> Result<f64> {
    let c = cut - index;
    if c.is_nan() {
        return Err(Error::Domain(format!("upper residual at NaN ({cut} - {index})")));
    }
    Ok(inv_mills(c))
}

/// `P(a < ε ≤ b)` evaluated from the nearer tail.
pub fn interval_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a >= 0.0 {
        std_sf(a) - std_sf(b)
    } else if b <= 0.0 {
        std_cdf(b) - std_cdf(a)
    } else {
        1.0 - std_sf(b) - std_cdf(a)
    }
}

const GL6: [(f64, f64); 3] = [
    (0.1713244923791705e+00, -0.9324695142031522e+00),
    (0.3607615730481384e+00, -0.6612093864662647e+00),
    (0.4679139345726904e+00, -0.2386191860831970e+00),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191e+00),
    (0.1069393259953183e+00, -0.9041172563704750e+00),
    (0.1600783285433464e+00, -0.7699026741943050e+00),
    (0.2031674267230659e+00, -0.5873179542866171e+00),
    (0.2334925365383547e+00, -0.3678314989981802e+00),
    (0.2491470458134029e+00, -0.1252334085114692e+00),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949e+00),
    (0.4060142980038694e-01, -0.9639719272779138e+00),
    (0.6267204833410906e-01, -0.9122344282513259e+00),
    (0.8327674157670475e-01, -0.8391169718222188e+00),
    (0.1019301198172404e+00, -0.7463319064601508e+00),
    (0.1181945319615184e+00, -0.6360536807265150e+00),
    (0.1316886384491766e+00, -0.5108670019508271e+00),
    (0.1420961093183821e+00, -0.3737060887154196e+00),
    (0.1491729864726037e+00, -0.2277858511416451e+00),
    (0.1527533871307259e+00, -0.7652652113349733e-01),
];

/// `P(X ≤ h, Y ≤ k)` for a standard bivariate normal with correlation `rho`.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return std_cdf(k);
    }
    if k == f64::INFINITY {
        return std_cdf(h);
    }
    if rho < 0.0 {
        // P(X ≤ h, Y ≤ k) = Φ(h) - P(X ≤ h, -Y ≤ -k) with corr(X, -Y) = -rho.
        return (std_cdf(h) - upper_orthant(-h, k, -rho)).max(0.0);
    }
    upper_orthant(-h, -k, rho)
}

// Drezner–Wesolowsky with Genz's refinements: P(X > h, Y > k), 0 <= r <= 1.
fn upper_orthant(h: f64, k: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    if r == 0.0 {
        return std_sf(h) * std_sf(k);
    }
    let nodes: &[(f64, f64)] = if r < 0.3 {
        &GL6
    } else if r < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let hk = h * k;
    if r < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        let mut sum = 0.0;
        for &(w, x) in nodes {
            for s in [-1.0, 1.0] {
                let sn = (0.5 * asr * (s * x + 1.0)).sin();
                sum += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return (sum * asr / (2.0 * two_pi) + std_sf(h) * std_sf(k)).clamp(0.0, 1.0);
    }
    let tail = std_sf(h.max(k));
    if r >= 1.0 {
        return tail;
    }
    let as_ = (1.0 - r) * (1.0 + r);
    let mut a = as_.sqrt();
    let bs = (h - k) * (h - k);
    let c = (4.0 - hk) / 8.0;
    let d = (12.0 - hk) / 16.0;
    let mut bvn = a
        * (-(bs / as_ + hk) / 2.0).exp()
        * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
    if hk > -160.0 {
        let b = bs.sqrt();
        bvn -= (-hk / 2.0).exp()
            * two_pi.sqrt()
            * std_cdf(-b / a)
            * b
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for &(w, x) in nodes {
        for s in [-1.0, 1.0] {
            let xs = (a * (s * x + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            bvn += a
                * w
                * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                    - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
        }
    }
    (tail - bvn / two_pi).clamp(0.0, 1.0)
}

/// `P(X ∈ x, Y ∈ y)` for a standard bivariate normal with correlation `rho`.
pub fn bvn_rect_prob(x: Interval, y: Interval, rho: f64) -> Result<f64> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    let p = bvn_cdf(x.upper, y.upper, rho) - bvn_cdf(x.lower, y.upper, rho)
        - bvn_cdf(x.upper, y.lower, rho)
        + bvn_cdf(x.lower, y.lower, rho);
    Ok(p.clamp(0.0, 1.0))
}

/// Normal quantiles of cumulative category shares: `Φ⁻¹(P(y ≤ j))`.
pub fn share_quantiles(counts: &[usize]) -> Result<Vec<f64>> {
    let n: usize = counts.iter().sum();
    let mut cum = 0usize;
    let mut out = Vec::with_capacity(counts.len().saturating_sub(1));
    for &c in &counts[..counts.len().saturating_sub(1)] {
        cum += c;
        out.push(std_quantile(cum as f64 / n as f64)?);
    }
    Ok(out)
}
