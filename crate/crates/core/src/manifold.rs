//! Points of the manifold, their derived functions ζ and ℓ, the validity
//! conditions, tangent/cotangent vectors, the pairing, and seeded random
//! point generation.
//!
//! A point is stored as the finite Laurent data
//! `a = z^m + Σ_{i=m−2−D}^{m−2} a_i (z−φ)^i` and
//! `â = Σ_{i=−n}^{−n+D} â_i (z−φ)^i` where `D` is the tail depth. At this
//! truncation both are rational functions, so ζ and ℓ are known exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::series::{
    self, fourier, nodes, rechart_exact, Bound, ChartTag, CircleSamples, SeriesError, Side, TruncatedSeries,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("no base point available for (m, n, s) = ({0}, {1}, {2})")]
    Unsupported(usize, usize, usize),
    #[error("no valid point after {attempts} attempts (seed {seed})")]
    NoValidPoint { seed: u64, attempts: usize },
    #[error("invalid point: {0}")]
    Invalid(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

pub type Result<T> = std::result::Result<T, ManifoldError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub tail_depth: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl ModelParams {
    pub fn new(m: usize, n: usize, s: usize) -> Self {
        ModelParams { m, n, s, tail_depth: 8, n_samples: 256, tolerances: BTreeMap::new() }
    }

    pub fn with_tail_depth(mut self, d: usize) -> Self {
        self.tail_depth = d;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.s == 0 {
            return Err(ManifoldError::Params("m, n, s must be positive".into()));
        }
        if self.tail_depth < 4 {
            return Err(ManifoldError::Params(format!("tail_depth {} < 4", self.tail_depth)));
        }
        if self.n_samples < 64 || !self.n_samples.is_power_of_two() {
            return Err(ManifoldError::Params(format!(
                "n_samples {} must be a power of two ≥ 64",
                self.n_samples
            )));
        }
        Ok(())
    }

    /// Named tolerance with a fallback default.
    pub fn tol(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }
}

/// Exact Laurent data of one point.
#[derive(Clone, Debug)]
pub struct Point {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub phi: C64,
    /// Tail of `a` on exponents `[m−2−D, m−2]`.
    pub a_tail: TruncatedSeries,
    /// `â` on exponents `[−n, −n+D]`.
    pub ahat: TruncatedSeries,
    pub tail_depth: usize,
    n_samples: usize,
    cache: OnceLock<Arc<Derived>>,
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
            && self.n == other.n
            && self.s == other.s
            && self.phi == other.phi
            && self.tail_depth == other.tail_depth
            && self.a_raw() == other.a_raw()
            && self.ahat_raw() == other.ahat_raw()
    }
}

#[derive(Serialize, Deserialize)]
struct WindowJson {
    lo: i64,
    hi: i64,
    coeffs: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct PointJson {
    m: usize,
    n: usize,
    s: usize,
    phi: C64,
    a_tail: WindowJson,
    ahat: WindowJson,
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let (alo, ahi) = self.a_window();
        let (hlo, hhi) = self.ahat_window();
        PointJson {
            m: self.m,
            n: self.n,
            s: self.s,
            phi: self.phi,
            a_tail: WindowJson { lo: alo, hi: ahi, coeffs: self.a_raw() },
            ahat: WindowJson { lo: hlo, hi: hhi, coeffs: self.ahat_raw() },
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let j = PointJson::deserialize(de)?;
        let depth = j.a_tail.hi - j.a_tail.lo;
        if j.a_tail.hi != j.m as i64 - 2 || j.ahat.lo != -(j.n as i64) {
            return Err(D::Error::custom("tail windows must end at m−2 and start at −n"));
        }
        if depth < 0 || j.ahat.hi - j.ahat.lo != depth {
            return Err(D::Error::custom("a_tail and ahat windows must have equal depth"));
        }
        if j.a_tail.coeffs.len() as i64 != depth + 1 || j.ahat.coeffs.len() as i64 != depth + 1 {
            return Err(D::Error::custom("coefficient count does not match window"));
        }
        Ok(Point::from_raw_parts(j.m, j.n, j.s, depth as usize, j.phi, &j.a_tail.coeffs, &j.ahat.coeffs))
    }
}

impl Point {
    /// Builds a point from coefficient arrays on the tail windows (ascending).
    pub fn from_raw_parts(
        m: usize,
        n: usize,
        s: usize,
        tail_depth: usize,
        phi: C64,
        a_coeffs: &[C64],
        ahat_coeffs: &[C64],
    ) -> Self {
        let ch = ChartTag::pole(phi);
        let alo = m as i64 - 2 - tail_depth as i64;
        Point {
            m,
            n,
            s,
            phi,
            a_tail: TruncatedSeries::polynomial(ch, alo, a_coeffs.to_vec()),
            ahat: TruncatedSeries::polynomial(ch, -(n as i64), ahat_coeffs.to_vec()),
            tail_depth,
            n_samples: 256,
            cache: OnceLock::new(),
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self.cache = OnceLock::new();
        self
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn chart(&self) -> ChartTag {
        ChartTag::pole(self.phi)
    }

    pub fn a_window(&self) -> (i64, i64) {
        let hi = self.m as i64 - 2;
        (hi - self.tail_depth as i64, hi)
    }

    pub fn ahat_window(&self) -> (i64, i64) {
        let lo = -(self.n as i64);
        (lo, lo + self.tail_depth as i64)
    }

    pub fn a_coeff(&self, i: i64) -> C64 {
        self.a_tail.coeff(i)
    }

    pub fn ahat_coeff(&self, i: i64) -> C64 {
        self.ahat.coeff(i)
    }

    pub fn a_raw(&self) -> Vec<C64> {
        let (lo, hi) = self.a_window();
        (lo..=hi).map(|i| self.a_coeff(i)).collect()
    }

    pub fn ahat_raw(&self) -> Vec<C64> {
        let (lo, hi) = self.ahat_window();
        (lo..=hi).map(|i| self.ahat_coeff(i)).collect()
    }

    /// Raw coordinate vector `(φ, a_lo..a_{m−2}, â_{−n}..â_{−n+D})`.
    pub fn raw(&self) -> Vec<C64> {
        let mut v = vec![self.phi];
        v.extend(self.a_raw());
        v.extend(self.ahat_raw());
        v
    }

    /// Inverse of [`Point::raw`], keeping the shape of `self`.
    pub fn with_raw(&self, raw: &[C64]) -> Point {
        let d = self.tail_depth + 1;
        assert_eq!(raw.len(), 1 + 2 * d, "raw vector length");
        Point::from_raw_parts(self.m, self.n, self.s, self.tail_depth, raw[0], &raw[1..1 + d], &raw[1 + d..])
            .with_samples(self.n_samples)
    }

    /// `a` including its `z^m` head, as a polynomial in `(z−φ)`.
    pub fn a_series(&self) -> TruncatedSeries {
        let head: Vec<C64> =
            (0..=self.m as i64).map(|k| self.phi.powi((self.m as i64 - k) as i32) * series::binomial(self.m as i64, k)).collect();
        let head = TruncatedSeries::polynomial(self.chart(), 0, head);
        head.add(&self.a_tail).expect("same chart")
    }

    pub fn ahat_series(&self) -> TruncatedSeries {
        self.ahat.clone()
    }

    /// `ζ = a − â` as an exact Laurent polynomial in `(z−φ)`.
    pub fn zeta(&self) -> TruncatedSeries {
        self.a_series().sub(&self.ahat).expect("same chart")
    }

    /// `ℓ = a_+ + â_−`.
    pub fn ell(&self) -> TruncatedSeries {
        let plus = self.a_series().window_clip(Bound::AtLeast(0)).expect("pole chart");
        let minus = self.ahat.window_clip(Bound::AtMost(-1)).expect("pole chart");
        plus.add(&minus).expect("same chart")
    }

    /// Cached samples and formal inverses.
    pub fn derived(&self) -> &Derived {
        self.cache.get_or_init(|| Arc::new(Derived::new(self)))
    }
}

/// Sampled functions and formal series attached to a point.
#[derive(Clone, Debug)]
pub struct Derived {
    pub n: usize,
    pub z: CircleSamples,
    pub w: CircleSamples,
    pub a: CircleSamples,
    pub ahat: CircleSamples,
    pub da: CircleSamples,
    pub dahat: CircleSamples,
    pub zeta: CircleSamples,
    pub dzeta: CircleSamples,
    pub ell: CircleSamples,
    pub dell: CircleSamples,
    /// `ℓ` and `ℓ′` exact in the pole chart.
    pub ell_series: TruncatedSeries,
    pub dell_series: TruncatedSeries,
    /// `ℓ` and `ℓ′` expanded at infinity, exact down to `z^{−depth}`.
    pub ell_inf: TruncatedSeries,
    pub dell_inf: TruncatedSeries,
    /// Formal inverse of `a′` anchored at its top term.
    pub inv_da: TruncatedSeries,
    /// Formal inverse of `â′` anchored at its bottom term.
    pub inv_dahat: TruncatedSeries,
    /// Formal inverses of `ℓ′` at infinity and at the pole.
    pub inv_dell_inf: TruncatedSeries,
    pub inv_dell_pole: TruncatedSeries,
    pub depth: i64,
}

impl Derived {
    fn new(p: &Point) -> Self {
        let n = p.n_samples;
        let depth = (2 * (p.m + p.n + p.tail_depth) + 8) as i64;
        let a_s = p.a_series();
        let da_s = a_s.d_dz();
        let dahat_s = p.ahat.d_dz();
        let ell_series = p.ell();
        let dell_series = ell_series.d_dz();
        let ell_inf = rechart_exact(&ell_series, ChartTag::AtInfinity, depth).expect("closed series");
        let dell_inf = rechart_exact(&dell_series, ChartTag::AtInfinity, depth).expect("closed series");
        let z = CircleSamples::identity(n);
        let w = z.map(|v| v - p.phi);
        let a = a_s.eval_on_circle(n);
        let ahat = p.ahat.eval_on_circle(n);
        let zeta = &a - &ahat;
        let da = da_s.eval_on_circle(n);
        let dahat = dahat_s.eval_on_circle(n);
        let dzeta = &da - &dahat;
        let ell = ell_series.eval_on_circle(n);
        let dell = dell_series.eval_on_circle(n);
        let d = depth as usize;
        Derived {
            n,
            inv_da: da_s.reciprocal_leading(Side::Top, d).expect("monic top term"),
            inv_dahat: dahat_s.reciprocal_leading(Side::Bottom, d).expect("nonzero pole coefficient"),
            inv_dell_inf: dell_inf.reciprocal_leading(Side::Top, d).expect("monic top term"),
            inv_dell_pole: dell_series.reciprocal_leading(Side::Bottom, d).expect("nonzero pole coefficient"),
            z,
            w,
            a,
            ahat,
            da,
            dahat,
            zeta,
            dzeta,
            ell,
            dell,
            ell_series,
            dell_series,
            ell_inf,
            dell_inf,
            depth,
        }
    }
}

// ---------------------------------------------------------------------------
// Validity

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidityReport {
    /// The four defining conditions; these decide validity.
    pub conditions: Vec<Condition>,
    /// Reported but not enforced: whether `ζ^{1/s}` maps Γ to a simple curve.
    pub diagnostics: Vec<Condition>,
}

impl ValidityReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().chain(&self.diagnostics).find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.conditions.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

/// Smallest `|f|` over the samples below which a derivative counts as vanishing.
pub const DERIVATIVE_FLOOR: f64 = 1e-6;

/// Checks the four defining conditions: nonzero `â_{−n}`, nonvanishing
/// `ζ′` and `ℓ′` on Γ, `winding(ζ) = s`, and windings `m` and `−n` of `a`
/// and `â`.
pub fn validate(p: &Point) -> ValidityReport {
    let mut out = Vec::new();
    let mut diag = Vec::new();
    let lead = p.ahat_coeff(-(p.n as i64)).norm();
    out.push(Condition { name: "leading_coefficient", passed: lead > 1e-12, measured: format!("|â_-n| = {lead:.3e}") });
    if lead <= 1e-12 {
        return ValidityReport { conditions: out, diagnostics: diag };
    }
    let d = p.derived();
    let min_dz = d.dzeta.values.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    let min_dl = d.dell.values.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    out.push(Condition {
        name: "nonvanishing_derivatives",
        passed: min_dz > DERIVATIVE_FLOOR && min_dl > DERIVATIVE_FLOOR,
        measured: format!("min|ζ′| = {min_dz:.3e}, min|ℓ′| = {min_dl:.3e}"),
    });
    let wz = d.zeta.winding_number();
    out.push(Condition {
        name: "root_winding",
        passed: wz == Ok(p.s as i64),
        measured: format!("winding(ζ) = {}, target {}", fmt_winding(&wz), p.s),
    });
    if wz == Ok(p.s as i64) {
        let simple = series::power_on_circle(&d.zeta, 1.0 / p.s as f64, false)
            .map(|r| is_simple_closed(&r.values))
            .unwrap_or(false);
        diag.push(Condition { name: "simple_image", passed: simple, measured: format!("simple = {simple}") });
    }
    let wa = d.a.winding_number();
    let wh = d.ahat.winding_number();
    out.push(Condition {
        name: "component_windings",
        passed: wa == Ok(p.m as i64) && wh == Ok(-(p.n as i64)),
        measured: format!("winding(a) = {}, winding(â) = {}", fmt_winding(&wa), fmt_winding(&wh)),
    });
    ValidityReport { conditions: out, diagnostics: diag }
}

fn fmt_winding(w: &series::Result<i64>) -> String {
    match w {
        Ok(k) => k.to_string(),
        Err(e) => format!("undefined ({e})"),
    }
}

/// Orientation-based test that the closed polygon through `pts` has no
/// crossing between non-adjacent edges.
pub fn is_simple_closed(pts: &[C64]) -> bool {
    let n = pts.len();
    let cross = |o: C64, a: C64, b: C64| (a - o).re * (b - o).im - (a - o).im * (b - o).re;
    let crosses = |p1: C64, p2: C64, q1: C64, q2: C64| {
        let d1 = cross(q1, q2, p1);
        let d2 = cross(q1, q2, p2);
        let d3 = cross(p1, p2, q1);
        let d4 = cross(p1, p2, q2);
        (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
    };
    for i in 0..n {
        let (p1, p2) = (pts[i], pts[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if crosses(p1, p2, pts[j], pts[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Largest relative magnitude among the top eighth of Fourier modes of
/// `1/ζ′`, `1/ℓ′`, `1/a` and `1/â`; small values mean N samples resolve the
/// point. The last two enter the logarithmic densities.
pub fn resolution_residual(p: &Point) -> f64 {
    let d = p.derived();
    let tail = |f: &CircleSamples| {
        let c = fourier(&f.values);
        let n = c.len();
        let scale = c.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let band = n / 16;
        let top = (n / 2 - band..n / 2 + band).map(|j| c[j].norm()).fold(0.0, f64::max);
        top / scale
    };
    [&d.dzeta, &d.dell, &d.a, &d.ahat].iter().map(|f| tail(&f.recip())).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Tangent and cotangent vectors

/// `(ξ, ξ̂)` with `ξ` in exponents `≤ m−2` and `ξ̂` in exponents `≥ −n−1`,
/// represented by values on Γ.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVec {
    pub xi: CircleSamples,
    pub xihat: CircleSamples,
}

/// `(ω, ω̂)` with `ω` in exponents `≥ −m+1` and `ω̂` in exponents `≤ n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Covector {
    pub omega: CircleSamples,
    pub omegahat: CircleSamples,
}

macro_rules! pair_ops {
    ($t:ident, $f1:ident, $f2:ident) => {
        impl $t {
            pub fn new($f1: CircleSamples, $f2: CircleSamples) -> Self {
                $t { $f1, $f2 }
            }

            pub fn zero(n: usize) -> Self {
                $t { $f1: CircleSamples::zeros(n), $f2: CircleSamples::zeros(n) }
            }

            pub fn add(&self, o: &Self) -> Self {
                $t { $f1: &self.$f1 + &o.$f1, $f2: &self.$f2 + &o.$f2 }
            }

            pub fn sub(&self, o: &Self) -> Self {
                $t { $f1: &self.$f1 - &o.$f1, $f2: &self.$f2 - &o.$f2 }
            }

            pub fn scale(&self, c: C64) -> Self {
                $t { $f1: self.$f1.scale(c), $f2: self.$f2.scale(c) }
            }

            pub fn sup_norm(&self) -> f64 {
                self.$f1.sup_norm().max(self.$f2.sup_norm())
            }

            pub fn n_samples(&self) -> usize {
                self.$f1.len()
            }
        }
    };
}

pair_ops!(TangentVec, xi, xihat);
pair_ops!(Covector, omega, omegahat);

impl TangentVec {
    pub fn from_series(xi: &TruncatedSeries, xihat: &TruncatedSeries, n: usize) -> Self {
        TangentVec { xi: xi.eval_on_circle(n), xihat: xihat.eval_on_circle(n) }
    }

    /// Projection onto the tangent windows.
    pub fn clip(&self, p: &Point) -> Self {
        TangentVec {
            xi: self.xi.clip(p.phi, Bound::AtMost(p.m as i64 - 2)),
            xihat: self.xihat.clip(p.phi, Bound::AtLeast(-(p.n as i64) - 1)),
        }
    }

    /// `∂ζ = ξ − ξ̂`.
    pub fn dzeta(&self) -> CircleSamples {
        &self.xi - &self.xihat
    }

    /// `∂ℓ = ξ_+ + ξ̂_−`, exact on exponents `[−n−1, m−2]`.
    pub fn dell(&self, p: &Point) -> TruncatedSeries {
        let lo = -(p.n as i64) - 1;
        let hi = p.m as i64 - 2;
        let mut coeffs = self.xihat.coefficients(p.phi, lo, -1);
        if hi >= 0 {
            coeffs.extend(self.xi.coefficients(p.phi, 0, hi));
        }
        TruncatedSeries::polynomial(p.chart(), lo, coeffs)
    }

    /// Largest coefficient outside the tangent windows among the first
    /// `k` exponents beyond each edge.
    pub fn window_leak(&self, p: &Point, k: i64) -> f64 {
        let m = p.m as i64;
        let n = p.n as i64;
        let up = self.xi.coefficients(p.phi, m - 1, m - 2 + k);
        let down = self.xihat.coefficients(p.phi, -n - 1 - k, -n - 2);
        up.iter().chain(down.iter()).map(|c| c.norm()).fold(0.0, f64::max)
    }
}

impl Covector {
    /// Projection onto the covector windows, which is also the quotient by
    /// the kernel summand `(z−φ)^{−m}H⁻ × (z−φ)^n H⁺`.
    pub fn clip(&self, p: &Point) -> Self {
        Covector {
            omega: self.omega.clip(p.phi, Bound::AtLeast(-(p.m as i64) + 1)),
            omegahat: self.omegahat.clip(p.phi, Bound::AtMost(p.n as i64)),
        }
    }

    /// Distance after projecting both sides onto the covector windows.
    pub fn kernel_distance(&self, other: &Self, p: &Point) -> f64 {
        self.sub(other).clip(p).sup_norm()
    }
}

/// `(1/2πi)∮_Γ (ωξ + ω̂ξ̂) dz` by the trapezoid rule.
pub fn pairing(w: &Covector, t: &TangentVec) -> C64 {
    (&(&w.omega * &t.xi) + &(&w.omegahat * &t.xihat)).contour_integral()
}

/// Coefficientwise pairing of series data: `Σ_{j+k=−1} ω_j ξ_k + ω̂_j ξ̂_k`.
/// Fails if some contributing pair involves a coefficient outside an
/// exactness window.
pub fn pairing_series(
    omega: &TruncatedSeries,
    omegahat: &TruncatedSeries,
    xi: &TruncatedSeries,
    xihat: &TruncatedSeries,
) -> Result<C64> {
    let mut total = ZERO;
    for (f, g) in [(omega, xi), (omegahat, xihat)] {
        if f.chart != g.chart {
            return Err(SeriesError::ChartMismatch.into());
        }
        if !residue_pairs_known(f, g) || !residue_pairs_known(g, f) {
            return Err(SeriesError::WindowExhausted("pairing".into()).into());
        }
        let (Some((flo, fhi)), Some((glo, ghi))) = (f.support(), g.support()) else { continue };
        for j in flo.max(-1 - ghi)..=fhi.min(-1 - glo) {
            total += f.coeff(j) * g.coeff(-1 - j);
        }
    }
    Ok(total)
}

/// Every unknown coefficient of `f` meets a known zero of `g`.
fn residue_pairs_known(f: &TruncatedSeries, g: &TruncatedSeries) -> bool {
    let bounded = |e: i64| e.abs() < series::UNBOUNDED;
    let support = g.support();
    // j < f.exact_lo pairs with k > −1 − f.exact_lo
    let low_ok = !bounded(f.exact_lo)
        || (!bounded(g.exact_hi) && support.map_or(true, |(_, hi)| hi <= -1 - f.exact_lo));
    let high_ok = !bounded(f.exact_hi)
        || (!bounded(g.exact_lo) && support.map_or(true, |(lo, _)| lo >= -1 - f.exact_hi));
    low_ok && high_ok
}

// ---------------------------------------------------------------------------
// Random points

/// Default coefficient for the pole of `â` at the `s = m` base point.
pub const BASE_POLE_COEFF: f64 = 0.22;

fn base_point(params: &ModelParams, phi: C64) -> Result<Point> {
    let (m, n, s, dd) = (params.m, params.n, params.s, params.tail_depth);
    let mut a = vec![ZERO; dd + 1];
    let mut h = vec![ZERO; dd + 1];
    if s == m {
        h[0] = C64::new(BASE_POLE_COEFF, 0.0);
    } else if (m, n, s) == (2, 1, 1) {
        // base at φ0 = −r, then z ↦ e^{iα}z with e^{−iα}(−r) = φ
        let r = phi.norm();
        let rot = if r > 0.0 { -phi / r } else { C64::new(1.0, 0.0) };
        let e = |k: i32| rot.powi(k);
        // a-window ascends from m−2−D to m−2 = 0
        a[dd] = e(2) * 0.26;
        a[dd - 1] = e(3) * 0.17;
        let g = e(2);
        h[0] = g * e(1) * 0.49;
        h[1] = g * 1.04;
        h[2] = g * e(-1) * 0.74;
        h[3] = g * e(-2) * 0.17;
    } else {
        return Err(ManifoldError::Unsupported(m, n, s));
    }
    Ok(Point::from_raw_parts(m, n, s, dd, phi, &a, &h).with_samples(params.n_samples))
}

/// Largest ratio accepted by [`random_point`] for [`resolution_residual`].
pub const RESOLUTION_LIMIT: f64 = 1e-13;

/// Deterministic random point: a base point with geometric coefficient
/// noise (factor 0.2 per exponent step away from the head, capped at 0.3 of
/// the head), φ uniform in `|φ| ≤ 0.4`, retried until valid.
pub fn random_point(params: &ModelParams, seed: u64) -> Result<Point> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let r = 0.4 * rng.gen::<f64>().sqrt();
        let phi = C64::from_polar(r, 2.0 * PI * rng.gen::<f64>());
        let base = base_point(params, phi)?;
        let dd = params.tail_depth;
        let mut a = base.a_raw();
        let mut h = base.ahat_raw();
        let head_a = 1.0;
        let head_h = h[0].norm();
        for k in 0..=dd {
            let sigma = 0.05 * 0.2f64.powi(k as i32);
            let na = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * sigma;
            let nh = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * sigma;
            a[dd - k] += cap(na, 0.3 * head_a);
            h[k] += cap(nh, 0.3 * head_h);
        }
        let p = Point::from_raw_parts(params.m, params.n, params.s, dd, phi, &a, &h).with_samples(params.n_samples);
        if validate(&p).passed() && resolution_residual(&p) < RESOLUTION_LIMIT {
            return Ok(p);
        }
    }
    Err(ManifoldError::NoValidPoint { seed, attempts: ATTEMPTS })
}

fn cap(c: C64, limit: f64) -> C64 {
    if c.norm() > limit {
        c * (limit / c.norm())
    } else {
        c
    }
}

/// The base point itself (no noise) at a given φ, for tests and examples.
pub fn base(params: &ModelParams, phi: C64) -> Result<Point> {
    base_point(params, phi)
}

/// Uniform samples of the unit circle, re-exported for convenience.
pub fn circle_nodes(n: usize) -> Arc<Vec<C64>> {
    nodes(n)
}
