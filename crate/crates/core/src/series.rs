//! Windowed Laurent series, sampled functions on the unit circle, and the
//! operations that move between the two representations.
//!
//! A [`TruncatedSeries`] stores coefficients on `lo..=hi` together with an
//! exactness window `[exact_lo, exact_hi]`. Inside the exactness window a
//! coefficient is trustworthy; positions inside the window but outside the
//! stored range are known zeros. Either bound may be [`UNBOUNDED`], which
//! marks that side as closed (the series is known to be zero beyond its
//! storage there). A finite Laurent polynomial is closed on both sides.
//!
//! [`CircleSamples`] holds values at the nodes `z_k = exp(2πik/N)` of the
//! unit circle Γ. The split into the part holomorphic inside Γ and the part
//! holomorphic outside Γ (vanishing at infinity) does not depend on any
//! expansion center, so the `±` projections are done by FFT on samples.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Sentinel for an exactness bound that extends indefinitely.
pub const UNBOUNDED: i64 = 1 << 40;

/// Default guard band applied by [`samples_to_series`].
pub const DEFAULT_GUARD: i64 = 2;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SeriesError {
    #[error("chart mismatch")]
    ChartMismatch,
    #[error("window exhausted: {0}")]
    WindowExhausted(String),
    #[error("operation requires the pole chart")]
    NotPoleChart,
    #[error("vanishing extreme coefficient")]
    VanishingLeading,
    #[error("zero sample at node {0}")]
    ZeroSample(usize),
    #[error("winding {winding} times exponent {alpha} is not an integer")]
    Multivalued { winding: i64, alpha: f64 },
    #[error("logarithm requested in strict mode but winding is {0}")]
    StrictWinding(i64),
    #[error("winding number not resolved (rounding residual {0:.3})")]
    WindingResidual(f64),
    #[error("window [{lo}, {hi}] wider than half the sample count {n}")]
    WindowTooWide { lo: i64, hi: i64, n: usize },
    #[error("wrong normal form: {0}")]
    NormalForm(String),
    #[error("sample count {0} must be a power of two and at least 32")]
    BadSampleCount(usize),
}

pub type Result<T> = std::result::Result<T, SeriesError>;

fn exhausted(what: impl Into<String>) -> SeriesError {
    SeriesError::WindowExhausted(what.into())
}

/// Expansion chart of a series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChartTag {
    /// Powers of `(z − center)`.
    AtPole { center: C64 },
    /// Powers of `z`, read as an expansion at infinity.
    AtInfinity,
}

impl ChartTag {
    pub fn pole(center: C64) -> Self {
        ChartTag::AtPole { center }
    }

    /// Expansion center used for evaluation (0 for the chart at infinity).
    pub fn center(&self) -> C64 {
        match self {
            ChartTag::AtPole { center } => *center,
            ChartTag::AtInfinity => ZERO,
        }
    }
}

/// Which extreme of a series anchors a formal inverse or power.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    /// Keep exponents `≥ a`.
    AtLeast(i64),
    /// Keep exponents `≤ b`.
    AtMost(i64),
}

fn is_bounded(e: i64) -> bool {
    e.abs() < UNBOUNDED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSeries {
    pub chart: ChartTag,
    pub lo: i64,
    pub coeffs: Vec<C64>,
    pub exact_lo: i64,
    pub exact_hi: i64,
}

impl TruncatedSeries {
    pub fn new(chart: ChartTag, lo: i64, coeffs: Vec<C64>, exact_lo: i64, exact_hi: i64) -> Self {
        let mut s = TruncatedSeries { chart, lo, coeffs, exact_lo, exact_hi };
        s.normalize();
        s
    }

    /// A finite Laurent polynomial: exact everywhere.
    pub fn polynomial(chart: ChartTag, lo: i64, coeffs: Vec<C64>) -> Self {
        Self::new(chart, lo, coeffs, -UNBOUNDED, UNBOUNDED)
    }

    pub fn zero(chart: ChartTag) -> Self {
        Self::polynomial(chart, 0, Vec::new())
    }

    pub fn monomial(chart: ChartTag, k: i64, c: C64) -> Self {
        Self::polynomial(chart, k, vec![c])
    }

    /// Highest stored exponent (`lo − 1` when storage is empty).
    pub fn hi(&self) -> i64 {
        self.lo + self.coeffs.len() as i64 - 1
    }

    pub fn coeff(&self, k: i64) -> C64 {
        if k < self.lo || k > self.hi() {
            ZERO
        } else {
            self.coeffs[(k - self.lo) as usize]
        }
    }

    pub fn is_exact_at(&self, k: i64) -> bool {
        self.exact_lo <= k && k <= self.exact_hi
    }

    pub fn is_closed(&self) -> bool {
        !is_bounded(self.exact_lo) && !is_bounded(self.exact_hi)
    }

    /// Extreme exponents carrying nonzero coefficients.
    pub fn support(&self) -> Option<(i64, i64)> {
        let first = self.coeffs.iter().position(|c| *c != ZERO)?;
        let last = self.coeffs.iter().rposition(|c| *c != ZERO)?;
        Some((self.lo + first as i64, self.lo + last as i64))
    }

    fn normalize(&mut self) {
        // Storage never extends past the exactness window.
        if is_bounded(self.exact_lo) && self.lo < self.exact_lo {
            let cut = ((self.exact_lo - self.lo) as usize).min(self.coeffs.len());
            self.coeffs.drain(..cut);
            self.lo = self.exact_lo;
        }
        if is_bounded(self.exact_hi) && self.hi() > self.exact_hi {
            let keep = (self.exact_hi - self.lo + 1).max(0) as usize;
            self.coeffs.truncate(keep);
        }
        match self.support() {
            None => {
                self.coeffs.clear();
            }
            Some((a, b)) => {
                let start = (a - self.lo) as usize;
                let end = (b - self.lo) as usize;
                self.coeffs = self.coeffs[start..=end].to_vec();
                self.lo = a;
            }
        }
    }

    fn same_chart(&self, other: &Self) -> Result<()> {
        if self.chart == other.chart {
            Ok(())
        } else {
            Err(SeriesError::ChartMismatch)
        }
    }

    fn combine(&self, other: &Self, cf: C64, cg: C64) -> Result<Self> {
        self.same_chart(other)?;
        let lo = self.lo.min(other.lo);
        let hi = self.hi().max(other.hi());
        let coeffs = (lo..=hi).map(|k| cf * self.coeff(k) + cg * other.coeff(k)).collect();
        Ok(Self::new(
            self.chart,
            lo,
            coeffs,
            self.exact_lo.max(other.exact_lo),
            self.exact_hi.min(other.exact_hi),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, ONE, ONE)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, ONE, -ONE)
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::new(
            self.chart,
            self.lo,
            self.coeffs.iter().map(|x| x * c).collect(),
            self.exact_lo,
            self.exact_hi,
        )
    }

    /// Cauchy product. A coefficient of the result is kept only if no
    /// contributing pair touches an unknown coefficient of either factor.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_chart(other)?;
        let (Some((fl, fh)), Some((gl, gh))) = (self.support(), other.support()) else {
            let closed_zero = |s: &Self| s.support().is_none() && s.is_closed();
            let mut z = Self::zero(self.chart);
            if !(closed_zero(self) || closed_zero(other)) {
                z.exact_lo = self.exact_lo.max(other.exact_lo);
                z.exact_hi = self.exact_hi.min(other.exact_hi);
            }
            return Ok(z);
        };
        let mut elo = -UNBOUNDED;
        let mut ehi = UNBOUNDED;
        for (f, g, gsup) in [(self, other, (gl, gh)), (other, self, (fl, fh))] {
            if is_bounded(f.exact_lo) {
                if is_bounded(g.exact_hi) {
                    return Err(exhausted("product of a series open below with one open above"));
                }
                elo = elo.max(f.exact_lo + gsup.1);
            }
            if is_bounded(f.exact_hi) {
                if is_bounded(g.exact_lo) {
                    return Err(exhausted("product of a series open above with one open below"));
                }
                ehi = ehi.min(f.exact_hi + gsup.0);
            }
        }
        if elo > ehi {
            return Err(exhausted(format!("product exact window [{elo}, {ehi}] is empty")));
        }
        let lo = fl + gl;
        let mut coeffs = vec![ZERO; ((fh - fl) + (gh - gl) + 1) as usize];
        for i in fl..=fh {
            let a = self.coeff(i);
            if a == ZERO {
                continue;
            }
            for j in gl..=gh {
                coeffs[(i + j - lo) as usize] += a * other.coeff(j);
            }
        }
        Ok(Self::new(self.chart, lo, coeffs, elo, ehi))
    }

    pub fn d_dz(&self) -> Self {
        let coeffs = (self.lo..=self.hi()).map(|k| self.coeff(k) * k as f64).collect();
        let shift = |e: i64| if is_bounded(e) { e - 1 } else { e };
        Self::new(self.chart, self.lo - 1, coeffs, shift(self.exact_lo), shift(self.exact_hi))
    }

    pub fn window_clip(&self, bound: Bound) -> Result<Self> {
        if !matches!(self.chart, ChartTag::AtPole { .. }) {
            return Err(SeriesError::NotPoleChart);
        }
        let (lo, hi, elo, ehi) = match bound {
            Bound::AtLeast(a) => (
                self.lo.max(a),
                self.hi(),
                if self.exact_lo <= a { -UNBOUNDED } else { self.exact_lo },
                self.exact_hi.max(a - 1),
            ),
            Bound::AtMost(b) => (
                self.lo,
                self.hi().min(b),
                self.exact_lo.min(b + 1),
                if self.exact_hi >= b { UNBOUNDED } else { self.exact_hi },
            ),
        };
        let coeffs = (lo..=hi).map(|k| self.coeff(k)).collect();
        Ok(Self::new(self.chart, lo, coeffs, elo, ehi))
    }

    pub fn project(&self, sign: Sign) -> Result<Self> {
        match sign {
            Sign::Plus => self.window_clip(Bound::AtLeast(0)),
            Sign::Minus => self.window_clip(Bound::AtMost(-1)),
        }
    }

    /// Residue of `f dz`: the `(z−φ)^{−1}` coefficient at a pole, minus the
    /// `z^{−1}` coefficient at infinity.
    pub fn residue(&self) -> Result<C64> {
        if !self.is_exact_at(-1) {
            return Err(exhausted("residue coefficient outside exact window"));
        }
        Ok(match self.chart {
            ChartTag::AtPole { .. } => self.coeff(-1),
            ChartTag::AtInfinity => -self.coeff(-1),
        })
    }

    /// Exact coefficients on `[lo, hi]`, as a closed polynomial.
    pub fn restrict(&self, lo: i64, hi: i64) -> Result<Self> {
        if lo <= hi && !(self.is_exact_at(lo) && self.is_exact_at(hi)) {
            return Err(exhausted(format!(
                "requested [{lo}, {hi}] outside exact window [{}, {}]",
                self.exact_lo, self.exact_hi
            )));
        }
        let coeffs = (lo..=hi).map(|k| self.coeff(k)).collect();
        Ok(Self::polynomial(self.chart, lo, coeffs))
    }

    pub fn eval_at(&self, z: C64) -> C64 {
        let w = z - self.chart.center();
        let acc = self.coeffs.iter().rev().fold(ZERO, |acc, c| acc * w + c);
        acc * w.powi(self.lo as i32)
    }

    pub fn eval_on_circle(&self, n: usize) -> CircleSamples {
        let z = nodes(n);
        CircleSamples::new(z.iter().map(|&zk| self.eval_at(zk)).collect())
    }

    /// Formal inverse anchored at the top (descending) or bottom (ascending)
    /// term, with at most `depth + 1` terms.
    pub fn reciprocal_leading(&self, side: Side, depth: usize) -> Result<Self> {
        let p = self.power(side, -1.0, depth)?;
        Ok(p)
    }

    /// Formal power `f^α` anchored at one extreme term `c x^T`, requiring
    /// `αT ∈ ℤ`; the constant `c^α` uses the principal branch.
    pub fn power(&self, side: Side, alpha: f64, depth: usize) -> Result<Self> {
        let (t, d, count) = self.unit_tail(side, depth)?;
        let c = self.coeff(t);
        let et = alpha * t as f64;
        if (et - et.round()).abs() > 1e-9 {
            return Err(SeriesError::NormalForm(format!("exponent {alpha}·{t} not integral")));
        }
        let et = et.round() as i64;
        let g = ps_pow_unit(&d, alpha, count);
        let lead = principal_pow(c, alpha);
        Ok(self.from_unit_tail(side, et, g.into_iter().map(|x| x * lead).collect()))
    }

    /// Formal `log(f / (c x^T))` anchored at the extreme term `c x^T`.
    pub fn log_normalized(&self, side: Side, depth: usize) -> Result<Self> {
        let (_, d, count) = self.unit_tail(side, depth)?;
        Ok(self.from_unit_tail(side, 0, ps_log_unit(&d, count)))
    }

    /// Returns the anchor exponent, the normalized tail `1 + d_1 x + …` as an
    /// ascending vector in the small variable, and the number of exact terms.
    fn unit_tail(&self, side: Side, depth: usize) -> Result<(i64, Vec<C64>, usize)> {
        let (lo, hi) = self.support().ok_or(SeriesError::VanishingLeading)?;
        let (t, avail) = match side {
            Side::Top => {
                if is_bounded(self.exact_hi) || !self.is_exact_at(hi) {
                    return Err(exhausted("top term not exact"));
                }
                let avail = if is_bounded(self.exact_lo) { hi - self.exact_lo } else { i64::MAX };
                (hi, avail)
            }
            Side::Bottom => {
                if is_bounded(self.exact_lo) || !self.is_exact_at(lo) {
                    return Err(exhausted("bottom term not exact"));
                }
                let avail = if is_bounded(self.exact_hi) { self.exact_hi - lo } else { i64::MAX };
                (lo, avail)
            }
        };
        let c = self.coeff(t);
        if c == ZERO {
            return Err(SeriesError::VanishingLeading);
        }
        let count = (depth as i64).min(avail) as usize + 1;
        let d = (0..count as i64)
            .map(|j| match side {
                Side::Top => self.coeff(t - j) / c,
                Side::Bottom => self.coeff(t + j) / c,
            })
            .collect();
        Ok((t, d, count))
    }

    fn from_unit_tail(&self, side: Side, anchor: i64, g: Vec<C64>) -> Self {
        let len = g.len() as i64;
        match side {
            Side::Top => {
                let lo = anchor - len + 1;
                let coeffs = g.into_iter().rev().collect();
                Self::new(self.chart, lo, coeffs, lo, UNBOUNDED)
            }
            Side::Bottom => Self::new(self.chart, anchor, g, -UNBOUNDED, anchor + len - 1),
        }
    }
}

/// `n`-th generalized binomial coefficient `C(a, k)`.
pub fn binomial(a: i64, k: i64) -> f64 {
    let mut r = 1.0;
    for j in 0..k {
        r *= (a - j) as f64 / (j + 1) as f64;
    }
    r
}

fn principal_pow(c: C64, alpha: f64) -> C64 {
    if alpha == alpha.round() {
        c.powi(alpha as i32)
    } else {
        (c.ln() * alpha).exp()
    }
}

/// Truncated product of ascending power series.
pub fn ps_mul(a: &[C64], b: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![ZERO; n];
    for (i, x) in a.iter().enumerate().take(n) {
        if *x == ZERO {
            continue;
        }
        for (j, y) in b.iter().enumerate().take(n - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// `(1 + d_1 x + …)^α` to `n` terms (`d[0]` must be 1).
pub fn ps_pow_unit(d: &[C64], alpha: f64, n: usize) -> Vec<C64> {
    let mut g = vec![ZERO; n];
    if n == 0 {
        return g;
    }
    g[0] = ONE;
    for k in 1..n {
        let mut acc = ZERO;
        for j in 1..=k.min(d.len() - 1) {
            acc += d[j] * g[k - j] * (alpha * j as f64 - (k - j) as f64);
        }
        g[k] = acc / k as f64;
    }
    g
}

/// `log(1 + d_1 x + …)` to `n` terms (`d[0]` must be 1).
pub fn ps_log_unit(d: &[C64], n: usize) -> Vec<C64> {
    let mut l = vec![ZERO; n];
    let at = |k: usize| if k < d.len() { d[k] } else { ZERO };
    for k in 1..n {
        let mut acc = at(k) * k as f64;
        for j in 1..k {
            acc -= l[j] * at(k - j) * j as f64;
        }
        l[k] = acc / k as f64;
    }
    l
}

/// Exact change of chart for closed series.
///
/// From a pole chart to infinity every negative power of `(z−φ)` becomes an
/// infinite descending series; those are kept down to `z^{−depth}` and the
/// exactness window records the cut. From infinity to a pole chart only
/// polynomials are accepted.
pub fn rechart_exact(f: &TruncatedSeries, to: ChartTag, depth: i64) -> Result<TruncatedSeries> {
    if !f.is_closed() {
        return Err(exhausted("exact rechart needs a closed series"));
    }
    match (f.chart, to) {
        (a, b) if a == b => Ok(f.clone()),
        (ChartTag::AtPole { center }, ChartTag::AtInfinity) => {
            let hi = f.hi().max(0);
            let lo = -depth.max(0);
            let mut coeffs = vec![ZERO; (hi - lo + 1).max(1) as usize];
            let mut truncated = false;
            for i in f.lo..=f.hi() {
                let c = f.coeff(i);
                if c == ZERO {
                    continue;
                }
                if i >= 0 {
                    for k in 0..=i {
                        coeffs[(k - lo) as usize] += c * binomial(i, k) * (-center).powi((i - k) as i32);
                    }
                } else {
                    let mut k = 0;
                    while i - k >= lo {
                        coeffs[(i - k - lo) as usize] += c * binomial(i, k) * (-center).powi(k as i32);
                        k += 1;
                    }
                    truncated = truncated || center != ZERO;
                }
            }
            let elo = if truncated { lo } else { -UNBOUNDED };
            Ok(TruncatedSeries::new(to, lo, coeffs, elo, UNBOUNDED))
        }
        (ChartTag::AtInfinity, ChartTag::AtPole { center }) => {
            if f.lo < 0 && f.support().is_some_and(|(l, _)| l < 0) {
                return Err(SeriesError::NormalForm("negative powers of z do not rechart to a pole chart".into()));
            }
            let hi = f.hi().max(0);
            let mut coeffs = vec![ZERO; (hi + 1) as usize];
            for k in 0..=hi {
                let c = f.coeff(k);
                for j in 0..=k {
                    coeffs[j as usize] += c * binomial(k, j) * center.powi((k - j) as i32);
                }
            }
            Ok(TruncatedSeries::polynomial(to, 0, coeffs))
        }
        _ => Err(SeriesError::ChartMismatch),
    }
}

/// Change of chart by sampling on Γ and re-extracting coefficients.
pub fn rechart(f: &TruncatedSeries, to: ChartTag, window: (i64, i64), n: usize) -> Result<TruncatedSeries> {
    samples_to_series(&f.eval_on_circle(n), to, window, DEFAULT_GUARD)
}

// ---------------------------------------------------------------------------
// Circle samples

static NODES: OnceLock<Mutex<HashMap<usize, Arc<Vec<C64>>>>> = OnceLock::new();

/// The nodes `z_k = exp(2πik/N)`.
pub fn nodes(n: usize) -> Arc<Vec<C64>> {
    let cache = NODES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("node cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new((0..n).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64)).collect()))
        .clone()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// Fourier coefficients `F_j` of `f(z) = Σ F_j z^j` on Γ, index `j mod N`.
pub fn fourier(values: &[C64]) -> Vec<C64> {
    let n = values.len();
    let (fwd, _) = fft_pair(n);
    let mut buf = values.to_vec();
    fwd.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|x| *x *= scale);
    buf
}

/// Inverse of [`fourier`].
pub fn synthesize(coeffs: &[C64]) -> Vec<C64> {
    let n = coeffs.len();
    let (_, inv) = fft_pair(n);
    let mut buf = coeffs.to_vec();
    inv.process(&mut buf);
    buf
}

/// Signed frequency of FFT bin `j`; the Nyquist bin counts as negative.
fn freq(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircleSamples {
    pub values: Vec<C64>,
    pub winding: Option<i64>,
}

impl CircleSamples {
    pub fn new(values: Vec<C64>) -> Self {
        CircleSamples { values, winding: None }
    }

    pub fn checked(values: Vec<C64>) -> Result<Self> {
        let n = values.len();
        if n < 32 || !n.is_power_of_two() {
            return Err(SeriesError::BadSampleCount(n));
        }
        Ok(Self::new(values))
    }

    pub fn constant(n: usize, c: C64) -> Self {
        Self::new(vec![c; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, ZERO)
    }

    /// Samples of `z` itself.
    pub fn identity(n: usize) -> Self {
        Self::new(nodes(n).to_vec())
    }

    pub fn from_fn(n: usize, f: impl Fn(C64) -> C64) -> Self {
        Self::new(nodes(n).iter().map(|&z| f(z)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        assert_eq!(self.len(), other.len(), "sample count mismatch");
        Self::new(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|v| v * c)
    }

    pub fn recip(&self) -> Self {
        self.map(|v| v.inv())
    }

    pub fn powi(&self, k: i32) -> Self {
        self.map(|v| v.powi(k))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Trapezoid rule for `(1/2πi)∮_Γ f dz`.
    pub fn contour_integral(&self) -> C64 {
        let z = nodes(self.len());
        let sum: C64 = self.values.iter().zip(z.iter()).map(|(v, zk)| v * zk).sum();
        sum / self.len() as f64
    }

    pub fn mean(&self) -> C64 {
        self.values.iter().sum::<C64>() / self.len() as f64
    }

    /// Part holomorphic inside Γ (`Plus`) or outside Γ and vanishing at
    /// infinity (`Minus`).
    pub fn project(&self, sign: Sign) -> Self {
        let n = self.len();
        let mut f = fourier(&self.values);
        for (j, c) in f.iter_mut().enumerate() {
            let keep = match sign {
                Sign::Plus => freq(j, n) >= 0,
                Sign::Minus => freq(j, n) < 0,
            };
            if !keep {
                *c = ZERO;
            }
        }
        Self::new(synthesize(&f))
    }

    pub fn plus(&self) -> Self {
        self.project(Sign::Plus)
    }

    pub fn minus(&self) -> Self {
        self.project(Sign::Minus)
    }

    /// Spectral `d/dz`.
    pub fn d_dz(&self) -> Self {
        let n = self.len();
        let mut f = fourier(&self.values);
        for (j, c) in f.iter_mut().enumerate() {
            let k = freq(j, n);
            *c *= if j == n / 2 { 0.0 } else { k as f64 };
        }
        let z = nodes(n);
        Self::new(synthesize(&f).iter().zip(z.iter()).map(|(v, zk)| v * zk.conj()).collect())
    }

    /// Formal coefficient `(1/2πi)∮ f (z−φ)^{−k−1} dz`.
    pub fn coefficient(&self, phi: C64, k: i64) -> C64 {
        let z = nodes(self.len());
        let s: C64 = self.values.iter().zip(z.iter()).map(|(v, zk)| v * zk * (zk - phi).powi((-k - 1) as i32)).sum();
        s / self.len() as f64
    }

    /// Coefficients for `k ∈ [lo, hi]` around `phi`.
    pub fn coefficients(&self, phi: C64, lo: i64, hi: i64) -> Vec<C64> {
        if hi < lo {
            return Vec::new();
        }
        let n = self.len();
        let z = nodes(n);
        let mut out = vec![ZERO; (hi - lo + 1) as usize];
        for (v, zk) in self.values.iter().zip(z.iter()) {
            let w = zk - phi;
            let winv = w.inv();
            // v·z·w^{−lo−1}, then successive multiplication by w^{−1}
            let mut term = v * zk * w.powi((-lo - 1) as i32);
            for slot in out.iter_mut() {
                *slot += term;
                term *= winv;
            }
        }
        out.iter_mut().for_each(|x| *x /= n as f64);
        out
    }

    /// `Σ_{k∈[lo,hi]} c_k (z−φ)^k` evaluated on the nodes.
    pub fn from_coeffs(n: usize, phi: C64, lo: i64, coeffs: &[C64]) -> Self {
        TruncatedSeries::polynomial(ChartTag::pole(phi), lo, coeffs.to_vec()).eval_on_circle(n)
    }

    /// Keeps `(z−φ)`-exponents `≥ a` (or `≤ b`) of the formal expansion.
    pub fn clip(&self, phi: C64, bound: Bound) -> Self {
        let n = self.len();
        match bound {
            Bound::AtLeast(a) => {
                let base = self.plus();
                if a <= 0 {
                    let c = self.coefficients(phi, a, -1);
                    &base + &Self::from_coeffs(n, phi, a, &c)
                } else {
                    let c = self.coefficients(phi, 0, a - 1);
                    &base - &Self::from_coeffs(n, phi, 0, &c)
                }
            }
            Bound::AtMost(b) => {
                let base = self.minus();
                if b >= 0 {
                    let c = self.coefficients(phi, 0, b);
                    &base + &Self::from_coeffs(n, phi, 0, &c)
                } else {
                    let c = self.coefficients(phi, b + 1, -1);
                    &base - &Self::from_coeffs(n, phi, b + 1, &c)
                }
            }
        }
    }

    /// Argument unwrapped from the principal value at `k = 0`, and the
    /// winding number by the discrete argument principle.
    pub fn unwrapped_arg(&self) -> Result<(Vec<f64>, i64)> {
        if let Some(k) = self.values.iter().position(|v| *v == ZERO || !v.is_finite()) {
            return Err(SeriesError::ZeroSample(k));
        }
        let n = self.len();
        let mut theta = Vec::with_capacity(n);
        theta.push(self.values[0].arg());
        for k in 1..n {
            let step = (self.values[k] / self.values[k - 1]).arg();
            theta.push(theta[k - 1] + step);
        }
        let total = theta[n - 1] + (self.values[0] / self.values[n - 1]).arg() - theta[0];
        let w = total / (2.0 * PI);
        let residual = (w - w.round()).abs();
        if residual >= 0.1 {
            return Err(SeriesError::WindingResidual(residual));
        }
        Ok((theta, w.round() as i64))
    }

    pub fn winding_number(&self) -> Result<i64> {
        Ok(self.unwrapped_arg()?.1)
    }

    pub fn with_winding(mut self) -> Result<Self> {
        self.winding = Some(self.winding_number()?);
        Ok(self)
    }
}

impl std::ops::Add for &CircleSamples {
    type Output = CircleSamples;
    fn add(self, rhs: Self) -> CircleSamples {
        self.zip(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub for &CircleSamples {
    type Output = CircleSamples;
    fn sub(self, rhs: Self) -> CircleSamples {
        self.zip(rhs, |a, b| a - b)
    }
}

impl std::ops::Mul for &CircleSamples {
    type Output = CircleSamples;
    fn mul(self, rhs: Self) -> CircleSamples {
        self.zip(rhs, |a, b| a * b)
    }
}

impl std::ops::Div for &CircleSamples {
    type Output = CircleSamples;
    fn div(self, rhs: Self) -> CircleSamples {
        self.zip(rhs, |a, b| a / b)
    }
}

impl std::ops::Neg for &CircleSamples {
    type Output = CircleSamples;
    fn neg(self) -> CircleSamples {
        self.map(|a| -a)
    }
}

impl std::ops::Mul<C64> for &CircleSamples {
    type Output = CircleSamples;
    fn mul(self, rhs: C64) -> CircleSamples {
        self.scale(rhs)
    }
}

impl std::ops::Mul<f64> for &CircleSamples {
    type Output = CircleSamples;
    fn mul(self, rhs: f64) -> CircleSamples {
        self.map(|a| a * rhs)
    }
}

/// `(1/2πi)∮_Γ f dz` for sampled `f`.
pub fn contour_integral(fs: &CircleSamples) -> C64 {
    fs.contour_integral()
}

/// Coefficients in `to` on `window`, with the exactness window shrunk by
/// `guard` on both sides.
pub fn samples_to_series(fs: &CircleSamples, to: ChartTag, window: (i64, i64), guard: i64) -> Result<TruncatedSeries> {
    let (lo, hi) = window;
    let half = (fs.len() / 2) as i64;
    if lo < -half || hi > half {
        return Err(SeriesError::WindowTooWide { lo, hi, n: fs.len() });
    }
    let coeffs = fs.coefficients(to.center(), lo, hi);
    Ok(TruncatedSeries::new(to, lo, coeffs, lo + guard, hi - guard))
}

/// Continuous branch of `f^α` along Γ anchored at the principal value at
/// `z = 1`. Fails when `winding·α` is not an integer unless `accept_cut`.
pub fn power_on_circle(fs: &CircleSamples, alpha: f64, accept_cut: bool) -> Result<CircleSamples> {
    let (theta, w) = fs.unwrapped_arg()?;
    let wa = w as f64 * alpha;
    let integral = (wa - wa.round()).abs() < 1e-9;
    if !integral && !accept_cut {
        return Err(SeriesError::Multivalued { winding: w, alpha });
    }
    let values = fs
        .values
        .iter()
        .zip(&theta)
        .map(|(v, th)| C64::from_polar(v.norm().powf(alpha), alpha * th))
        .collect();
    let mut out = CircleSamples::new(values);
    if integral {
        out.winding = Some(wa.round() as i64);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogMode {
    Strict,
    Cut,
}

/// Unwrapped logarithm anchored at the principal value at `z = 1`. In cut
/// mode the jump `2πi·winding` sits between the last node and the first and
/// the winding is recorded on the result.
pub fn log_on_circle(fs: &CircleSamples, mode: LogMode) -> Result<CircleSamples> {
    let (theta, w) = fs.unwrapped_arg()?;
    if mode == LogMode::Strict && w != 0 {
        return Err(SeriesError::StrictWinding(w));
    }
    let values = fs.values.iter().zip(&theta).map(|(v, th)| C64::new(v.norm().ln(), *th)).collect();
    let mut out = CircleSamples::new(values);
    out.winding = Some(w);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InversionKind {
    AtInfinity,
    AtPole,
}

/// Compositional inverse by iterative substitution.
///
/// `AtInfinity`: `f = z + Σ_{k≥1} f_k z^{−k}` in the chart at infinity; the
/// result is `z(χ) = χ + Σ r_k χ^{−k}` for `k ≤ depth`, as a series in `χ`.
///
/// `AtPole`: `f = c_{−1}(z−φ)^{−1} + c_0 + c_1(z−φ) + …`; the result is
/// `z(χ̂) = φ + Σ_{k=1}^{depth} e_k χ̂^{−k}`, as a series in `χ̂`.
pub fn lagrange_invert(f: &TruncatedSeries, kind: InversionKind, depth: usize) -> Result<TruncatedSeries> {
    let d = depth as i64;
    match kind {
        InversionKind::AtInfinity => {
            if f.chart != ChartTag::AtInfinity {
                return Err(SeriesError::NormalForm("expected the chart at infinity".into()));
            }
            if !f.is_exact_at(1) || f.support().map(|s| s.1) != Some(1) || (f.coeff(1) - ONE).norm() > 1e-12 {
                return Err(SeriesError::NormalForm("expected a monic z-term at the top".into()));
            }
            if !f.is_exact_at(0) || f.coeff(0).norm() > 1e-12 {
                return Err(SeriesError::NormalForm("constant term must vanish".into()));
            }
            if depth > 0 && !f.is_exact_at(-d) {
                return Err(exhausted("inversion depth exceeds exact window"));
            }
            // z = χ(1 + u(y)), y = 1/χ:  u = −Σ_k f_k y^{k+1} (1+u)^{−k}
            let n = depth + 2;
            let mut u = vec![ZERO; n];
            for _ in 0..n {
                let mut one_u = u.clone();
                one_u[0] = ONE;
                let mut next = vec![ZERO; n];
                for k in 1..=depth {
                    let fk = f.coeff(-(k as i64));
                    if fk == ZERO {
                        continue;
                    }
                    let p = ps_pow_unit(&one_u, -(k as f64), n);
                    for (j, pj) in p.iter().enumerate() {
                        if j + k + 1 < n {
                            next[j + k + 1] -= fk * pj;
                        }
                    }
                }
                u = next;
            }
            // z = χ + Σ_j u_j χ^{1−j}
            let mut coeffs = vec![ZERO; depth + 2];
            coeffs[depth + 1] = ONE;
            for j in 2..n {
                coeffs[depth + 1 - j] = u[j];
            }
            Ok(TruncatedSeries::new(ChartTag::AtInfinity, -d, coeffs, -d, UNBOUNDED))
        }
        InversionKind::AtPole => {
            let ChartTag::AtPole { center } = f.chart else {
                return Err(SeriesError::NormalForm("expected a pole chart".into()));
            };
            let (lo, _) = f.support().ok_or(SeriesError::VanishingLeading)?;
            if lo != -1 {
                return Err(SeriesError::NormalForm("expected a simple pole".into()));
            }
            if is_bounded(f.exact_lo) && f.exact_lo > -1 {
                return Err(exhausted("pole coefficient not exact"));
            }
            if depth > 1 && !f.is_exact_at(d - 2) {
                return Err(exhausted("inversion depth exceeds exact window"));
            }
            // w = y·H(w), H(w) = Σ_k c_{k−1} w^k
            let n = depth + 1;
            let h: Vec<C64> = (0..n as i64).map(|k| f.coeff(k - 1)).collect();
            let mut w = vec![ZERO; n];
            for _ in 0..n {
                let mut acc = vec![ZERO; n];
                for hk in h.iter().rev() {
                    acc = ps_mul(&acc, &w, n);
                    acc[0] += hk;
                }
                let mut next = vec![ZERO; n];
                next[1..n].copy_from_slice(&acc[..n - 1]);
                w = next;
            }
            let mut coeffs: Vec<C64> = w.into_iter().rev().collect();
            coeffs[depth] = center;
            Ok(TruncatedSeries::new(ChartTag::AtInfinity, -d, coeffs, -d, UNBOUNDED))
        }
    }
}

/// Pads or reads a closed-polynomial view of samples known to carry only
/// exponents in `[lo, hi]` around `phi`.
pub fn samples_to_polynomial(fs: &CircleSamples, phi: C64, lo: i64, hi: i64) -> TruncatedSeries {
    TruncatedSeries::polynomial(ChartTag::pole(phi), lo, fs.coefficients(phi, lo, hi))
}
