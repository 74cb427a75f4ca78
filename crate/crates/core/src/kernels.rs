//! Kernel functions, bandwidth rules and Nadaraya–Watson primitives.
//!
//! The same univariate quartic kernel serves as the calibration kernel `M`
//! and, through a product over coordinates, as the smoothing kernel `K_h` on
//! the reduced index `B̂ᵀw`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// `(15/16)(1 − u²)² 1{|u| ≤ 1}`.
    Quartic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub support_radius: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::QUARTIC
    }
}

impl KernelSpec {
    pub const QUARTIC: KernelSpec = KernelSpec {
        family: KernelFamily::Quartic,
        support_radius: 1.0,
    };

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Quartic => {
                if u.abs() > 1.0 {
                    return 0.0;
                }
                let s = 1.0 - u * u;
                15.0 / 16.0 * s * s
            }
        }
    }

    /// `∫K²(u) du`.
    pub fn square_integral(&self) -> f64 {
        match self.family {
            KernelFamily::Quartic => 5.0 / 7.0,
        }
    }

    /// `K(0)`, the peak of the kernel.
    pub fn at_origin(&self) -> f64 {
        self.eval(0.0)
    }

    /// `h^{-d} ∏ K(z_k / h)`.
    pub fn product_eval(&self, z: &[f64], h: f64) -> Result<f64> {
        check_product_args(z.len(), h)?;
        Ok(self.product_eval_unchecked(z, h))
    }

    #[inline]
    pub(crate) fn product_eval_unchecked(&self, z: &[f64], h: f64) -> f64 {
        let mut value = 1.0;
        for &zk in z {
            let k = self.eval(zk / h);
            if k == 0.0 {
                return 0.0;
            }
            value *= k / h;
        }
        value
    }

    /// `h^{-d} ∏ K²(z_k / h)`: the squared product kernel with a single
    /// `h^{-d}` factor, as used by the variance plug-ins.
    pub fn product_square_weight(&self, z: &[f64], h: f64) -> Result<f64> {
        check_product_args(z.len(), h)?;
        Ok(self.product_square_weight_unchecked(z, h))
    }

    #[inline]
    pub(crate) fn product_square_weight_unchecked(&self, z: &[f64], h: f64) -> f64 {
        let mut value = 1.0;
        for &zk in z {
            let k = self.eval(zk / h);
            if k == 0.0 {
                return 0.0;
            }
            value *= k * k / h;
        }
        value
    }

    /// `∫(∫K(u)K(u+v)du)² dv`, computed by Gauss–Legendre quadrature on the
    /// piecewise-polynomial self-convolution.
    pub fn convolution_square_integral(&self) -> f64 {
        let r = self.support_radius;
        let (nodes, weights) = gauss_legendre(24);
        // inner: ∫ K(u)K(u+v) du over the overlap [max(-r, -r-v), min(r, r-v)]
        let conv = |v: f64| -> f64 {
            let lo = (-r).max(-r - v);
            let hi = r.min(r - v);
            if hi <= lo {
                return 0.0;
            }
            integrate(&nodes, &weights, lo, hi, |u| self.eval(u) * self.eval(u + v))
        };
        // The convolution has a kink only at v = 0; integrate both halves.
        let half = integrate(&nodes, &weights, 0.0, 2.0 * r, |v| {
            let c = conv(v);
            c * c
        });
        2.0 * half
    }
}

fn check_product_args(d: usize, h: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidInput("product kernel needs dimension d >= 1".into()));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

fn integrate(nodes: &[f64], weights: &[f64], a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    // composite rule over 8 panels
    let panels = 8;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        let half = 0.5 * width;
        for (x, w) in nodes.iter().zip(weights) {
            total += w * half * f(mid + half * x);
        }
    }
    total
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A set of points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("point dimension must be >= 1".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates do not split into rows of length {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_scalars(values: &[f64]) -> Self {
        Self {
            dim: 1,
            coords: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Subset of rows `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PointSet {
        PointSet {
            dim: self.dim,
            coords: self.coords[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }
}

/// Nadaraya–Watson estimate at `query` with kernel `M_v`.
///
/// Returns [`Error::EmptyWindow`] when no abscissa lies within
/// `v · support_radius` of `query`.
pub fn nw_regression(
    kernel: &KernelSpec,
    abscissae: &[f64],
    ordinates: &[f64],
    v: f64,
    query: f64,
) -> Result<f64> {
    if abscissae.is_empty() || abscissae.len() != ordinates.len() {
        return Err(Error::InvalidInput(
            "nw_regression needs matching, nonempty abscissae and ordinates".into(),
        ));
    }
    if !(v > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {v}")));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&a, &o) in abscissae.iter().zip(ordinates) {
        let k = kernel.eval((query - a) / v) / v;
        num += k * o;
        den += k;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::EmptyWindow { query })
    }
}

/// Ordinate of the abscissa closest to `query`; ties go to the lower index.
pub fn nearest_ordinate(abscissae: &[f64], ordinates: &[f64], query: f64) -> f64 {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &a) in abscissae.iter().enumerate() {
        let d = (a - query).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    ordinates[best]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandwidthRegime {
    /// `h = c₁ n^{-1/(4+q̂)}`, `v = c₂ (N/2)^{-2/5}`.
    Standard,
    /// `h = c₂ n^{-1/(2+q̂)}`, `v = c₁ (N/2)^{-1/3}`.
    SmallLambda,
    /// `h = c n^{-1/(4+p)}`, `v = c (N/2)^{-2/5}` with `c = c₁`.
    Zheng,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub c1: f64,
    pub c2: f64,
    pub regime: BandwidthRegime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    /// Smoothing bandwidth on the reduced index.
    pub h: f64,
    /// Calibration bandwidth on the validation sample.
    pub v: f64,
}

impl BandwidthPlan {
    pub fn new(c1: f64, c2: f64, regime: BandwidthRegime) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) || !c1.is_finite() || !c2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "bandwidth constants must be positive, got c1 = {c1}, c2 = {c2}"
            )));
        }
        Ok(Self { c1, c2, regime })
    }

    pub fn standard(c: f64) -> Result<Self> {
        Self::new(c, c, BandwidthRegime::Standard)
    }

    /// Bandwidths for a test that halves the validation sample.
    pub fn resolve(&self, n: usize, big_n: usize, q_hat: usize, p: usize) -> Result<Bandwidths> {
        self.check(n, big_n, q_hat, p)?;
        let n = n as f64;
        let half = big_n as f64 / 2.0;
        let q = q_hat as f64;
        Ok(match self.regime {
            BandwidthRegime::Standard => Bandwidths {
                h: self.c1 * n.powf(-1.0 / (4.0 + q)),
                v: self.c2 * half.powf(-0.4),
            },
            BandwidthRegime::SmallLambda => Bandwidths {
                h: self.c2 * n.powf(-1.0 / (2.0 + q)),
                v: self.c1 * half.powf(-1.0 / 3.0),
            },
            BandwidthRegime::Zheng => Bandwidths {
                h: self.c1 * n.powf(-1.0 / (4.0 + p as f64)),
                v: self.c1 * half.powf(-0.4),
            },
        })
    }

    /// Bandwidths for the uncorrected statistic, whose calibration uses the
    /// whole validation sample: `v = c₂ N^{-2/5}`.
    pub fn resolve_full_sample(
        &self,
        n: usize,
        big_n: usize,
        q_hat: usize,
        p: usize,
    ) -> Result<Bandwidths> {
        let mut bw = self.resolve(n, big_n, q_hat, p)?;
        bw.v = self.c2 * (big_n as f64).powf(-0.4);
        Ok(bw)
    }

    fn check(&self, n: usize, big_n: usize, q_hat: usize, p: usize) -> Result<()> {
        if n < 2 || big_n < 2 {
            return Err(Error::InvalidInput(format!(
                "bandwidths need n >= 2 and N >= 2, got n = {n}, N = {big_n}"
            )));
        }
        if q_hat < 1 || q_hat > p {
            return Err(Error::InvalidInput(format!(
                "structural dimension {q_hat} outside [1, {p}]"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: KernelSpec = KernelSpec::QUARTIC;

    fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn quartic_values() {
        assert_eq!(K.eval(0.0), 0.9375);
        assert_eq!(K.eval(1.0), 0.0);
        assert_eq!(K.eval(-1.0), 0.0);
        assert_eq!(K.eval(0.5), 0.52734375);
        assert_eq!(K.eval(1.0001), 0.0);
    }

    #[test]
    fn quartic_integrals_by_quadrature() {
        let mass = simpson(-1.0, 1.0, 20_000, |u| K.eval(u));
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
        let sq = simpson(-1.0, 1.0, 20_000, |u| K.eval(u).powi(2));
        assert!((sq - K.square_integral()).abs() < 1e-10);
        assert!((K.square_integral() - 0.714286).abs() < 1e-6);
        assert_eq!(K.square_integral(), K.square_integral());
    }

    #[test]
    fn rescaled_square_integral() {
        let h = 2.0;
        let sq = simpson(-2.0, 2.0, 20_000, |u| (K.eval(u / h) / h).powi(2));
        assert!((sq - 0.5 * 5.0 / 7.0).abs() < 1e-10);
    }

    #[test]
    fn product_kernel_cases() {
        assert_eq!(K.product_eval(&[0.0], 1.0).unwrap(), 0.9375);
        assert!((K.product_eval(&[0.0, 0.0], 0.5).unwrap() - 3.515625).abs() < 1e-15);
        assert_eq!(K.product_eval(&[2.0, 0.0], 1.0).unwrap(), 0.0);
        assert!(K.product_eval(&[], 1.0).is_err());
        assert!(K.product_eval(&[0.1], 0.0).is_err());
        assert!(K.product_eval(&[0.1], -1.0).is_err());
        for &z in &[-0.7, -0.2, 0.0, 0.31, 0.9] {
            let h = 0.8;
            assert_eq!(K.product_eval(&[z], h).unwrap(), K.eval(z / h) / h);
        }
    }

    #[test]
    fn nw_single_point_and_constant() {
        let v = nw_regression(&K, &[0.3], &[7.0], 0.1, 0.3).unwrap();
        assert_eq!(v, 7.0);
        let xs = [0.0, 0.1, 0.2, 0.3, 0.4];
        let ys = [5.0; 5];
        assert!((nw_regression(&K, &xs, &ys, 0.15, 0.22).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn nw_three_term_hand_expansion() {
        let v = 0.25;
        // M_v(0 - a) for a in {-0.1, 0, 0.1}
        let m_side = 15.0 / 16.0 * (1.0 - 0.16_f64).powi(2) / v;
        let m_mid = 15.0 / 16.0 / v;
        let expected = (m_side * 1.0 + m_mid * 2.0 + m_side * 3.0) / (2.0 * m_side + m_mid);
        let got = nw_regression(&K, &[-0.1, 0.0, 0.1], &[1.0, 2.0, 3.0], v, 0.0).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 2.0).abs() < 1e-14);
        let skew = nw_regression(&K, &[-0.1, 0.0, 0.1], &[1.0, 2.0, 4.0], v, 0.0).unwrap();
        let expected = (m_side * 1.0 + m_mid * 2.0 + m_side * 4.0) / (2.0 * m_side + m_mid);
        assert!((skew - expected).abs() < 1e-14);
    }

    #[test]
    fn nw_empty_window() {
        let err = nw_regression(&K, &[0.0, 0.1], &[1.0, 2.0], 0.05, 1.0).unwrap_err();
        assert!(matches!(err, Error::EmptyWindow { .. }));
        assert_eq!(nearest_ordinate(&[0.0, 0.1], &[1.0, 2.0], 1.0), 2.0);
    }

    #[test]
    fn bandwidth_examples() {
        let plan = BandwidthPlan::standard(1.6).unwrap();
        let bw = plan.resolve(100, 400, 1, 2).unwrap();
        assert!((bw.h - 1.6 * 100f64.powf(-0.2)).abs() < 1e-12);
        assert!((bw.h - 0.6369).abs() < 1e-4);
        assert!((bw.v - 1.6 * 200f64.powf(-0.4)).abs() < 1e-12);
        assert!((bw.v - 0.1922).abs() < 1e-4);
        assert!(plan.resolve(1, 400, 1, 2).is_err());
        assert!(plan.resolve(100, 400, 0, 2).is_err());
        assert!(plan.resolve(100, 400, 3, 2).is_err());

        let zheng = BandwidthPlan::new(3.9, 3.9, BandwidthRegime::Zheng).unwrap();
        let bw = zheng.resolve(100, 400, 1, 8).unwrap();
        assert!((bw.h - 2.6570).abs() < 1e-4);

        let full = plan.resolve_full_sample(100, 400, 1, 2).unwrap();
        assert!((full.v - 1.6 * 400f64.powf(-0.4)).abs() < 1e-12);

        let small = BandwidthPlan::new(2.0, 2.0, BandwidthRegime::SmallLambda).unwrap();
        let bw = small.resolve(1000, 100, 1, 2).unwrap();
        assert!((bw.h - 2.0 * 1000f64.powf(-1.0 / 3.0)).abs() < 1e-12);
        assert!((bw.v - 2.0 * 50f64.powf(-1.0 / 3.0)).abs() < 1e-12);

        assert!(BandwidthPlan::new(0.0, 1.0, BandwidthRegime::Standard).is_err());
    }

    #[test]
    fn convolution_constant_matches_exact_and_midpoint_oracles() {
        let c = K.convolution_square_integral();
        // exact value of the piecewise-polynomial integral
        assert!((c - 1_168_780.0 / 2_263_261.0).abs() < 1e-12);
        let m = 2000;
        let du = 2.0 / m as f64;
        let dv = 4.0 / m as f64;
        let mut total = 0.0;
        for j in 0..m {
            let v = -2.0 + (j as f64 + 0.5) * dv;
            let g: f64 = (0..m)
                .map(|i| -1.0 + (i as f64 + 0.5) * du)
                .map(|u| K.eval(u) * K.eval(u + v))
                .sum::<f64>()
                * du;
            total += g * g * dv;
        }
        assert!((c - total).abs() < 1e-4, "{c} vs {total}");
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(24);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kernel_is_even_and_nonnegative(u in -3.0f64..3.0) {
                prop_assert_eq!(K.eval(u), K.eval(-u));
                prop_assert!(K.eval(u) >= 0.0);
                if u.abs() > 1.0 { prop_assert_eq!(K.eval(u), 0.0); }
            }

            #[test]
            fn nw_is_convex_combination(
                pts in proptest::collection::vec((-1.0f64..1.0, -5.0f64..5.0), 1..30),
                q in -1.0f64..1.0,
                v in 0.05f64..1.0,
            ) {
                let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                if let Ok(r) = nw_regression(&K, &xs, &ys, v, q) {
                    let inside: Vec<f64> = xs.iter().zip(&ys)
                        .filter(|(x, _)| ((q - **x) / v).abs() < 1.0)
                        .map(|(_, y)| *y).collect();
                    let lo = inside.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(r >= lo - 1e-12 && r <= hi + 1e-12);
                }
            }

            #[test]
            fn bandwidths_decrease_in_sizes(
                c in 0.1f64..5.0, n in 2usize..5000, big_n in 2usize..5000, q in 1usize..4,
            ) {
                for regime in [BandwidthRegime::Standard, BandwidthRegime::SmallLambda, BandwidthRegime::Zheng] {
                    let plan = BandwidthPlan::new(c, c, regime).unwrap();
                    let a = plan.resolve(n, big_n, q, 4).unwrap();
                    let b = plan.resolve(n + 1, big_n + 1, q, 4).unwrap();
                    prop_assert!(b.h < a.h && b.v < a.v);
                    prop_assert!(a.h > 0.0 && a.v > 0.0);
                }
            }
        }
    }
}
