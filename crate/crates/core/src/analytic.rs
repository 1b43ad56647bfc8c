//! Closed-form and quadrature references: the clustering coefficient of
//! disc-range geometric graphs in two and one dimensions, the Gaussian
//! degree model and the degree-threshold tail probabilities derived from it.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fitting::{FitResult, ModelKind};

/// Nodes and weights of the 7-point Gauss / 15-point Kronrod pair on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let mut stack = vec![(a, b, tol)];
    let mut total = 0.0;
    while let Some((lo, hi, t)) = stack.pop() {
        let (value, err) = gauss_kronrod(&f, lo, hi);
        if err <= t || (hi - lo) < 1e-12 * (b - a).abs() {
            total += value;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, t / 2.0));
            stack.push((mid, hi, t / 2.0));
        }
    }
    total
}

const QUAD_TOL: f64 = 1e-9;

/// Integrand of the 2-D clustering coefficient at neighbour distance `x`:
/// the density of the distance of a uniform point in the disc times the
/// fraction of the disc shared with the neighbour's own disc.
pub fn clustering_2d_integrand(x: f64, r: f64) -> f64 {
    let lens = 2.0 * r * r * (x / (2.0 * r)).acos() - 0.5 * x * (4.0 * r * r - x * x).sqrt();
    2.0 * x / (r * r) * lens / (PI * r * r)
}

pub fn clustering_2d_with_radius(r: f64) -> f64 {
    integrate(|x| clustering_2d_integrand(x, r), 0.0, r, QUAD_TOL * r)
}

/// Expected clustering of a 2-D disc-range geometric graph (≈ 0.5865).
pub fn clustering_2d() -> f64 {
    clustering_2d_with_radius(1.0)
}

/// `1 - 3√3/(4π)`, the value the 2-D integral evaluates to.
pub fn clustering_2d_closed_form() -> f64 {
    1.0 - 3.0 * 3f64.sqrt() / (4.0 * PI)
}

pub fn clustering_1d_integrand(x: f64, r: f64) -> f64 {
    (2.0 * r - x) / (2.0 * r) / r
}

pub fn clustering_1d_quadrature(r: f64) -> f64 {
    integrate(|x| clustering_1d_integrand(x, r), 0.0, r, 1e-14)
}

/// Antiderivative `F(x) = (x - x²/(4r)) / r` evaluated over `[0, r]`.
pub fn clustering_1d_antiderivative(r: f64) -> f64 {
    let f = |x: f64| (x - x * x / (4.0 * r)) / r;
    f(r) - f(0.0)
}

/// Expected clustering of a 1-D interval-range geometric graph.
pub fn clustering_1d() -> f64 {
    0.75
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl MonteCarloEstimate {
    fn from_hits(hits: u64, samples: u64) -> Self {
        let p = hits as f64 / samples as f64;
        MonteCarloEstimate {
            value: p,
            std_error: (p * (1.0 - p) / samples as f64).sqrt(),
            samples,
        }
    }

    pub fn within_sigmas(&self, reference: f64, sigmas: f64) -> bool {
        (self.value - reference).abs() <= sigmas * self.std_error.max(f64::EPSILON)
    }
}

fn unit_disc_point<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    loop {
        let x = rng.gen_range(-1.0..1.0);
        let y = rng.gen_range(-1.0..1.0);
        if x * x + y * y <= 1.0 {
            return (x, y);
        }
    }
}

/// Fraction of point pairs, uniform in the unit disc around a common node,
/// that lie within unit distance of each other.
pub fn monte_carlo_2d<R: Rng + ?Sized>(samples: u64, rng: &mut R) -> MonteCarloEstimate {
    let hits = (0..samples)
        .filter(|_| {
            let (ax, ay) = unit_disc_point(rng);
            let (bx, by) = unit_disc_point(rng);
            (ax - bx).powi(2) + (ay - by).powi(2) <= 1.0
        })
        .count() as u64;
    MonteCarloEstimate::from_hits(hits, samples)
}

pub fn monte_carlo_1d<R: Rng + ?Sized>(samples: u64, rng: &mut R) -> MonteCarloEstimate {
    let hits = (0..samples)
        .filter(|_| {
            let a: f64 = rng.gen_range(-1.0..=1.0);
            let b: f64 = rng.gen_range(-1.0..=1.0);
            (a - b).abs() <= 1.0
        })
        .count() as u64;
    MonteCarloEstimate::from_hits(hits, samples)
}

pub fn gaussian_model_eval(k: f64, a: f64, b: f64, c: f64) -> Result<f64> {
    if k < 0.0 {
        return Err(Error::Domain(format!("degree {k} is negative")));
    }
    if c == 0.0 {
        return Err(Error::Domain("width c must be non-zero".into()));
    }
    Ok(ModelKind::Gaussian.eval(&[a, b, c], k))
}

/// `P(degree > threshold)` under a Gaussian degree fit, renormalised over
/// the integers `k >= 0`.
pub fn prob_degree_above(threshold: i64, fit: &FitResult) -> Result<f64> {
    if fit.model != ModelKind::Gaussian {
        return Err(Error::Domain(format!("expected a gaussian fit, got {}", fit.model)));
    }
    let [a, b, c] = fit.params;
    if c == 0.0 || a <= 0.0 {
        return Err(Error::Domain("degenerate gaussian parameters".into()));
    }
    let mut total = 0.0;
    let mut above = 0.0;
    let mut k = 0i64;
    loop {
        let p = ModelKind::Gaussian.eval(&fit.params, k as f64);
        total += p;
        if k > threshold {
            above += p;
        }
        // beyond the peak the remaining tail is below 1e-12 once terms are
        // this small relative to the accumulated mass
        if k as f64 > b && p < 1e-16 * total {
            break;
        }
        k += 1;
    }
    Ok(above / total)
}
