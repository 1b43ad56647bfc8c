//! Least-squares fits of the degree and path-length model families, and the
//! scale-free / small-world comparison built on top of them.
//!
//! * Gaussian: `P(k) = a·exp(-((k - b)/c)²)`
//! * power: `y = a·x^b + c`
//! * logarithmic: `y = a·ln(x) + c`
//! * power law: `P(k) = a·k^(-γ)`, with γ stored in the `b` slot

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::metrics::DegreeHistogram;

#[derive(Debug, Clone, PartialEq)]
pub struct XYSeries {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl XYSeries {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InsufficientData("xs and ys differ in length".into()));
        }
        if xs.len() < 3 {
            return Err(Error::InsufficientData(format!("{} points, need 3", xs.len())));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample".into()));
        }
        Ok(XYSeries { xs, ys })
    }

    pub fn from_fn(xs: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(xs.to_vec(), xs.iter().map(|&x| f(x)).collect())
    }

    /// Every degree from the smallest to the largest observed one, with
    /// empty interior bins as zero probability.
    pub fn from_histogram(hist: &DegreeHistogram) -> Result<Self> {
        let lo = *hist.counts.keys().next().expect("histogram is never empty");
        let hi = *hist.counts.keys().next_back().expect("histogram is never empty");
        let xs: Vec<f64> = (lo..=hi).map(|k| k as f64).collect();
        let ys = (lo..=hi).map(|k| hist.prob(k)).collect();
        Self::new(xs, ys)
    }

    fn require_positive_increasing(&self) -> Result<()> {
        if self.xs.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("x must be positive".into()));
        }
        if self.xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("x must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gaussian,
    Power,
    Log,
    PowerLaw,
}

impl ModelKind {
    pub fn eval(self, p: &[f64; 3], x: f64) -> f64 {
        let [a, b, c] = *p;
        match self {
            ModelKind::Gaussian => a * (-((x - b) / c).powi(2)).exp(),
            ModelKind::Power => a * x.powf(b) + c,
            ModelKind::Log => a * x.ln() + c,
            ModelKind::PowerLaw => a * x.powf(-b),
        }
    }

    fn gradient(self, p: &[f64; 3], x: f64) -> [f64; 3] {
        let [a, b, c] = *p;
        match self {
            ModelKind::Gaussian => {
                let u = (x - b) / c;
                let e = (-u * u).exp();
                [e, 2.0 * a * e * u / c, 2.0 * a * e * u * u / c]
            }
            ModelKind::Power => {
                let xb = x.powf(b);
                [xb, a * xb * x.ln(), 1.0]
            }
            ModelKind::Log => [x.ln(), 0.0, 1.0],
            ModelKind::PowerLaw => {
                let xb = x.powf(-b);
                [xb, -a * xb * x.ln(), 0.0]
            }
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::Power => "power",
            ModelKind::Log => "log",
            ModelKind::PowerLaw => "powerlaw",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: ModelKind,
    pub params: [f64; 3],
    /// `None` when the data has zero variance.
    pub r_square: Option<f64>,
    pub sse: f64,
    pub converged: bool,
}

impl FitResult {
    fn assess(model: ModelKind, params: [f64; 3], series: &XYSeries, converged: bool) -> Self {
        let (sse, r_square) = goodness(model, &params, series);
        FitResult {
            model,
            params,
            r_square,
            sse,
            converged,
        }
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.model.eval(&self.params, x)
    }

    pub const CSV_HEADER: [&'static str; 7] =
        ["model", "a", "b_or_gamma", "c", "r_square", "sse", "converged"];

    pub fn csv_record(&self) -> Vec<String> {
        let [a, b, c] = self.params;
        vec![
            self.model.to_string(),
            a.to_string(),
            b.to_string(),
            c.to_string(),
            self.r_square.map(|r| r.to_string()).unwrap_or_else(|| "NaN".into()),
            self.sse.to_string(),
            self.converged.to_string(),
        ]
    }
}

pub fn write_fits<W: Write>(fits: &[FitResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FitResult::CSV_HEADER)?;
    for f in fits {
        w.write_record(f.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

/// `(SSE, R²)` of `model` on `series` in the original data space.
pub fn goodness(model: ModelKind, params: &[f64; 3], series: &XYSeries) -> (f64, Option<f64>) {
    let n = series.ys.len() as f64;
    let mean = series.ys.iter().sum::<f64>() / n;
    let sst: f64 = series.ys.iter().map(|y| (y - mean).powi(2)).sum();
    let sse: f64 = series
        .xs
        .iter()
        .zip(&series.ys)
        .map(|(&x, &y)| (y - model.eval(params, x)).powi(2))
        .sum();
    let r_square = (sst > 0.0).then(|| 1.0 - sse / sst);
    (sse, r_square)
}

pub mod lm {
    //! Levenberg-Marquardt for three-parameter models.

    use super::{ModelKind, XYSeries};

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Outcome {
        pub params: [f64; 3],
        pub sse: f64,
        pub converged: bool,
        pub iterations: usize,
    }

    const MAX_ITER: usize = 2000;

    fn sse(model: ModelKind, p: &[f64; 3], s: &XYSeries) -> f64 {
        let v: f64 = s
            .xs
            .iter()
            .zip(&s.ys)
            .map(|(&x, &y)| (y - model.eval(p, x)).powi(2))
            .sum();
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    /// Solve `m·x = rhs` for the `active` unknowns by Gaussian elimination;
    /// inactive unknowns stay zero.
    fn solve(m: [[f64; 3]; 3], rhs: [f64; 3], active: &[usize]) -> Option<[f64; 3]> {
        let k = active.len();
        let mut a = [[0.0; 4]; 3];
        for (r, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                a[r][c] = m[i][j];
            }
            a[r][k] = rhs[i];
        }
        for col in 0..k {
            let piv = (col..k).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
            if a[piv][col].abs() < f64::MIN_POSITIVE {
                return None;
            }
            a.swap(col, piv);
            for r in 0..k {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let mut out = [0.0; 3];
        for (r, &i) in active.iter().enumerate() {
            out[i] = a[r][k] / a[r][r];
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    pub fn minimize(model: ModelKind, series: &XYSeries, start: [f64; 3]) -> Outcome {
        let active: &[usize] = match model {
            ModelKind::Log => &[0, 2],
            ModelKind::PowerLaw => &[0, 1],
            _ => &[0, 1, 2],
        };
        let mut p = start;
        let mut cost = sse(model, &p, series);
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < MAX_ITER && cost.is_finite() {
            iterations += 1;
            let mut jtj = [[0.0; 3]; 3];
            let mut jtr = [0.0; 3];
            for (&x, &y) in series.xs.iter().zip(&series.ys) {
                let g = model.gradient(&p, x);
                let r = y - model.eval(&p, x);
                for i in 0..3 {
                    jtr[i] += g[i] * r;
                    for j in 0..3 {
                        jtj[i][j] += g[i] * g[j];
                    }
                }
            }
            let grad_norm = active.iter().map(|&i| jtr[i].abs()).fold(0.0, f64::max);
            if cost == 0.0 || grad_norm < 1e-300 {
                converged = true;
                break;
            }
            let mut accepted = false;
            while lambda < 1e30 {
                let mut damped = jtj;
                for &i in active {
                    damped[i][i] += lambda * jtj[i][i].max(1e-12);
                }
                let Some(step) = solve(damped, jtr, active) else {
                    lambda *= 10.0;
                    continue;
                };
                let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
                let trial_cost = sse(model, &trial, series);
                if trial_cost < cost {
                    let rel_drop = (cost - trial_cost) / cost;
                    let step_small = active
                        .iter()
                        .all(|&i| step[i].abs() <= 1e-13 * (p[i].abs() + 1e-13));
                    p = trial;
                    cost = trial_cost;
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    if rel_drop < 1e-15 || step_small {
                        converged = true;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                // no descent direction left at machine precision
                converged = true;
                break;
            }
            if converged {
                break;
            }
        }
        Outcome {
            params: p,
            sse: cost,
            converged,
            iterations,
        }
    }
}

fn best_of(model: ModelKind, series: &XYSeries, starts: impl IntoIterator<Item = [f64; 3]>) -> FitResult {
    let mut best: Option<lm::Outcome> = None;
    let mut any_converged = false;
    for start in starts {
        let out = lm::minimize(model, series, start);
        any_converged |= out.converged && out.sse.is_finite();
        if best.map_or(true, |b| out.sse < b.sse) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one start");
    let mut params = best.params;
    if model == ModelKind::Gaussian {
        // the model only depends on c²
        params[2] = params[2].abs();
    }
    FitResult::assess(model, params, series, any_converged && best.sse.is_finite())
}

/// Gaussian fit over a fixed 3×3×3 start grid.
pub fn fit_gaussian(series: &XYSeries) -> Result<FitResult> {
    if series.xs.iter().any(|&x| x < 0.0) {
        return Err(Error::Domain("gaussian degree model is defined for k >= 0".into()));
    }
    let y_max = series.ys.iter().copied().fold(f64::MIN, f64::max);
    let x_min = series.xs.iter().copied().fold(f64::MAX, f64::min);
    let x_max = series.xs.iter().copied().fold(f64::MIN, f64::max);
    let x_mean = series.xs.iter().sum::<f64>() / series.xs.len() as f64;
    let spread = (x_max - x_min).max(1.0);
    let mut starts = Vec::with_capacity(27);
    for a in [y_max / 2.0, y_max, 2.0 * y_max] {
        for b in [x_min, x_mean, x_max] {
            for c in [spread / 4.0, spread / 2.0, spread] {
                starts.push([a, b, c]);
            }
        }
    }
    Ok(best_of(ModelKind::Gaussian, series, starts))
}

pub fn fit_gaussian_histogram(hist: &DegreeHistogram) -> Result<FitResult> {
    fit_gaussian(&XYSeries::from_histogram(hist)?)
}

/// Ordinary least squares `y = slope·u + intercept`.
fn linear_ls(us: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = us.len() as f64;
    let mu = us.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let suu: f64 = us.iter().map(|u| (u - mu).powi(2)).sum();
    if suu <= 0.0 {
        return None;
    }
    let suy: f64 = us.iter().zip(ys).map(|(u, y)| (u - mu) * (y - my)).sum();
    let slope = suy / suu;
    Some((slope, my - slope * mu))
}

/// Power fit. Each start fixes the exponent and solves `(a, c)` linearly
/// before the joint refinement.
pub fn fit_power(series: &XYSeries) -> Result<FitResult> {
    series.require_positive_increasing()?;
    const EXPONENTS: [f64; 12] = [-3.0, -2.0, -1.0, -0.5, -0.25, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.5];
    let starts: Vec<[f64; 3]> = EXPONENTS
        .iter()
        .map(|&b| {
            let basis: Vec<f64> = series.xs.iter().map(|x| x.powf(b)).collect();
            let (a, c) = linear_ls(&basis, &series.ys).unwrap_or((1.0, 0.0));
            [a, b, c]
        })
        .collect();
    Ok(best_of(ModelKind::Power, series, starts))
}

/// Logarithmic fit; exact linear least squares in `ln x`.
pub fn fit_log(series: &XYSeries) -> Result<FitResult> {
    series.require_positive_increasing()?;
    let us: Vec<f64> = series.xs.iter().map(|x| x.ln()).collect();
    let (a, c) = linear_ls(&us, &series.ys).ok_or_else(|| Error::InsufficientData("x has no spread".into()))?;
    Ok(FitResult::assess(ModelKind::Log, [a, 0.0, c], series, true))
}

/// Power-law fit by log-log linear regression over `k >= 1, P(k) > 0`.
/// SSE and R² are reported in the original space on those points.
pub fn fit_powerlaw(series: &XYSeries) -> Result<FitResult> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = series
        .xs
        .iter()
        .zip(&series.ys)
        .filter(|(&x, &y)| x >= 1.0 && y > 0.0)
        .map(|(&x, &y)| (x, y))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable power-law points, need 3",
            xs.len()
        )));
    }
    let us: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let vs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (slope, intercept) =
        linear_ls(&us, &vs).ok_or_else(|| Error::InsufficientData("single usable degree".into()))?;
    let used = XYSeries { xs, ys };
    Ok(FitResult::assess(ModelKind::PowerLaw, [intercept.exp(), -slope, 0.0], &used, true))
}

pub fn fit_powerlaw_histogram(hist: &DegreeHistogram) -> Result<FitResult> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = hist.probs().into_iter().unzip();
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!("{} distinct degrees", xs.len())));
    }
    fit_powerlaw(&XYSeries::new(xs, ys)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologyVerdict {
    pub scale_free: bool,
    pub small_world_indicated: bool,
}

/// Scale-free iff the power law explains the degrees strictly better than
/// the Gaussian; small-world iff the log fit of path length is at least as
/// good as the power fit. A missing R² loses every comparison.
pub fn classify_topology(
    degree_fit_gauss: &FitResult,
    degree_fit_pl: &FitResult,
    aspl_log_fit: &FitResult,
    aspl_pow_fit: &FitResult,
) -> TopologyVerdict {
    let r2 = |f: &FitResult| f.r_square.unwrap_or(f64::NEG_INFINITY);
    TopologyVerdict {
        scale_free: r2(degree_fit_pl) > r2(degree_fit_gauss),
        small_world_indicated: r2(aspl_log_fit) >= r2(aspl_pow_fit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn degrees(hi: u32) -> Vec<f64> {
        (0..=hi).map(f64::from).collect()
    }

    fn areas() -> Vec<f64> {
        (1..=64).map(|i| i as f64 * 0.25).collect()
    }

    fn close(p: [f64; 3], q: [f64; 3], tol: f64) -> bool {
        p.iter().zip(&q).all(|(a, b)| (a - b).abs() <= tol)
    }

    #[test]
    fn gaussian_recovers_generator() {
        for truth in [[0.1932, 3.728, 2.924], [0.5315, -0.1743, 1.74]] {
            let s = XYSeries::from_fn(&degrees(15), |k| ModelKind::Gaussian.eval(&truth, k)).unwrap();
            let fit = fit_gaussian(&s).unwrap();
            assert!(close(fit.params, truth, 1e-4), "{fit:?}");
            assert!(fit.sse < 1e-12);
            assert!(fit.converged);
        }
    }

    #[test]
    fn gaussian_constant_series_has_no_r_square() {
        let s = XYSeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.25; 4]).unwrap();
        let fit = fit_gaussian(&s).unwrap();
        assert_eq!(fit.r_square, None);
        assert!(fit.sse.is_finite());
    }

    #[test]
    fn power_recovers_generators() {
        let truth = [6.505, 0.462, -1.044];
        let s = XYSeries::from_fn(&areas(), |x| ModelKind::Power.eval(&truth, x)).unwrap();
        let fit = fit_power(&s).unwrap();
        assert!(close(fit.params, truth, 1e-4), "{fit:?}");

        let s = XYSeries::from_fn(&[1.0, 2.0, 3.0, 4.0, 5.0], |x| x).unwrap();
        let fit = fit_power(&s).unwrap();
        assert!(close(fit.params, [1.0, 1.0, 0.0], 1e-9), "{fit:?}");
        assert!(fit.sse < 1e-20);

        let truth = [-0.4101, -0.3173, 1.557];
        let s = XYSeries::from_fn(&areas(), |x| ModelKind::Power.eval(&truth, x)).unwrap();
        let fit = fit_power(&s).unwrap();
        assert!(close(fit.params, truth, 1e-3), "{fit:?}");
    }

    #[test]
    fn log_fit_is_exact() {
        let truth = [0.08554, 0.0, 1.162];
        let s = XYSeries::from_fn(&areas(), |x| ModelKind::Log.eval(&truth, x)).unwrap();
        let fit = fit_log(&s).unwrap();
        assert!(close(fit.params, truth, 1e-12));
        assert!(fit.sse < 1e-20);

        let s = XYSeries::new(vec![1.0, 2.0, 3.0], vec![2.0; 3]).unwrap();
        let fit = fit_log(&s).unwrap();
        assert_eq!(fit.params[0], 0.0);
        assert!((fit.params[2] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn log_loses_to_power_on_sqrt_data() {
        let xs: Vec<f64> = (1..=16).map(f64::from).collect();
        let s = XYSeries::from_fn(&xs, f64::sqrt).unwrap();
        let lg = fit_log(&s).unwrap().r_square.unwrap();
        let pw = fit_power(&s).unwrap().r_square.unwrap();
        assert!(lg < pw, "log {lg} power {pw}");
    }

    #[test]
    fn powerlaw_fits() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let z: f64 = xs.iter().map(|k| k.powi(-2)).sum();
        let s = XYSeries::from_fn(&xs, |k| k.powi(-2) / z).unwrap();
        let fit = fit_powerlaw(&s).unwrap();
        assert!((fit.params[1] - 2.0).abs() < 1e-6);

        let truth = [0.1932, 3.728, 2.924];
        let s = XYSeries::from_fn(&degrees(15), |k| ModelKind::Gaussian.eval(&truth, k)).unwrap();
        let pl = fit_powerlaw(&s).unwrap();
        let g = fit_gaussian(&s).unwrap();
        assert!(pl.r_square.unwrap() < g.r_square.unwrap());

        let single = DegreeHistogram::from_degrees([4, 4, 4]).unwrap();
        assert!(fit_powerlaw_histogram(&single).is_err());
    }

    fn with_r2(model: ModelKind, r2: f64) -> FitResult {
        FitResult {
            model,
            params: [0.0; 3],
            r_square: Some(r2),
            sse: 0.0,
            converged: true,
        }
    }

    #[test]
    fn topology_rules() {
        let v = classify_topology(
            &with_r2(ModelKind::Gaussian, 0.994),
            &with_r2(ModelKind::PowerLaw, 0.62),
            &with_r2(ModelKind::Log, 0.9594),
            &with_r2(ModelKind::Power, 0.9753),
        );
        assert!(!v.scale_free);
        assert!(!v.small_world_indicated);
        let tie = classify_topology(
            &with_r2(ModelKind::Gaussian, 0.9),
            &with_r2(ModelKind::PowerLaw, 0.9),
            &with_r2(ModelKind::Log, 0.9),
            &with_r2(ModelKind::Power, 0.9),
        );
        assert!(tie.small_world_indicated);
        assert!(!tie.scale_free);
    }

    #[test]
    fn refit_from_optimum_does_not_increase_sse() {
        let truth = [3.381, 0.6605, 1.523];
        let xs = areas();
        let noisy: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ModelKind::Power.eval(&truth, x) + 0.05 * ((i * 7919 % 13) as f64 - 6.0))
            .collect();
        let s = XYSeries::new(xs, noisy).unwrap();
        let fit = fit_power(&s).unwrap();
        let again = lm::minimize(ModelKind::Power, &s, fit.params);
        assert!(again.sse <= fit.sse);
        assert_eq!(fit_power(&s).unwrap(), fit);
    }

    #[test]
    fn fit_csv_row() {
        let f = with_r2(ModelKind::Gaussian, 0.5);
        let mut buf = Vec::new();
        write_fits(&[f], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model,a,b_or_gamma,c,r_square,sse,converged\ngaussian,0,0,0,0.5,0,true\n"
        );
    }

    proptest! {
        #[test]
        fn log_fit_solves_normal_equations(ys in proptest::collection::vec(-10.0f64..10.0, 3..20)) {
            let xs: Vec<f64> = (1..=ys.len()).map(|i| i as f64 * 0.7).collect();
            let s = XYSeries::new(xs.clone(), ys.clone()).unwrap();
            let fit = fit_log(&s).unwrap();
            let (a, c) = (fit.params[0], fit.params[2]);
            // gradient of SSE vanishes: sum r = 0 and sum r·ln x = 0
            let r: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - a * x.ln() - c).collect();
            let g0: f64 = r.iter().sum();
            let g1: f64 = r.iter().zip(&xs).map(|(r, x)| r * x.ln()).sum();
            prop_assert!(g0.abs() < 1e-9 && g1.abs() < 1e-9);
        }
    }
}
