use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use vanetsci::analytic::{clustering_1d, clustering_2d};
use vanetsci::comm_graph::{build_graph, RangeModel};
use vanetsci::fitting::{
    classify_topology, fit_gaussian_histogram, fit_log, fit_power, fit_powerlaw_histogram, FitResult,
    XYSeries,
};
use vanetsci::metrics::{degree_distribution, DegreeHistogram, MetricReport, write_reports};
use vanetsci::scenario::{generate_highway, generate_urban, HighwayConfig, Placement, UrbanConfig};
use vanetsci::sim::Stat;

use crate::opts::{create, parse_list, Checks, Layered};
use crate::AnalyzeArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Urban,
    Highway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Degree,
    Aspl,
    Clustering,
    Connectivity,
}

/// A fully resolved sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: String,
    pub family: Family,
    pub kind: Kind,
    pub densities: Vec<f64>,
    /// Areas (km²) or lengths (km).
    pub scales: Vec<f64>,
    pub seeds: usize,
    pub base_seed: u64,
    pub placement: Placement,
}

const URBAN_DENSITIES: [f64; 3] = [10.0, 60.0, 80.0];
const HIGHWAY_DENSITIES: [f64; 3] = [3.9, 26.0, 44.9];

impl ExperimentPreset {
    pub fn named(name: &str) -> Result<Self> {
        let (family, kind) = match name {
            "urban-degree" => (Family::Urban, Kind::Degree),
            "urban-aspl" => (Family::Urban, Kind::Aspl),
            "urban-clustering" => (Family::Urban, Kind::Clustering),
            "urban-connectivity" => (Family::Urban, Kind::Connectivity),
            "highway-degree" => (Family::Highway, Kind::Degree),
            "highway-aspl" => (Family::Highway, Kind::Aspl),
            "highway-clustering" => (Family::Highway, Kind::Clustering),
            "highway-connectivity" => (Family::Highway, Kind::Connectivity),
            _ => bail!("unknown preset {name:?}"),
        };
        let steps = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
            let n = ((hi - lo) / step).round() as usize;
            (0..=n).map(|i| lo + i as f64 * step).collect()
        };
        let densities = match (family, kind) {
            (Family::Urban, Kind::Connectivity) => steps(10.0, 100.0, 10.0),
            (Family::Urban, _) => URBAN_DENSITIES.to_vec(),
            (Family::Highway, _) => HIGHWAY_DENSITIES.to_vec(),
        };
        let scales = match (family, kind) {
            (Family::Urban, Kind::Degree | Kind::Connectivity) => vec![4.0],
            (Family::Urban, Kind::Aspl) => steps(0.5, 4.0, 0.5),
            (Family::Urban, Kind::Clustering) => steps(1.0, 4.0, 1.0),
            (Family::Highway, Kind::Degree) => vec![20.0],
            (Family::Highway, _) => steps(5.0, 35.0, 5.0),
        };
        Ok(ExperimentPreset {
            name: name.to_string(),
            family,
            kind,
            densities,
            scales,
            seeds: 10,
            base_seed: 1,
            placement: Placement::CaWarmed,
        })
    }

    fn family_name(&self) -> &'static str {
        match self.family {
            Family::Urban => "urban",
            Family::Highway => "highway",
        }
    }
}

/// All snapshots of one (density, scale) point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub density: f64,
    pub scale: f64,
    pub reports: Vec<MetricReport>,
    pub histogram: Option<DegreeHistogram>,
}

impl PointResult {
    fn stat(&self, f: impl Fn(&MetricReport) -> Option<f64>) -> (Stat, usize) {
        let v: Vec<f64> = self.reports.iter().filter_map(f).collect();
        (Stat::of(&v), v.len())
    }
}

pub fn sample_point(p: &ExperimentPreset, density: f64, scale: f64) -> Result<PointResult> {
    let model = RangeModel::default();
    let mut reports = Vec::new();
    let mut hists = Vec::new();
    for i in 0..p.seeds {
        let seed = p.base_seed.wrapping_add(i as u64);
        let snap = match p.family {
            Family::Urban => {
                generate_urban(&UrbanConfig::new(scale, density).with_placement(p.placement), seed)?
            }
            Family::Highway => generate_highway(&HighwayConfig::new(scale, density), seed)?,
        };
        let graph = build_graph(&snap, &model);
        reports.push(MetricReport::compute(&graph, p.family_name(), density, scale, seed));
        if let Ok(h) = degree_distribution(&graph) {
            hists.push(h);
        }
    }
    let histogram = DegreeHistogram::merge(&hists).ok();
    Ok(PointResult {
        density,
        scale,
        reports,
        histogram,
    })
}

fn resolve(args: &AnalyzeArgs) -> Result<ExperimentPreset> {
    let cfg = Layered::load(&args.common)?;
    let mut p = ExperimentPreset::named(&args.preset)?;
    let density_text = cfg
        .text(&args.densities, "densities")
        .or_else(|| cfg.text(&args.density, "density"));
    if let Some(t) = density_text {
        p.densities = parse_list(&t)?;
    }
    let scale_text = match p.family {
        Family::Urban => cfg.text(&args.area, "area"),
        Family::Highway => cfg.text(&args.lengths, "lengths").or_else(|| cfg.text(&None, "length")),
    };
    if let Some(t) = scale_text {
        p.scales = parse_list(&t)?;
    }
    if let Some(s) = cfg.value(args.seeds, "seeds")? {
        p.seeds = s;
    }
    if p.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    p.base_seed = cfg.seed(&args.common)?;
    if let Some(t) = cfg.text(&args.placement, "placement") {
        p.placement = t.parse()?;
    }
    Ok(p)
}

pub fn run(args: AnalyzeArgs) -> Result<Checks> {
    let preset = resolve(&args)?;
    let out = Layered::load(&args.common)?.out_dir(&args.common)?;
    let points = run_preset(&preset)?;
    write_outputs(&preset, &points, &out)
}

pub fn run_preset(p: &ExperimentPreset) -> Result<Vec<PointResult>> {
    let grid: Vec<(f64, f64)> = p
        .densities
        .iter()
        .flat_map(|&d| p.scales.iter().map(move |&s| (d, s)))
        .collect();
    grid.par_iter().map(|&(d, s)| sample_point(p, d, s)).collect()
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn fit_row(density: f64, fit: Option<&FitResult>, with_b: bool) -> String {
    match fit {
        Some(fit) => {
            let [a, b, c] = fit.params;
            let r2 = fit.r_square.map(f).unwrap_or_else(|| "NaN".into());
            if with_b {
                format!("{density},{},{},{},{r2},{}\n", f(a), f(b), f(c), fit.sse)
            } else {
                format!("{density},{},{},{r2},{}\n", f(a), f(c), fit.sse)
            }
        }
        None if with_b => format!("{density},NaN,NaN,NaN,NaN,NaN\n"),
        None => format!("{density},NaN,NaN,NaN,NaN\n"),
    }
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<()> {
    create(out, name)?
        .write_all(text.as_bytes())
        .with_context(|| format!("writing {name}"))
}

fn write_outputs(p: &ExperimentPreset, points: &[PointResult], out: &Path) -> Result<Checks> {
    let reports: Vec<MetricReport> = points.iter().flat_map(|pt| pt.reports.clone()).collect();
    write_reports(&reports, create(out, &format!("metrics_{}.csv", p.name))?)?;
    let urban = p.family == Family::Urban;
    let mut checks = Checks::default();
    match p.kind {
        Kind::Degree => {
            let (fig, table) = if urban { ("fig1", "table2") } else { ("fig2", "table3") };
            let mut fig_text = String::from("density,scale,degree,probability,gaussian_fit,powerlaw_fit\n");
            let mut gauss_text = String::from("density,a,b,c,r_square,sse\n");
            let mut pl_text = String::from("density,a,gamma,r_square,sse\n");
            let mut verdict = String::from("density,gaussian_r2,powerlaw_r2,scale_free\n");
            for pt in points {
                let Some(h) = &pt.histogram else {
                    if urban {
                        checks.check(format!("degree fit at density {} (no vehicles)", pt.density), false);
                    }
                    continue;
                };
                let g = fit_gaussian_histogram(h).ok();
                let pl = fit_powerlaw_histogram(h).ok();
                for (k, prob) in h.probs() {
                    let gf = g.as_ref().map(|g| f(g.predict(k))).unwrap_or_else(|| "NaN".into());
                    let pf = pl.as_ref().map(|g| f(g.predict(k))).unwrap_or_else(|| "NaN".into());
                    fig_text += &format!("{},{},{k},{},{gf},{pf}\n", pt.density, pt.scale, f(prob));
                }
                gauss_text += &fit_row(pt.density, g.as_ref(), true);
                pl_text += &match &pl {
                    Some(pl) => format!(
                        "{},{},{},{},{}\n",
                        pt.density,
                        f(pl.params[0]),
                        f(pl.params[1]),
                        pl.r_square.map(f).unwrap_or_else(|| "NaN".into()),
                        pl.sse
                    ),
                    None => format!("{},NaN,NaN,NaN,NaN\n", pt.density),
                };
                let r2 = |x: &Option<FitResult>| x.as_ref().and_then(|x| x.r_square).unwrap_or(f64::NEG_INFINITY);
                let (rg, rp) = (r2(&g), r2(&pl));
                let scale_free = rp > rg;
                verdict += &format!("{},{},{},{scale_free}\n", pt.density, f(rg), f(rp));
                if urban {
                    checks.check(
                        format!("density {}: gaussian R² {rg:.4} >= 0.97 and > power-law R² {rp:.4}", pt.density),
                        rg >= 0.97 && rg > rp && !scale_free,
                    );
                }
            }
            let fam = p.family_name();
            write_text(out, &format!("{fig}_degree_{fam}.csv"), &fig_text)?;
            write_text(out, &format!("{table}_gaussian_{fam}.csv"), &gauss_text)?;
            write_text(out, &format!("powerlaw_fit_{fam}.csv"), &pl_text)?;
            write_text(out, &format!("degree_verdict_{fam}.csv"), &verdict)?;
        }
        Kind::Aspl => {
            let mut fig_text = String::from("density,scale,aspl_mean,aspl_std,samples,power_fit,log_fit\n");
            let mut pow_text = String::from("density,a,b,c,r_square,sse\n");
            let mut log_text = String::from("density,a,c,r_square,sse\n");
            let mut verdict = String::from("density,log_r2,power_r2,small_world_indicated,scale_free\n");
            for &d in &p.densities {
                let row: Vec<&PointResult> = points.iter().filter(|pt| pt.density == d).collect();
                let stats: Vec<(f64, Stat, usize)> = row
                    .iter()
                    .map(|pt| {
                        let (s, n) = pt.stat(|r| r.aspl);
                        (pt.scale, s, n)
                    })
                    .collect();
                let usable: Vec<&(f64, Stat, usize)> = stats.iter().filter(|(_, _, n)| *n > 0).collect();
                let series = XYSeries::new(
                    usable.iter().map(|s| s.0).collect(),
                    usable.iter().map(|s| s.1.mean).collect(),
                )
                .ok();
                let pow = series.as_ref().and_then(|s| fit_power(s).ok());
                let log = series.as_ref().and_then(|s| fit_log(s).ok());
                for (scale, s, n) in &stats {
                    let pf = pow.as_ref().map(|x| f(x.predict(*scale))).unwrap_or_else(|| "NaN".into());
                    let lf = log.as_ref().map(|x| f(x.predict(*scale))).unwrap_or_else(|| "NaN".into());
                    fig_text += &format!("{d},{scale},{},{},{n},{pf},{lf}\n", f(s.mean), f(s.std));
                }
                pow_text += &fit_row(d, pow.as_ref(), true);
                log_text += &fit_row(d, log.as_ref(), false);
                let hists: Vec<DegreeHistogram> = row.iter().filter_map(|pt| pt.histogram.clone()).collect();
                let pooled = DegreeHistogram::merge(&hists).ok();
                let g = pooled.as_ref().and_then(|h| fit_gaussian_histogram(h).ok());
                let pl = pooled.as_ref().and_then(|h| fit_powerlaw_histogram(h).ok());
                if let (Some(g), Some(pl), Some(pow), Some(log)) = (&g, &pl, &pow, &log) {
                    let v = classify_topology(g, pl, log, pow);
                    let r2 = |x: &FitResult| x.r_square.map(f).unwrap_or_else(|| "NaN".into());
                    verdict += &format!("{d},{},{},{},{}\n", r2(log), r2(pow), v.small_world_indicated, v.scale_free);
                }
            }
            let (fig, table) = if urban { ("fig3", "table4") } else { ("fig5", "table6") };
            let fam = p.family_name();
            write_text(out, &format!("{fig}_aspl_{fam}.csv"), &fig_text)?;
            write_text(out, &format!("{table}_power_{fam}.csv"), &pow_text)?;
            let log_name = if urban { "table5_log_urban.csv".to_string() } else { format!("log_fit_{fam}.csv") };
            write_text(out, &log_name, &log_text)?;
            write_text(out, &format!("topology_verdict_{fam}.csv"), &verdict)?;
        }
        Kind::Clustering => {
            let theory = if urban { clustering_2d() } else { clustering_1d() };
            let mut text = String::from(
                "density,scale,clust_trans_mean,clust_trans_std,clust_node_avg_mean,samples,theory\n",
            );
            for pt in points {
                let (t, n) = pt.stat(|r| r.clustering_network);
                let (na, _) = pt.stat(|r| r.clustering_node_avg);
                text += &format!(
                    "{},{},{},{},{},{n},{}\n",
                    pt.density,
                    pt.scale,
                    f(t.mean),
                    f(t.std),
                    f(na.mean),
                    f(theory)
                );
                if urban && (60.0..=80.0).contains(&pt.density) && (1.0..=4.0).contains(&pt.scale) {
                    checks.check(
                        format!("urban clustering {:.4} at density {} area {} in [0.45, 0.60]", t.mean, pt.density, pt.scale),
                        (0.45..=0.60).contains(&t.mean),
                    );
                }
                if !urban && pt.scale >= 10.0 {
                    checks.check(
                        format!("highway clustering {:.4} at density {} length {} in [0.70, 0.80]", t.mean, pt.density, pt.scale),
                        (0.70..=0.80).contains(&t.mean),
                    );
                }
            }
            let fig = if urban { "fig6" } else { "fig7" };
            write_text(out, &format!("{fig}_clustering_{}.csv", p.family_name()), &text)?;
        }
        Kind::Connectivity => {
            let mut text = String::from("density,scale,connectivity_mean,connectivity_std,samples\n");
            for pt in points {
                let (s, n) = pt.stat(|r| r.connectivity);
                text += &format!("{},{},{},{},{n}\n", pt.density, pt.scale, f(s.mean), f(s.std));
            }
            if urban {
                for &scale in &p.scales {
                    let mut curve: Vec<(f64, f64)> = points
                        .iter()
                        .filter(|pt| pt.scale == scale)
                        .map(|pt| (pt.density, pt.stat(|r| r.connectivity).0.mean))
                        .collect();
                    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let monotone = curve.windows(2).all(|w| w[1].1 >= w[0].1);
                    checks.check(format!("connectivity non-decreasing in density at area {scale}"), monotone);
                }
            }
            let fig = if urban { "fig8" } else { "fig9" };
            write_text(out, &format!("{fig}_connectivity_{}.csv", p.family_name()), &text)?;
        }
    }
    Ok(checks)
}
