use std::collections::BTreeMap;
use std::io::Write;

use anyhow::{bail, Result};
use rayon::prelude::*;
use vanetsci::analytic::{clustering_1d, clustering_2d, monte_carlo_1d, monte_carlo_2d};
use vanetsci::scenario::rng_from_seed;
use vanetsci::sim::{run_once, write_aggregate, write_results, Mechanism, RunMetrics, SimConfig, SimMetrics};
use vanetsci::uvcast::write_trace;

use crate::opts::{create, parse_count, parse_list, Checks, Layered};
use crate::{OracleArgs, SimulateArgs};

fn mechanisms(text: Option<String>) -> Result<Vec<Mechanism>> {
    let Some(text) = text else {
        return Ok(Mechanism::ALL.to_vec());
    };
    let mut out: Vec<Mechanism> = text
        .split(',')
        .map(|s| s.trim().parse::<Mechanism>())
        .collect::<vanetsci::Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn run(args: SimulateArgs) -> Result<Checks> {
    if args.preset != "uvcast" {
        bail!("unknown simulate preset {:?}", args.preset);
    }
    let cfg = Layered::load(&args.common)?;
    let densities = match cfg.text(&args.densities, "densities") {
        Some(t) => parse_list(&t)?,
        None => vec![20.0, 60.0, 100.0],
    };
    let mechs = mechanisms(cfg.text(&args.mechanism, "mechanism"))?;
    let base_seed = cfg.seed(&args.common)?;
    let runs = cfg.value(args.runs, "runs")?.unwrap_or(10);
    let roi = cfg.value(args.roi, "roi")?.unwrap_or(1000.0);
    let warmup = cfg.value(args.warmup, "warmup")?;
    let collect = cfg.value(args.collect, "collect")?;
    let out = cfg.out_dir(&args.common)?;

    let configs: Vec<SimConfig> = densities
        .iter()
        .map(|&d| {
            let mut c = SimConfig::urban(d, roi);
            c.runs = runs;
            c.base_seed = base_seed;
            if let Some(w) = warmup {
                c.warmup_s = w;
            }
            if let Some(t) = collect {
                c.collect_s = t;
            }
            c
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, Mechanism, usize)> = (0..configs.len())
        .flat_map(|i| mechs.iter().flat_map(move |&m| (0..runs).map(move |r| (i, m, r))))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(i, m, r)| run_once(&configs[i], m, r).map(|o| (i, m, r, o)))
        .collect::<vanetsci::Result<Vec<_>>>()?;

    let mut grouped: BTreeMap<(usize, Mechanism), (Vec<RunMetrics>, Vec<u64>)> = BTreeMap::new();
    for (i, m, r, outcome) in outcomes {
        let entry = grouped.entry((i, m)).or_default();
        match outcome {
            Some(o) => {
                if args.traces {
                    let name = format!("trace_{}_{m}_{r}.csv", configs[i].scenario.density_veh_km2);
                    write_trace(&o.trace, create(&out, &name)?)?;
                }
                entry.0.push(o.metrics);
            }
            None => entry.1.push(configs[i].seed_of(r)),
        }
    }
    let results: Vec<SimMetrics> = grouped
        .into_iter()
        .map(|((i, m), (per_run, discarded))| {
            SimMetrics::from_runs(m, configs[i].scenario.density_veh_km2, per_run, discarded)
        })
        .collect();
    write_results(&results, create(&out, "sim_results.csv")?)?;
    write_aggregate(&results, create(&out, "sim_aggregate.csv")?)?;

    let mut checks = Checks::default();
    let mut summary = String::from("density,mechanism,tx_change_pct,reachability_change_pts\n");
    for &d in &densities {
        let find = |m: Mechanism| results.iter().find(|r| r.density == d && r.mechanism == m);
        for r in results.iter().filter(|r| r.density == d && !r.discarded_seeds.is_empty()) {
            println!(
                "note: density {d} {}: discarded seeds {:?} (no vehicle inside the region at origination)",
                r.mechanism, r.discarded_seeds
            );
        }
        let Some(base) = find(Mechanism::Baseline) else { continue };
        for r in results.iter().filter(|r| r.density == d && r.mechanism != Mechanism::Baseline) {
            let tx = 100.0 * (r.avg_msgs_transmitted.mean / base.avg_msgs_transmitted.mean - 1.0);
            let reach = 100.0 * (r.reachability.mean - base.reachability.mean);
            summary += &format!("{d},{},{tx:.3},{reach:.3}\n", r.mechanism);
        }
        if let Some(ps) = find(Mechanism::PAndS) {
            let reduction = 1.0 - ps.avg_msgs_transmitted.mean / base.avg_msgs_transmitted.mean;
            let drop = base.reachability.mean - ps.reachability.mean;
            if d >= 100.0 {
                checks.check(
                    format!("density {d}: p_and_s transmissions reduced {:.1}% (>= 15%)", 100.0 * reduction),
                    reduction >= 0.15,
                );
                checks.check(
                    format!("density {d}: reachability drop {:.2} points (<= 2)", 100.0 * drop),
                    drop <= 0.02,
                );
            }
            if d >= 80.0 {
                let worse: Vec<u64> = ps
                    .per_run
                    .iter()
                    .filter_map(|p| {
                        let b = base.per_run.iter().find(|b| b.seed == p.seed)?;
                        (p.avg_msgs_transmitted > b.avg_msgs_transmitted).then_some(p.seed)
                    })
                    .collect();
                checks.check(
                    format!("density {d}: p_and_s transmits no more than baseline on every seed (worse: {worse:?})"),
                    worse.is_empty(),
                );
            }
        }
        if let Some(oracle) = find(Mechanism::FloodingOracle) {
            let dominated = results
                .iter()
                .filter(|r| r.density == d && r.mechanism != Mechanism::FloodingOracle)
                .flat_map(|r| r.per_run.iter())
                .all(|p| {
                    oracle
                        .per_run
                        .iter()
                        .find(|o| o.seed == p.seed)
                        .map_or(true, |o| p.reachability <= o.reachability)
                });
            checks.check(format!("density {d}: oracle reachability dominates every mechanism"), dominated);
        }
    }
    create(&out, "overhead_summary.csv")?.write_all(summary.as_bytes())?;
    Ok(checks)
}

pub fn oracle(args: OracleArgs) -> Result<Checks> {
    let cfg = Layered::load(&args.common)?;
    let samples = match cfg.text(&args.mc_samples, "mc_samples") {
        Some(t) => parse_count(&t)?,
        None => 1_000_000,
    };
    let seed = cfg.seed(&args.common)?;
    let mut checks = Checks::default();
    let c2 = clustering_2d();
    let c1 = clustering_1d();
    println!("clustering_2d = {c2:.6}");
    println!("clustering_1d = {c1:.6}");
    checks.check(format!("2-D clustering {c2:.6} = 0.5865 ± 5e-4"), (c2 - 0.5865).abs() <= 5e-4);
    checks.check(format!("1-D clustering {c1} = 0.75 ± 1e-12"), (c1 - 0.75).abs() <= 1e-12);
    let mut lines = String::from("quantity,value,std_error,samples,reference\n");
    lines += &format!("clustering_2d,{c2:.9},0,0,0.5865\nclustering_1d,{c1:.9},0,0,0.75\n");
    if samples > 0 {
        let mut rng = rng_from_seed(seed);
        let mc2 = monte_carlo_2d(samples, &mut rng);
        let mc1 = monte_carlo_1d(samples, &mut rng);
        println!("monte_carlo_2d = {:.6} ± {:.6}", mc2.value, mc2.std_error);
        println!("monte_carlo_1d = {:.6} ± {:.6}", mc1.value, mc1.std_error);
        checks.check("2-D Monte-Carlo within 3σ of quadrature", mc2.within_sigmas(c2, 3.0));
        checks.check("1-D Monte-Carlo within 3σ of 0.75", mc1.within_sigmas(c1, 3.0));
        lines += &format!(
            "monte_carlo_2d,{:.9},{:.9},{samples},{c2:.9}\nmonte_carlo_1d,{:.9},{:.9},{samples},{c1:.9}\n",
            mc2.value, mc2.std_error, mc1.value, mc1.std_error
        );
    }
    if args.common.out.is_some() || cfg.text(&None, "out").is_some() {
        let out = cfg.out_dir(&args.common)?;
        create(&out, "oracle.csv")?.write_all(lines.as_bytes())?;
    }
    Ok(checks)
}
