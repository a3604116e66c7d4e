use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;

use rangecert::problem::{load_problem, write_anchors, write_ground_truth, write_measurements};
use rangecert::sim::simulate;
use rangecert::solver::{ground_truth_init, label_by_best_cost, multi_restart, solve};
use rangecert::{certify, AnchorSet, CostLabel, GroundTruth, ProblemData, SimConfig, SolveConfig, Verdict};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};
use crate::metrics::{estimate_errors, position_errors, read_estimate, write_estimate};
use crate::report::{content_hash, ProblemSummary, RestartReport, RunReport, Timing};

/// Exit status when the best solution is certified.
pub const EXIT_CERTIFIED: i32 = 0;
/// Exit status when solving succeeded but nothing was certified.
pub const EXIT_UNCERTIFIED: i32 = 2;

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let path = self.out.join(name);
        File::create(&path).map(BufWriter::new).map_err(io_err(&path))
    }

    /// Writes one output file through `f`.
    fn write(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.out.join(name);
        let mut w = self.create(name)?;
        f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
    }
}

fn verdict_name(v: Option<Verdict>) -> &'static str {
    match v {
        Some(Verdict::Certified) => "certified",
        Some(Verdict::NotCertified) => "not-certified",
        Some(Verdict::NumericallyMarginal) => "numerically-marginal",
        None => "diverged",
    }
}

fn label_name(l: CostLabel) -> &'static str {
    match l {
        CostLabel::BestCost => "best-cost",
        CostLabel::Suboptimal => "suboptimal",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn simulate_cmd(ctx: &Context) -> Result<i32> {
    ctx.config.validate()?;
    let sim = simulate(&ctx.config.sim)?;
    ctx.write("anchors.csv", |w| write_anchors(w, &sim.anchors))?;
    ctx.write("measurements.csv", |w| write_measurements(w, &sim.measurements, &sim.anchors))?;
    ctx.write("ground_truth.csv", |w| write_ground_truth(w, &sim.trajectory.ground_truth()))?;
    ctx.write("config.json", |w| writeln!(w, "{}", ctx.config.to_json()))?;
    ctx.log(format!(
        "simulated {} times, {} anchors, {} readings into {}",
        sim.measurements.len(),
        sim.anchors.len(),
        sim.measurements.total(),
        ctx.out.display()
    ));
    Ok(0)
}

/// Problem and input hash from a data directory, or from the simulation
/// section of the config.
fn load_input(config: &RunConfig, data: Option<&Path>) -> Result<(ProblemData, String)> {
    let noise = config.noise_model()?;
    let Some(dir) = data else {
        let problem = simulate(&config.sim)?.problem(noise)?;
        let json = config.to_json();
        return Ok((problem, content_hash([("config.json", json.as_bytes())])));
    };
    let anchors = dir.join("anchors.csv");
    let measurements = dir.join("measurements.csv");
    let truth = dir.join("ground_truth.csv");
    let truth = truth.exists().then_some(truth);
    let mut blobs = Vec::new();
    for (name, p) in [("anchors.csv", Some(&anchors)), ("measurements.csv", Some(&measurements)), ("ground_truth.csv", truth.as_ref())] {
        if let Some(p) = p {
            blobs.push((name, std::fs::read(p).map_err(io_err(p))?));
        }
    }
    let hash = content_hash(blobs.iter().map(|(n, b)| (*n, b.as_slice())));
    let problem = load_problem(&anchors, &measurements, truth.as_deref(), noise)?;
    Ok((problem, hash))
}

pub fn solve_cmd(ctx: &Context, data: Option<&Path>, svg: bool) -> Result<i32> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let (problem, input_hash) = load_input(cfg, data)?;
    let prior = cfg.motion_prior(problem.dim())?;
    let mut warnings = Vec::new();

    let t = Instant::now();
    let estimates = multi_restart(&problem, &prior, &cfg.solve, None)?;
    let mut timing = Timing {
        solve_seconds: t.elapsed().as_secs_f64(),
        ..Default::default()
    };

    let costs: Vec<f64> = estimates.iter().map(|e| if e.diverged { f64::INFINITY } else { e.cost }).collect();
    let labels = label_by_best_cost(&costs, cfg.sweep.gap_tolerance);
    let mut restarts = Vec::with_capacity(estimates.len());
    let mut misaligned = false;
    for (est, label) in estimates.iter().zip(labels) {
        let rep = if est.diverged {
            None
        } else {
            let r = certify(est, &problem, &prior, &cfg.certify)?;
            timing.duals_seconds += r.timing.duals_seconds;
            timing.assemble_seconds += r.timing.assemble_seconds;
            timing.psd_seconds += r.timing.psd_seconds;
            Some(r)
        };
        let metrics = match (&problem.ground_truth, est.diverged) {
            (Some(gt), false) => match estimate_errors(est, gt) {
                Ok(m) => Some(m),
                Err(e) => {
                    if !misaligned {
                        warnings.push(format!("no error metrics: {e}"));
                        misaligned = true;
                    }
                    None
                }
            },
            _ => None,
        };
        restarts.push(RestartReport {
            restart: est.restart,
            cost: est.cost,
            iterations: est.iterations,
            converged: est.converged,
            diverged: est.diverged,
            verdict: rep.as_ref().map(|r| r.verdict),
            duality_gap: rep.as_ref().map(|r| r.duality_gap),
            min_diag: rep.as_ref().map(|r| r.min_diag),
            stationarity_residual: rep.as_ref().map(|r| r.stationarity_residual),
            label,
            rmse: metrics.map(|m| m.rmse),
            mae: metrics.map(|m| m.mae),
        });
    }

    let certified = restarts.iter().position(|r| r.verdict == Some(Verdict::Certified));
    let selected = certified.or_else(|| restarts.iter().position(|r| !r.diverged));
    match (certified, selected) {
        (None, Some(_)) => warnings.push("no estimate was certified; writing the best-cost estimate".into()),
        (None, None) => warnings.push("every restart diverged; no estimate written".into()),
        _ => {}
    }
    for w in &warnings {
        ctx.log(format!("warning: {w}"));
    }

    if let Some(i) = selected {
        ctx.write("estimate.csv", |w| write_estimate(w, &estimates[i]))?;
        if svg {
            let est = estimates[i].positions();
            ctx.write("trajectory.svg", |w| write_svg(w, &problem.anchors, problem.ground_truth.as_ref(), &est))?;
        }
    }
    ctx.write("restarts.csv", |w| write_restarts(w, &restarts))?;

    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        input_hash,
        config: cfg.clone(),
        problem: ProblemSummary {
            num_times: problem.num_times(),
            num_measurements: problem.num_measurements(),
            num_anchors: problem.anchors.len(),
            dim: problem.dim(),
            fallback_rows: problem.fallback_rows(),
        },
        selected_restart: selected.map(|i| restarts[i].restart),
        selected_certified: certified.is_some(),
        rmse: selected.and_then(|i| restarts[i].rmse),
        mae: selected.and_then(|i| restarts[i].mae),
        restarts,
        timing,
        warnings,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    ctx.write("report.json", |w| writeln!(w, "{json}"))?;

    let n_cert = report.restarts.iter().filter(|r| r.verdict == Some(Verdict::Certified)).count();
    ctx.log(format!(
        "{} restarts, {} certified; best cost {:.6e}{}; solve {:.3} s, certificate {:.3} s",
        report.restarts.len(),
        n_cert,
        report.restarts.first().map_or(f64::NAN, |r| r.cost),
        report.rmse.map(|r| format!(", RMSE {r:.4e}")).unwrap_or_default(),
        timing.solve_seconds,
        timing.duals_seconds + timing.assemble_seconds + timing.psd_seconds,
    ));
    Ok(if report.selected_certified { EXIT_CERTIFIED } else { EXIT_UNCERTIFIED })
}

fn write_restarts<W: Write>(out: W, restarts: &[RestartReport]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "restart",
        "cost",
        "iterations",
        "converged",
        "diverged",
        "verdict",
        "duality_gap",
        "min_diag",
        "stationarity_residual",
        "label",
        "rmse",
        "mae",
    ])?;
    for r in restarts {
        w.write_record([
            r.restart.to_string(),
            r.cost.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.diverged.to_string(),
            verdict_name(r.verdict).into(),
            opt(r.duality_gap),
            opt(r.min_diag),
            opt(r.stationarity_residual),
            label_name(r.label).into(),
            opt(r.rmse),
            opt(r.mae),
        ])?;
    }
    w.flush()
}

/// Minimal top-down SVG: anchors, ground truth and estimate (x and y only).
fn write_svg<W: Write>(w: &mut W, anchors: &AnchorSet, truth: Option<&GroundTruth>, est: &DMatrix<f64>) -> std::io::Result<()> {
    const SIZE: f64 = 600.0;
    const PAD: f64 = 20.0;
    let mut pts: Vec<(f64, f64)> = est.column_iter().map(|c| (c[0], c[1])).collect();
    pts.extend(anchors.coords().column_iter().map(|c| (c[0], c[1])));
    if let Some(gt) = truth {
        pts.extend(gt.positions.column_iter().map(|c| (c[0], c[1])));
    }
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let scale = (SIZE - 2.0 * PAD) / (x1 - x0).max(y1 - y0).max(1e-12);
    let map = |x: f64, y: f64| (PAD + (x - x0) * scale, SIZE - PAD - (y - y0) * scale);
    let polyline = |m: &DMatrix<f64>| -> String {
        m.column_iter()
            .map(|c| {
                let (u, v) = map(c[0], c[1]);
                format!("{u:.2},{v:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#)?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    if let Some(gt) = truth {
        writeln!(w, r#"<polyline fill="none" stroke="gray" stroke-width="2" points="{}"/>"#, polyline(&gt.positions))?;
    }
    writeln!(w, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, polyline(est))?;
    for c in anchors.coords().column_iter() {
        let (u, v) = map(c[0], c[1]);
        writeln!(w, r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="firebrick"/>"#, u - 4.0, v - 4.0)?;
    }
    writeln!(w, "</svg>")
}

pub fn eval_cmd(ctx: &Context, estimate: &Path, ground_truth: &Path, write_out: bool) -> Result<i32> {
    let (times, positions) = read_estimate(estimate)?;
    let gt = rangecert::problem::read_ground_truth(ground_truth)?;
    let m = position_errors(&times, &positions, &gt)?;
    let json = serde_json::to_string_pretty(&m).expect("metrics serialize");
    if write_out {
        ctx.write("metrics.json", |w| writeln!(w, "{json}"))?;
    }
    println!("{json}");
    Ok(0)
}

pub fn bench_cmd(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.config;
    cfg.validate()?;
    if cfg.bench.max_iterations == 0 {
        return Err(CliError::Usage("bench.max_iterations must be at least 1".into()));
    }
    let noise = cfg.noise_model()?;
    let prior = cfg.motion_prior(cfg.sim.dim)?;
    let mut rows = Vec::new();
    for &n in &cfg.bench.sizes {
        let sim_cfg = SimConfig { num_times: n, ..cfg.sim.clone() };
        let problem = simulate(&sim_cfg)?.problem(noise)?;
        let init = ground_truth_init(&problem, prior.state_dim())?;
        let solve_cfg = SolveConfig { max_iterations: cfg.bench.max_iterations, ..cfg.solve.clone() };
        let t = Instant::now();
        let est = solve(&problem, &prior, &solve_cfg, &init)?;
        let gn = t.elapsed().as_secs_f64() / est.iterations.max(1) as f64;
        let rep = certify(&est, &problem, &prior, &cfg.certify)?;
        ctx.log(format!(
            "N={n}: GN {gn:.4} s/iter, duals {:.4} s, PSD {:.4} s, {}",
            rep.timing.duals_seconds,
            rep.timing.psd_seconds,
            verdict_name(Some(rep.verdict))
        ));
        rows.push((n, problem.num_measurements(), est.iterations, gn, rep));
    }
    ctx.write("bench.csv", |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "measurements",
            "gn_iterations",
            "gn_seconds_per_iteration",
            "duals_seconds",
            "assemble_seconds",
            "psd_seconds",
            "completed_blocks",
            "verdict",
        ])?;
        for (n, e, it, gn, rep) in &rows {
            w.write_record([
                n.to_string(),
                e.to_string(),
                it.to_string(),
                gn.to_string(),
                rep.timing.duals_seconds.to_string(),
                rep.timing.assemble_seconds.to_string(),
                rep.timing.psd_seconds.to_string(),
                rep.completed_blocks.to_string(),
                verdict_name(Some(rep.verdict)).into(),
            ])?;
        }
        w.flush()
    })?;
    Ok(0)
}

#[derive(Default)]
struct Counts {
    tp: usize,
    tn: usize,
    fp: usize,
    fn_: usize,
}

pub fn sweep_cmd(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let mut rows = ctx.create("sweep.csv")?;
    let mut w = csv::Writer::from_writer(&mut rows);
    let header = [
        "noise", "setup", "restart", "rmse", "cost", "iterations", "converged", "certified", "verdict", "label",
    ];
    w.write_record(header).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut summary = Vec::new();
    for &sigma in &cfg.sweep.noise_levels {
        let mut counts = Counts::default();
        let noise = rangecert::NoiseModel::new(sigma, cfg.noise.policy)?;
        for setup in 0..cfg.sweep.setups {
            let sim_cfg = SimConfig {
                sigma_d: sigma,
                rng_seed: cfg.sim.rng_seed.wrapping_add(setup as u64),
                ..cfg.sim.clone()
            };
            let problem = simulate(&sim_cfg)?.problem(noise)?;
            let prior = cfg.motion_prior(problem.dim())?;
            let solve_cfg = SolveConfig { rng_seed: sim_cfg.rng_seed, ..cfg.solve.clone() };
            let estimates = multi_restart(&problem, &prior, &solve_cfg, None)?;
            let costs: Vec<f64> = estimates.iter().map(|e| if e.diverged { f64::INFINITY } else { e.cost }).collect();
            let labels = label_by_best_cost(&costs, cfg.sweep.gap_tolerance);
            for (est, label) in estimates.iter().zip(labels) {
                let verdict = if est.diverged { None } else { Some(certify(est, &problem, &prior, &cfg.certify)?.verdict) };
                let certified = verdict == Some(Verdict::Certified);
                match (label, certified) {
                    (CostLabel::BestCost, true) => counts.tp += 1,
                    (CostLabel::BestCost, false) => counts.fn_ += 1,
                    (CostLabel::Suboptimal, true) => counts.fp += 1,
                    (CostLabel::Suboptimal, false) => counts.tn += 1,
                }
                let rmse = match (&problem.ground_truth, est.diverged) {
                    (Some(gt), false) => Some(estimate_errors(est, gt)?.rmse),
                    _ => None,
                };
                w.write_record([
                    sigma.to_string(),
                    setup.to_string(),
                    est.restart.to_string(),
                    opt(rmse),
                    est.cost.to_string(),
                    est.iterations.to_string(),
                    est.converged.to_string(),
                    certified.to_string(),
                    verdict_name(verdict).into(),
                    label_name(label).into(),
                ])
                .map_err(|e| CliError::Usage(e.to_string()))?;
            }
        }
        ctx.log(format!(
            "noise {sigma:e}: tp {} tn {} fp {} fn {}",
            counts.tp, counts.tn, counts.fp, counts.fn_
        ));
        summary.push((sigma, counts));
    }
    w.flush().map_err(io_err(&ctx.out.join("sweep.csv")))?;
    drop(w);
    rows.flush().map_err(io_err(&ctx.out.join("sweep.csv")))?;
    ctx.write("sweep_summary.csv", |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["noise", "setups", "true_positives", "true_negatives", "false_positives", "false_negatives"])?;
        for (sigma, c) in &summary {
            w.write_record([
                sigma.to_string(),
                cfg.sweep.setups.to_string(),
                c.tp.to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
            ])?;
        }
        w.flush()
    })?;
    Ok(0)
}
