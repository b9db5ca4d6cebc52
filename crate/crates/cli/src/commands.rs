use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::args::*;
use crate::{fail, svg, CliResult, ExitWith, Failure};
use edrisk_core::fixtures::toy6;
use edrisk_core::grid::{validate, GridSpec};
use edrisk_core::lp::SolverOptions;
use edrisk_core::proxies::{Architecture, ProxyModel};
use edrisk_core::risk::{
    build_report, check_aligned, cost_bands, qq_pairs, window_costs, write_bands_csv, write_branch_csv, write_qq_csv,
    write_report_csv, QoiKind, RiskError, RiskSettings,
};
use edrisk_core::scenario::{
    fit_profile, read_history_csv, read_scenarios_csv, sample_scenarios, synthetic_history, write_scenarios_csv,
    ProfileModel, Scenario, ScenarioError,
};
use edrisk_core::sim::{
    read_trajectories_csv, run_batch, summarize, write_trajectories_csv, Backend, BatchResult, RolloutConfig, SimError,
    Timing, Trajectory,
};
use edrisk_core::training::{build_dataset, evaluate_gap, train, Split, TrainConfig, TrainError};

const MANIFEST: &str = "run_manifest.json";

struct Ctx<'a> {
    global: &'a Global,
    config: Option<&'a Path>,
    out: PathBuf,
    started: SystemTime,
    clock: Instant,
}

pub fn run(inv: Invocation) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inv.global.workers())
        .build()
        .exit(1)?;
    let ctx = Ctx {
        global: &inv.global,
        config: inv.config.as_deref(),
        out: inv.global.out(),
        started: SystemTime::now(),
        clock: Instant::now(),
    };
    pool.install(|| match &inv.command {
        Command::Grid { command: GridCommand::Validate } => grid_validate(&ctx),
        Command::Scenario { command: ScenarioCommand::Fit(a) } => scenario_fit(&ctx, a),
        Command::Scenario { command: ScenarioCommand::Sample(a) } => scenario_sample(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Risk(a) => cmd_risk(&ctx, a),
        Command::CompareTiming(a) => compare_timing(&ctx, a),
    })
}

fn not_found(path: &Path, what: &str) -> Failure {
    Failure {
        code: 2,
        msg: format!("{what} {} does not exist", path.display()),
    }
}

fn load_grid(ctx: &Ctx) -> CliResult<GridSpec> {
    let Some(path) = &ctx.global.grid else {
        return Ok(toy6());
    };
    if !path.exists() {
        return Err(not_found(path, "grid file"));
    }
    GridSpec::load(path).map_err(|e| Failure {
        code: 2,
        msg: format!("{}: {e}", path.display()),
    })
}

/// Grid for commands that compute with it; any invariant violation is fatal.
fn valid_grid(ctx: &Ctx) -> CliResult<GridSpec> {
    let spec = load_grid(ctx)?;
    if let Some(v) = validate(&spec).first() {
        return fail(2, format!("invalid grid: {v}"));
    }
    Ok(spec)
}

fn out_dir<'a>(ctx: &'a Ctx) -> CliResult<&'a Path> {
    fs::create_dir_all(&ctx.out).map_err(|e| Failure {
        code: 2,
        msg: format!("cannot create output directory {}: {e}", ctx.out.display()),
    })?;
    Ok(&ctx.out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure {
        code: 1,
        msg: format!("cannot write {}: {e}", path.display()),
    })
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    f(&mut buf).exit(1)?;
    write_bytes(path, &buf)
}

fn print_json(v: &Value) {
    println!("{v}");
}

/// Adds this command's entry to the run manifest, the only file that holds
/// timestamps and wall-clock timings.
fn record(ctx: &Ctx, name: &str, extra: Value) -> CliResult<()> {
    let dir = out_dir(ctx)?;
    let path = dir.join(MANIFEST);
    let mut doc = fs::read_to_string(&path)
        .ok()
        .and_then(|s| serde_json::from_str::<Value>(&s).ok())
        .filter(Value::is_object)
        .unwrap_or_else(|| json!({}));
    let started_ms = ctx.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
    let entry = json!({
        "started_unix_ms": started_ms,
        "wall_ms": ctx.clock.elapsed().as_secs_f64() * 1e3,
        "seed": ctx.global.seed(),
        "workers": ctx.global.workers(),
        "grid": ctx.global.grid.as_ref().map(|p| p.display().to_string()),
        "config": ctx.config.map(|p| p.display().to_string()),
        "details": extra,
    });
    doc[name] = entry;
    write_bytes(&path, serde_json::to_string_pretty(&doc).exit(1)?.as_bytes())
}

fn grid_validate(ctx: &Ctx) -> CliResult<()> {
    let spec = load_grid(ctx)?;
    let violations = validate(&spec);
    print_json(&json!({
        "name": spec.name,
        "n_buses": spec.n_buses,
        "n_generators": spec.n_gens(),
        "n_branches": spec.n_branches(),
        "valid": violations.is_empty(),
        "violations": violations,
    }));
    for v in &violations {
        eprintln!("violation: {v}");
    }
    if violations.is_empty() {
        Ok(())
    } else {
        fail(2, format!("{} grid violation(s)", violations.len()))
    }
}

fn history(ctx: &Ctx, a: &HistoryArgs) -> CliResult<Vec<Vec<f64>>> {
    match &a.history {
        Some(path) if !path.exists() => Err(not_found(path, "history file")),
        Some(path) => read_history_csv(path).exit(2),
        None => Ok(synthetic_history(
            a.days.unwrap_or(365),
            a.horizon.unwrap_or(DEFAULT_HORIZON),
            ctx.global.seed(),
        )),
    }
}

fn fitted(ctx: &Ctx, spec: &GridSpec, a: &HistoryArgs) -> CliResult<ProfileModel> {
    let report = fit_profile(&history(ctx, a)?, spec.peak_load(), spec.load_shares()).exit(2)?;
    if !report.degenerate_steps.is_empty() {
        log::warn!("steps {:?} have constant history; sampled as point masses", report.degenerate_steps);
    }
    Ok(report.model)
}

fn profile(ctx: &Ctx, spec: &GridSpec, a: &SampleArgs) -> CliResult<ProfileModel> {
    let model = match &a.profile {
        Some(path) if !path.exists() => return Err(not_found(path, "profile")),
        Some(path) => ProfileModel::from_json_str(&fs::read_to_string(path).exit(2)?).exit(2)?,
        None => fitted(ctx, spec, &a.history)?,
    };
    if model.n_buses() != spec.n_buses {
        return fail(
            2,
            format!("profile has {} buses, grid has {}", model.n_buses(), spec.n_buses),
        );
    }
    Ok(model)
}

fn scenario_fit(ctx: &Ctx, a: &FitArgs) -> CliResult<()> {
    let spec = valid_grid(ctx)?;
    let report = fit_profile(&history(ctx, &a.history)?, spec.peak_load(), spec.load_shares()).exit(2)?;
    let path = out_dir(ctx)?.join("profile.json");
    write_bytes(&path, report.model.to_json_pretty().as_bytes())?;
    record(ctx, "scenario_fit", json!({}))?;
    print_json(&json!({
        "profile": path.display().to_string(),
        "horizon": report.model.horizon(),
        "degenerate_steps": report.degenerate_steps,
        "correlation_repaired": report.repaired,
    }));
    Ok(())
}

fn sample(ctx: &Ctx, spec: &GridSpec, a: &SampleArgs) -> CliResult<Vec<Scenario>> {
    let model = profile(ctx, spec, a)?;
    sample_scenarios(&model, a.count(), ctx.global.seed()).exit(2)
}

fn scenario_sample(ctx: &Ctx, a: &SampleArgs) -> CliResult<()> {
    let spec = valid_grid(ctx)?;
    let scenarios = sample(ctx, &spec, a)?;
    let path = out_dir(ctx)?.join("scenarios.csv");
    write_scenarios_csv(&path, &scenarios).exit(1)?;
    record(ctx, "scenario_sample", json!({}))?;
    print_json(&json!({
        "scenarios": path.display().to_string(),
        "count": scenarios.len(),
        "horizon": scenarios.first().map_or(0, Scenario::horizon),
    }));
    Ok(())
}

fn load_scenarios(path: &Path, spec: &GridSpec) -> CliResult<Vec<Scenario>> {
    if !path.exists() {
        return Err(not_found(path, "scenario file"));
    }
    let sc = read_scenarios_csv(path).map_err(|e| Failure {
        code: match e {
            ScenarioError::Io(_) => 2,
            _ => 4,
        },
        msg: format!("{}: {e}", path.display()),
    })?;
    if let Some(s) = sc.iter().find(|s| s.loads.cols() != spec.n_buses) {
        return fail(
            4,
            format!(
                "{}: scenario {} has {} buses, grid has {}",
                path.display(),
                s.id,
                s.loads.cols(),
                spec.n_buses
            ),
        );
    }
    if sc.is_empty() {
        return fail(4, format!("{}: no scenarios", path.display()));
    }
    Ok(sc)
}

fn sim_failure(e: SimError) -> Failure {
    Failure {
        code: match e {
            SimError::Shape { .. } => 4,
            SimError::Window { .. } => 2,
            _ => 1,
        },
        msg: e.to_string(),
    }
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let spec = valid_grid(ctx)?;
    let Some(arch) = a.arch else {
        return fail(2, "--arch is required (dnn, deepopf, dc3, e2elr)");
    };
    let scenarios = match &a.scenarios {
        Some(p) => load_scenarios(p, &spec)?,
        None => sample(ctx, &spec, &a.sample)?,
    };
    let horizon = scenarios[0].horizon();
    let oracle = run_batch(
        &scenarios,
        &spec,
        Backend::Oracle(SolverOptions::default()),
        &RolloutConfig::full(horizon),
        ctx.global.workers(),
    )
    .map_err(sim_failure)?;
    let set = build_dataset(&scenarios, &spec, &oracle.trajectories);
    if set.excluded > 0 {
        log::warn!("{} oracle-infeasible steps excluded from the dataset", set.excluded);
    }
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        lr_grid: a.lr_grid.clone().unwrap_or(d.lr_grid),
        hidden_grid: a.hidden_grid.clone().unwrap_or(d.hidden_grid),
        lambda_grid: a.lambda_grid.clone().unwrap_or(d.lambda_grid),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        max_epochs: a.epochs.unwrap_or(d.max_epochs),
        plateau_patience: a.plateau_patience.unwrap_or(d.plateau_patience),
        early_stop_patience: a.early_stop_patience.unwrap_or(d.early_stop_patience),
        encoder_width: a.encoder_width.unwrap_or(d.encoder_width),
        hidden_layers: a.hidden_layers.unwrap_or(d.hidden_layers),
        slack: a.slack.or(d.slack),
        dc3_steps: a.dc3_steps.unwrap_or(d.dc3_steps),
        dc3_step_size: a.dc3_step_size.or(d.dc3_step_size),
        dc3_unroll: !a.dc3_post_hoc.unwrap_or(!d.dc3_unroll),
        seed: ctx.global.seed(),
        ..d
    };
    let outcome = train(&spec, &set, arch, &cfg).map_err(|e| Failure {
        code: match e {
            TrainError::AllRunsDiverged | TrainError::DivergedTraining { .. } => 3,
            TrainError::EmptySplit(_) | TrainError::Config(_) => 2,
            _ => 1,
        },
        msg: e.to_string(),
    })?;
    let best = outcome.best_run();
    let test_gap = if set.indices(Split::Test).is_empty() {
        None
    } else {
        Some(evaluate_gap(&outcome.model, &spec, &set, Split::Test).exit(1)?)
    };
    let training = json!({
        "config": cfg,
        "selected_run": best.spec,
        "best_epoch": best.best_epoch,
        "best_val_loss": best.best_val,
        "selection_loss": best.selection_loss,
        "dataset": {
            "scenarios": scenarios.len(),
            "records": set.len(),
            "excluded": set.excluded,
            "train": set.indices(Split::Train).len(),
            "val": set.indices(Split::Val).len(),
            "test": set.indices(Split::Test).len(),
        },
        "test_gap": test_gap,
    });
    let out = out_dir(ctx)?;
    let model_dir = a.model.clone().unwrap_or_else(|| out.join(format!("model_{arch}")));
    outcome.model.save(&model_dir, training).exit(1)?;

    let mut log_csv = String::from("run,epoch,lr,train_loss,val_loss\n");
    let mut runs_csv = String::from("run,lr,hidden,lambda,status,best_epoch,best_val_loss,selection_loss\n");
    let mut wall = Vec::new();
    for (spec_run, res) in cfg.runs(arch).iter().zip(&outcome.runs) {
        let head = format!("{},{:?},{},{:?}", spec_run.index, spec_run.lr, spec_run.hidden, spec_run.lambda);
        match res {
            Ok(r) => {
                for e in &r.log {
                    log_csv += &format!("{},{},{:?},{:?},{:?}\n", spec_run.index, e.epoch, e.lr, e.train_loss, e.val_loss);
                }
                runs_csv += &format!("{head},ok,{},{:?},{:?}\n", r.best_epoch, r.best_val, r.selection_loss);
                wall.push(json!({
                    "run": spec_run.index,
                    "epoch_wall_ms": r.log.iter().map(|e| e.wall_ms).collect::<Vec<_>>(),
                }));
            }
            Err(e) => {
                let status = match e {
                    TrainError::DivergedTraining { .. } => "diverged",
                    _ => "failed",
                };
                runs_csv += &format!("{head},{status},,,\n");
                log::warn!("run {} {status}: {e}", spec_run.index);
            }
        }
    }
    write_bytes(&out.join(format!("train_log_{arch}.csv")), log_csv.as_bytes())?;
    write_bytes(&out.join(format!("train_runs_{arch}.csv")), runs_csv.as_bytes())?;
    record(ctx, &format!("train_{arch}"), json!({ "runs": wall }))?;
    print_json(&json!({
        "arch": arch.as_str(),
        "model": model_dir.display().to_string(),
        "selected_run": best.spec,
        "best_val_loss": best.best_val,
        "test_gap": test_gap,
        "records": set.len(),
    }));
    Ok(())
}

fn rollout_config(r: &RolloutArgs, horizon: usize) -> RolloutConfig {
    let base = if RolloutConfig::default().check(horizon).is_ok() {
        RolloutConfig::default()
    } else {
        RolloutConfig::full(horizon)
    };
    RolloutConfig {
        clip: !r.no_clip.unwrap_or(false),
        window_start: r.window_start.unwrap_or(base.window_start),
        window_end: r.window_end.unwrap_or(base.window_end),
    }
}

fn load_model(dir: &Path, spec: &GridSpec, expect: Option<Architecture>) -> CliResult<ProxyModel> {
    if !dir.join("model.json").exists() {
        return Err(not_found(dir, "checkpoint"));
    }
    let (model, _) = ProxyModel::load(dir).map_err(|e| Failure {
        code: 2,
        msg: format!("{}: {e}", dir.display()),
    })?;
    if model.n_gens() != spec.n_gens() || model.n_buses() != spec.n_buses {
        return fail(
            2,
            format!(
                "checkpoint {} was built for {} buses / {} generators, grid has {} / {}",
                dir.display(),
                model.n_buses(),
                model.n_gens(),
                spec.n_buses,
                spec.n_gens()
            ),
        );
    }
    if let Some(arch) = expect.filter(|&a| a != model.architecture()) {
        return fail(
            2,
            format!("checkpoint {} holds a {} model, not {arch}", dir.display(), model.architecture()),
        );
    }
    Ok(model)
}

fn timing_json(t: &Timing, wall_ms: f64) -> Value {
    let ms = |v: &[u64]| v.iter().map(|&x| x as f64 * 1e-6).collect::<Vec<_>>();
    json!({
        "total_ms": t.total_ns() as f64 * 1e-6,
        "wall_ms": wall_ms,
        "per_scenario_ms": ms(&t.per_scenario_ns),
        "per_batch_ms": ms(&t.per_batch_ns),
    })
}

fn write_rollout(out: &Path, tag: &str, res: &BatchResult, cfg: &RolloutConfig) -> CliResult<()> {
    write_with(&out.join(format!("trajectories_{tag}.csv")), |w| {
        write_trajectories_csv(w, &res.trajectories)
    })?;
    let mut s = String::from(
        "scenario,steps,infeasible_steps,p0_fallback,window_total_cost,window_thermal_total,window_max_abs_imbalance\n",
    );
    for tr in &res.trajectories {
        let m = summarize(tr, cfg);
        s += &format!(
            "{},{},{},{},{:?},{:?},{:?}\n",
            m.scenario,
            m.steps,
            m.infeasible_steps,
            m.p0_fallback,
            m.window_total_cost,
            m.window_thermal_total,
            m.window_max_abs_imbalance
        );
    }
    write_bytes(&out.join(format!("summary_{tag}.csv")), s.as_bytes())
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> CliResult<()> {
    let spec = valid_grid(ctx)?;
    let out = out_dir(ctx)?.to_path_buf();
    let scenarios = load_scenarios(&a.scenarios.clone().unwrap_or_else(|| out.join("scenarios.csv")), &spec)?;
    let cfg = rollout_config(&a.rollout, scenarios[0].horizon());
    cfg.check(scenarios[0].horizon()).map_err(sim_failure)?;
    let tags = a.backend.clone().unwrap_or_else(|| vec!["oracle".into()]);
    let mut archs = Vec::new();
    for tag in &tags {
        if tag != "oracle" {
            archs.push(tag.parse::<Architecture>().exit(2)?);
        }
    }
    if a.model.is_some() && archs.len() != 1 {
        return fail(2, "--model needs exactly one proxy backend");
    }
    let mut timing = serde_json::Map::new();
    let mut totals = Vec::new();
    for tag in &tags {
        let model;
        let backend = if tag == "oracle" {
            Backend::Oracle(SolverOptions::default())
        } else {
            let arch: Architecture = tag.parse().exit(2)?;
            let dir = a.model.clone().unwrap_or_else(|| out.join(format!("model_{arch}")));
            model = load_model(&dir, &spec, Some(arch))?;
            Backend::Proxy(&model)
        };
        let clock = Instant::now();
        let res = run_batch(&scenarios, &spec, backend, &cfg, ctx.global.workers()).map_err(sim_failure)?;
        let wall = clock.elapsed().as_secs_f64() * 1e3;
        write_rollout(&out, tag, &res, &cfg)?;
        totals.push((tag.clone(), res.timing.total_ns() as f64 * 1e-6));
        timing.insert(tag.clone(), timing_json(&res.timing, wall));
    }
    let oracle_ms = totals.iter().find(|(t, _)| t == "oracle").map(|x| x.1);
    let ratios: serde_json::Map<String, Value> = totals
        .iter()
        .filter(|(t, _)| t != "oracle")
        .filter_map(|(t, ms)| oracle_ms.map(|o| (t.clone(), json!(o / ms))))
        .collect();
    let summary = json!({
        "scenarios": scenarios.len(),
        "backends": tags,
        "total_ms": totals.iter().map(|(t, ms)| (t.clone(), json!(ms))).collect::<serde_json::Map<_, _>>(),
        "speedup": ratios,
    });
    record(ctx, "simulate", json!({ "timing": timing, "summary": summary }))?;
    print_json(&summary);
    Ok(())
}

fn risk_failure(e: RiskError) -> Failure {
    Failure {
        code: match e {
            RiskError::MismatchedHorizons(_) => 5,
            RiskError::Settings(_) => 2,
            RiskError::Io(_) => 1,
        },
        msg: e.to_string(),
    }
}

fn trajectory_sources(out: &Path, a: &RiskArgs) -> CliResult<Vec<(String, PathBuf)>> {
    if let Some(list) = &a.trajectories {
        return Ok(list
            .iter()
            .map(|item| match item.split_once('=') {
                Some((tag, path)) => (tag.to_string(), PathBuf::from(path)),
                None => (item.clone(), out.join(format!("trajectories_{item}.csv"))),
            })
            .collect());
    }
    let mut found: Vec<(String, PathBuf)> = fs::read_dir(out)
        .map_err(|e| Failure {
            code: 2,
            msg: format!("cannot list {}: {e}", out.display()),
        })?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let tag = name.strip_prefix("trajectories_")?.strip_suffix(".csv")?.to_string();
            Some((tag, e.path()))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return fail(2, format!("no trajectories_*.csv files in {}", out.display()));
    }
    Ok(found)
}

fn cmd_risk(ctx: &Ctx, a: &RiskArgs) -> CliResult<()> {
    let spec = valid_grid(ctx)?;
    let out = out_dir(ctx)?.to_path_buf();
    let mut sets: Vec<(String, Vec<Trajectory>)> = Vec::new();
    for (tag, path) in trajectory_sources(&out, a)? {
        if !path.exists() {
            return Err(not_found(&path, "trajectory file"));
        }
        let trs = read_trajectories_csv(&path, &tag).map_err(|e| Failure {
            code: 4,
            msg: format!("{}: {e}", path.display()),
        })?;
        if trs.is_empty() {
            return fail(4, format!("{}: no trajectories", path.display()));
        }
        sets.push((tag, trs));
    }
    for (tag, trs) in &sets[1..] {
        check_aligned(&sets[0].1, trs).map_err(|e| Failure {
            code: 5,
            msg: format!("{} vs {tag}: {e}", sets[0].0),
        })?;
    }
    let horizon = sets[0].1[0].steps.len();
    let base = rollout_config(&RolloutArgs::default(), horizon);
    let mut settings = RiskSettings::new(
        a.alpha.unwrap_or(0.95),
        a.window_start.unwrap_or(base.window_start),
        a.window_end.unwrap_or(base.window_end),
        spec.penalties,
    );
    settings.left_tail = a.left_tail.unwrap_or(false);
    let svg_on = a.svg.unwrap_or(false);
    let (ws, we) = (settings.window_start, settings.window_end);
    let oracle_costs = sets
        .iter()
        .find(|(t, _)| t == "oracle")
        .map(|(_, trs)| window_costs(trs, ws.min(horizon), we.min(horizon)));
    let mut bands = Vec::new();
    let mut summary = serde_json::Map::new();
    for (tag, trs) in &sets {
        let report = build_report(trs, &QoiKind::SYSTEM, &settings, tag).map_err(risk_failure)?;
        write_with(&out.join(format!("risk_{tag}.csv")), |w| write_report_csv(w, &report))?;
        write_with(&out.join(format!("branches_{tag}.csv")), |w| write_branch_csv(w, &report))?;
        write_bytes(
            &out.join(format!("report_{tag}.json")),
            serde_json::to_string_pretty(&report).exit(1)?.as_bytes(),
        )?;
        bands.push((tag.clone(), cost_bands(trs, ws, we)));
        let costs = window_costs(trs, ws, we);
        if let (Some(oc), true) = (&oracle_costs, tag != "oracle") {
            let pairs = qq_pairs(oc, &costs);
            write_with(&out.join(format!("qq_{tag}.csv")), |w| write_qq_csv(w, &pairs))?;
            if svg_on {
                write_bytes(&out.join(format!("qq_{tag}.svg")), svg::qq_plot(tag, &pairs).as_bytes())?;
            }
        }
        let imb = report.system.iter().find(|s| s.kind == QoiKind::ImbalanceAbs);
        let max_pf = imb
            .and_then(|s| s.prob_failure.as_ref())
            .map(|p| p.iter().copied().fold(0.0, f64::max));
        summary.insert(
            tag.clone(),
            json!({
                "scenarios": trs.len(),
                "mean_window_cost": costs.iter().sum::<f64>() / costs.len() as f64,
                "max_prob_failure_imbalance": max_pf,
            }),
        );
    }
    write_with(&out.join("cost_bands.csv"), |w| write_bands_csv(w, &bands))?;
    if svg_on {
        write_bytes(&out.join("cost_bands.svg"), svg::band_plot(&bands).as_bytes())?;
    }
    record(ctx, "risk", json!({}))?;
    print_json(&Value::Object(summary));
    Ok(())
}

fn compare_timing(ctx: &Ctx, a: &TimingArgs) -> CliResult<()> {
    let spec = valid_grid(ctx)?;
    let out = out_dir(ctx)?.to_path_buf();
    let scenarios = load_scenarios(&a.scenarios.clone().unwrap_or_else(|| out.join("scenarios.csv")), &spec)?;
    let dir = a.model.clone().unwrap_or_else(|| out.join("model_e2elr"));
    let model = load_model(&dir, &spec, None)?;
    let cfg = rollout_config(&a.rollout, scenarios[0].horizon());
    cfg.check(scenarios[0].horizon()).map_err(sim_failure)?;

    let clock = Instant::now();
    let oracle = run_batch(&scenarios, &spec, Backend::Oracle(SolverOptions::default()), &cfg, 1).map_err(sim_failure)?;
    let oracle_wall = clock.elapsed().as_secs_f64() * 1e3;
    let clock = Instant::now();
    let proxy = run_batch(&scenarios, &spec, Backend::Proxy(&model), &cfg, ctx.global.workers()).map_err(sim_failure)?;
    let proxy_wall = clock.elapsed().as_secs_f64() * 1e3;

    let oracle_ms = oracle.timing.total_ns() as f64 * 1e-6;
    let proxy_ms = proxy.timing.total_ns() as f64 * 1e-6;
    let n = scenarios.len() as f64;
    let summary = json!({
        "scenarios": scenarios.len(),
        "steps": scenarios[0].horizon(),
        "proxy": model.architecture().as_str(),
        "oracle_total_ms": oracle_ms,
        "oracle_per_scenario_ms": oracle_ms / n,
        "proxy_total_ms": proxy_ms,
        "proxy_per_batch_ms": proxy_ms / proxy.timing.per_batch_ns.len().max(1) as f64,
        "ratio": oracle_ms / proxy_ms,
        "oracle_wall_ms": oracle_wall,
        "proxy_wall_ms": proxy_wall,
    });
    record(
        ctx,
        "compare_timing",
        json!({
            "summary": summary,
            "oracle": timing_json(&oracle.timing, oracle_wall),
            "proxy": timing_json(&proxy.timing, proxy_wall),
        }),
    )?;
    print_json(&summary);
    Ok(())
}
