use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rgls_core::experiments::{
    build_registration_pair, solver_params, source_wavelet, CaseId, Scenario, ScenarioManifest,
    ScenarioSpec,
};
use rgls_core::inversion::{first_at_or_below, hump_height, invert_with};
use rgls_core::io::{read_json, read_model, read_survey, read_trace, write_json, write_model, write_survey, write_trace};
use rgls_core::registration::{register, register_gather, warped_misfit};
use rgls_core::spline::apply_warp;
use rgls_core::wave::forward_survey;
use rgls_core::{AcquisitionGeometry, LfaKind, PmlConfig, Trace, VelocityModel, WarpModel};

use crate::config::{BadConfig, RunConfig};
use crate::{Cli, Command, ForwardArgs, InvertArgs, MakeScenarioArgs, RegisterArgs, ReportArgs};

pub const MANIFEST: &str = "manifest.json";
pub const TRUE_MODEL: &str = "true_model.bin";
pub const INITIAL_MODEL: &str = "initial_model.bin";
pub const GEOMETRY: &str = "geometry.json";
pub const SURVEY_DIR: &str = "survey";
pub const CONVERGENCE: &str = "convergence.csv";
pub const REGISTRATION_REPORT: &str = "registration.json";
pub const INVERSION_SUMMARY: &str = "summary.json";

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(BadConfig("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::MakeScenario(a) => make_scenario(cli, cfg, a),
        Command::Forward(a) => forward(cli, cfg, a),
        Command::Register(a) => register_cmd(cli, cfg, a),
        Command::Invert(a) => invert_cmd(cli, cfg, a),
        Command::Report(a) => report(a),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Written by `make-scenario` for the registration cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistrationManifest {
    case_id: CaseId,
    rng_seed: u64,
    noise_sigma: f64,
    f_center: f64,
    n: usize,
    dt: f64,
    files: Vec<String>,
}

fn make_scenario(cli: &Cli, mut cfg: RunConfig, a: &MakeScenarioArgs) -> Result<()> {
    let sc = &mut cfg.scenario;
    if let Some(c) = &a.case {
        sc.case = c.clone();
    }
    if let Some(s) = a.scale {
        sc.scale = s;
    }
    sc.f_center = a.f_center.or(sc.f_center);
    sc.noise_sigma = a.noise_sigma.or(sc.noise_sigma);
    sc.pml_width = a.pml_width.or(sc.pml_width);
    let case: CaseId = sc.case.parse()?;
    let mut spec = ScenarioSpec::new(case, sc.scale, cfg.seed);
    if let Some(f) = sc.f_center {
        spec.f_center = f;
    }
    if let Some(s) = sc.noise_sigma {
        spec.noise_sigma = s;
    }
    spec.validate()?;
    create_out(&cli.out)?;

    if case.is_registration() {
        let pair = build_registration_pair(case, spec.rng_seed, spec.noise_sigma)?;
        let mut files = vec!["d.csv".to_string(), "u.csv".to_string()];
        write_trace(&cli.out.join("d.csv"), &pair.d)?;
        write_trace(&cli.out.join("u.csv"), &pair.u)?;
        if let Some(p) = &pair.truth {
            write_trace(&cli.out.join("truth.csv"), p)?;
            files.push("truth.csv".into());
        }
        write_json(
            &cli.out.join(MANIFEST),
            &RegistrationManifest {
                case_id: case,
                rng_seed: spec.rng_seed,
                noise_sigma: spec.noise_sigma,
                f_center: pair.f_center,
                n: pair.d.len(),
                dt: pair.d.dt,
                files,
            },
        )?;
        cfg.write_resolved(&cli.out)?;
        println!("{case}: wrote trace pair to {}", cli.out.display());
        return Ok(());
    }

    let mut scenario = Scenario::build(&spec)?;
    if let Some(w) = sc.pml_width {
        let mut pml = PmlConfig::for_velocity(scenario.v_bounds.1, scenario.true_model.dx);
        pml.width = w;
        pml.validate()?;
        scenario.params = solver_params(&spec, scenario.v_bounds, Some(pml))?;
        scenario.wavelet = source_wavelet(&spec, &scenario.params)?;
    }
    write_model(&cli.out.join(TRUE_MODEL), &scenario.true_model)?;
    write_model(&cli.out.join(INITIAL_MODEL), &scenario.initial_model)?;
    write_json(&cli.out.join(GEOMETRY), &scenario.geometry)?;
    let manifest = scenario.manifest();
    write_json(&cli.out.join(MANIFEST), &manifest)?;
    cfg.write_resolved(&cli.out)?;
    println!(
        "{case}: {}x{} grid, {} shots x {} receivers, nt {} dt {:.3e} -> {}",
        manifest.nx,
        manifest.nz,
        manifest.n_shots,
        manifest.n_receivers,
        manifest.params.nt,
        manifest.params.dt,
        cli.out.display()
    );
    Ok(())
}

struct LoadedScenario {
    manifest: ScenarioManifest,
    true_model: VelocityModel,
    initial_model: VelocityModel,
    geometry: AcquisitionGeometry,
    wavelet: Trace,
}

fn load_scenario(dir: &Path) -> Result<LoadedScenario> {
    let manifest: ScenarioManifest = read_json(&dir.join(MANIFEST))
        .with_context(|| format!("{} is not an inversion scenario directory", dir.display()))?;
    let wavelet = source_wavelet(&manifest.spec, &manifest.params)?;
    Ok(LoadedScenario {
        true_model: read_model(&dir.join(TRUE_MODEL))?,
        initial_model: read_model(&dir.join(INITIAL_MODEL))?,
        geometry: read_json(&dir.join(GEOMETRY))?,
        manifest,
        wavelet,
    })
}

fn forward(cli: &Cli, cfg: RunConfig, a: &ForwardArgs) -> Result<()> {
    let sc = load_scenario(&a.scenario)?;
    let model = match &a.model {
        Some(p) => read_model(p)?,
        None => sc.true_model.clone(),
    };
    let survey = forward_survey(&model, &sc.geometry, &sc.wavelet, &sc.manifest.params)?;
    let dir = cli.out.join(SURVEY_DIR);
    write_survey(&dir, &survey)?;
    cfg.write_resolved(&cli.out)?;
    println!("{} shots written to {}", survey.len(), dir.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistrationReport {
    lfa: LfaKind,
    n_bands: usize,
    converged: bool,
    fold_warning: bool,
    misfit_initial: f64,
    misfit_final: f64,
    /// `None` when the registered misfit is exactly zero.
    reduction: Option<f64>,
    /// Largest `|p(t) − p*(t)|`, s, when the true warp was supplied.
    max_warp_error: Option<f64>,
}

fn register_cmd(cli: &Cli, mut cfg: RunConfig, a: &RegisterArgs) -> Result<()> {
    let r = &mut cfg.registration;
    if let Some(v) = a.bands {
        r.n_bands = v;
    }
    if let Some(v) = a.f_center {
        r.f_center = v;
    }
    if let Some(v) = &a.lfa {
        r.lfa = v.parse()?;
    }
    if let Some(v) = a.penalty {
        r.penalty_weight = v;
    }
    if let Some(v) = a.intervals {
        r.n_intervals = v;
    }
    if let Some(v) = a.newton_max_iter {
        r.newton_max_iter = v;
    }
    if let Some(v) = a.stride {
        r.stride = v;
    }
    let sched = r.schedule(r.f_center)?;
    create_out(&cli.out)?;

    if a.obs.is_dir() {
        let obs = read_survey(&a.obs)?;
        let pred = read_survey(&a.pred)?;
        if obs.len() != pred.len() {
            bail!("surveys have {} and {} shots", obs.len(), pred.len());
        }
        let mut warps: Vec<Vec<WarpModel>> = Vec::with_capacity(obs.len());
        for (o, p) in obs.iter().zip(&pred) {
            warps.push(register_gather(o, p, &sched, r.lfa, r.stride.max(1))?);
        }
        write_json(&cli.out.join("warps.json"), &warps)?;
        cfg.write_resolved(&cli.out)?;
        println!("registered {} shots", warps.len());
        return Ok(());
    }

    let d = read_trace(&a.obs)?;
    let u = read_trace(&a.pred)?;
    let res = register(&d, &u, &sched, r.lfa)?;
    let identity = WarpModel::identity(res.warp.basis.clone());
    let before = warped_misfit(&d, &u, &identity)?;
    let after = warped_misfit(&d, &u, &res.warp)?;
    let max_warp_error = match &a.truth {
        Some(p) => {
            let p = read_trace(p)?;
            Some(
                p.times()
                    .zip(&p.samples)
                    .fold(0.0f64, |m, (t, ps)| m.max((res.warp.warp(t) - ps).abs())),
            )
        }
        None => None,
    };
    let moved = apply_warp(&u, &res.warp, 1.0)?;

    write_json(&cli.out.join("warps.json"), &res.warp)?;
    let mut hist = String::from("step,band,objective\n");
    for (k, (band, obj)) in res.objective_history.iter().enumerate() {
        hist.push_str(&format!("{k},{band},{obj}\n"));
    }
    fs::write(cli.out.join("objective_history.csv"), hist)?;
    let mut traces = String::from("t,d,u,d_tilde\n");
    for (i, t) in d.times().enumerate() {
        traces.push_str(&format!("{t},{},{},{}\n", d.samples[i], u.samples[i], moved.samples[i]));
    }
    fs::write(cli.out.join("registered.csv"), traces)?;
    let report = RegistrationReport {
        lfa: r.lfa,
        n_bands: sched.bands.len(),
        converged: res.converged,
        fold_warning: res.fold_warning,
        misfit_initial: before,
        misfit_final: after,
        reduction: (after > 0.0).then(|| before / after),
        max_warp_error,
    };
    write_json(&cli.out.join(REGISTRATION_REPORT), &report)?;
    cfg.write_resolved(&cli.out)?;
    print_registration(&report);
    Ok(())
}

fn print_registration(r: &RegistrationReport) {
    println!("lfa {} over {} bands, converged: {}", r.lfa, r.n_bands, r.converged);
    match r.reduction {
        Some(x) => println!("misfit {:.6e} -> {:.6e} (reduction {x:.2}x)", r.misfit_initial, r.misfit_final),
        None => println!("misfit {:.6e} -> 0", r.misfit_initial),
    }
    if let Some(e) = r.max_warp_error {
        println!("max warp error {:.2} ms", 1e3 * e);
    }
    if r.fold_warning {
        println!("warning: registered warp folds");
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InversionSummary {
    method: String,
    iterations: usize,
    misfit_initial: f64,
    misfit_final: f64,
    model_rms_initial: f64,
    model_rms_final: f64,
    switch_iteration: Option<usize>,
}

fn invert_cmd(cli: &Cli, mut cfg: RunConfig, a: &InvertArgs) -> Result<()> {
    let sc = load_scenario(&a.scenario)?;
    let inv = &mut cfg.inversion;
    if let Some(v) = a.method {
        inv.method = v;
    }
    if let Some(v) = a.max_iter {
        inv.max_iter = v;
    }
    if let Some(v) = a.step_rule {
        inv.step_rule = v;
    }
    if let Some(v) = a.step_cap {
        inv.step_cap = v;
    }
    if let Some(v) = a.alpha {
        inv.alpha = v;
    }
    inv.switch_to_ls |= a.switch_to_ls;
    if let Some(v) = a.switch_patience {
        inv.switch_patience = v;
    }
    if let Some(v) = a.switch_rel_tol {
        inv.switch_rel_tol = v;
    }
    if a.stride.is_some() {
        inv.stride = a.stride;
    }
    if let Some(v) = a.snapshot_every {
        inv.snapshot_every = v;
    }
    let bounds = inv.v_bounds.unwrap_or(sc.manifest.v_bounds);
    if a.v_min.is_some() || a.v_max.is_some() {
        inv.v_bounds = Some((a.v_min.unwrap_or(bounds.0), a.v_max.unwrap_or(bounds.1)));
    }
    let spec = &sc.manifest.spec;
    let icfg = inv.build(&cfg.registration, spec.f_center, spec.scale, sc.manifest.v_bounds)?;
    // the resolved file records the stride and bounds actually used
    inv.stride = Some(icfg.adjoint_spec.stride);
    inv.v_bounds = Some(icfg.v_bounds);
    let snapshot_every = inv.snapshot_every;
    create_out(&cli.out)?;
    cfg.write_resolved(&cli.out)?;

    let obs_dir = a.obs.clone().or_else(|| {
        let d = a.scenario.join(SURVEY_DIR);
        d.join(rgls_core::io::SURVEY_MANIFEST).exists().then_some(d)
    });
    let obs = match obs_dir {
        Some(d) => read_survey(&d)?,
        None => {
            log::info!("no observed survey found; modeling it from the true model");
            forward_survey(&sc.true_model, &sc.geometry, &sc.wavelet, &sc.manifest.params)?
        }
    };

    let snap_dir = cli.out.join("snapshots");
    if snapshot_every > 0 {
        create_out(&snap_dir)?;
    }
    let adjoint_dir = cli.out.join("adjoint");
    let last_good = cli.out.join("model_last_good.bin");
    let result = invert_with(
        &obs,
        &sc.geometry,
        &sc.manifest.params,
        &sc.initial_model,
        &icfg,
        Some(&sc.true_model),
        |state| {
            write_model(&last_good, state.model)?;
            if snapshot_every > 0 && state.iter % snapshot_every == 0 {
                write_model(&snap_dir.join(format!("model_{:04}.bin", state.iter)), state.model)?;
            }
            if cli.dump_adjoint {
                let dir = adjoint_dir.join(format!("iter_{:04}", state.iter));
                write_survey(&dir, state.residuals)?;
                write_json(&dir.join("warps.json"), state.warps)?;
            }
            Ok(())
        },
    );
    let (model, log) = match result {
        Ok(r) => r,
        Err(e) => {
            return Err(anyhow::Error::new(e).context(format!(
                "inversion aborted; last good model kept at {}",
                last_good.display()
            )))
        }
    };
    log.write_csv(&cli.out.join(CONVERGENCE))?;
    write_model(&cli.out.join("model_final.bin"), &model)?;
    let first = log.records.first().context("empty convergence log")?;
    let last = log.records.last().context("empty convergence log")?;
    let summary = InversionSummary {
        method: icfg.adjoint_spec.mode.to_string(),
        iterations: last.iter,
        misfit_initial: first.misfit,
        misfit_final: last.misfit,
        model_rms_initial: first.model_rms.unwrap_or(f64::NAN),
        model_rms_final: last.model_rms.unwrap_or(f64::NAN),
        switch_iteration: log.switch_index().map(|i| log.records[i].iter),
    };
    write_json(&cli.out.join(INVERSION_SUMMARY), &summary)?;
    println!("final J {:.6e}", summary.misfit_final);
    println!("final model_rms {:.3} (initial {:.3})", summary.model_rms_final, summary.model_rms_initial);
    if let Some(k) = summary.switch_iteration {
        println!("switched to ls at iteration {k}");
    }
    Ok(())
}

/// Columns of a convergence CSV.
struct LogRows {
    modes: Vec<String>,
    misfit: Vec<f64>,
    rms: Vec<f64>,
}

fn read_convergence(path: &Path) -> Result<LogRows> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some("iter,mode,J,model_rms,step_size") {
        bail!("{}: unexpected header", path.display());
    }
    let mut rows = LogRows {
        modes: Vec::new(),
        misfit: Vec::new(),
        rms: Vec::new(),
    };
    for (k, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            bail!("{}: line {} has {} columns", path.display(), k + 2, cols.len());
        }
        rows.modes.push(cols[1].to_string());
        rows.misfit.push(cols[2].parse().with_context(|| format!("line {}", k + 2))?);
        if !cols[3].is_empty() {
            rows.rms.push(cols[3].parse().with_context(|| format!("line {}", k + 2))?);
        }
    }
    if rows.misfit.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(rows)
}

fn report(a: &ReportArgs) -> Result<()> {
    let reg = a.run.join(REGISTRATION_REPORT);
    let conv = a.run.join(CONVERGENCE);
    if reg.exists() {
        let r: RegistrationReport = read_json(&reg)?;
        print_registration(&r);
        return Ok(());
    }
    if !conv.exists() {
        return Err(BadConfig(format!(
            "{} holds neither {REGISTRATION_REPORT} nor {CONVERGENCE}",
            a.run.display()
        ))
        .into());
    }
    let rows = read_convergence(&conv)?;
    let n = rows.misfit.len();
    println!("records {n}, modes {}", summarize_modes(&rows.modes));
    println!(
        "J {:.6e} -> {:.6e} (ratio {:.4}), largest transient rise {:.2}%",
        rows.misfit[0],
        rows.misfit[n - 1],
        rows.misfit[n - 1] / rows.misfit[0],
        100.0 * hump_height(&rows.misfit)
    );
    if let (Some(first), Some(last)) = (rows.rms.first(), rows.rms.last()) {
        let min = rows.rms.iter().cloned().fold(f64::INFINITY, f64::min);
        println!("model_rms {first:.3} -> {last:.3} (min {min:.3}, ratio {:.4})", last / first);
        for frac in [0.75, 0.5] {
            match first_at_or_below(&rows.rms, frac * first) {
                Some(k) => println!("  reached {:.0}% of initial at record {k}", 100.0 * frac),
                None => println!("  never reached {:.0}% of initial", 100.0 * frac),
            }
        }
    }
    Ok(())
}

/// `rgls×12, ls×8` style run-length summary.
fn summarize_modes(modes: &[String]) -> String {
    let mut out: Vec<(String, usize)> = Vec::new();
    for m in modes {
        match out.last_mut() {
            Some((last, n)) if last == m => *n += 1,
            _ => out.push((m.clone(), 1)),
        }
    }
    out.iter().map(|(m, n)| format!("{m}x{n}")).collect::<Vec<_>>().join(", ")
}
