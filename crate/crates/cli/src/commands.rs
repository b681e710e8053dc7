use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use nlpid_core::control::{Channel, ControllerKind};
use nlpid_core::metrics::{render_tables, MetricsReport, OpiWeights};
use nlpid_core::presets;
use nlpid_core::sim::{simulate, Termination};
use nlpid_core::stability::{render_reports, verify_controller};
use nlpid_core::tuning::{self, ga_optimize, sphere, Bounds, FitnessTemplate, GaConfig, GainVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, OutputFormat, Overrides, ScenarioConfig, TuneConfig, TuneTarget};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const REPORT_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A scenario file (or the empty default) with the text it was parsed from.
pub struct ScenarioSource {
    pub config: ScenarioConfig,
    pub text: String,
    pub base: PathBuf,
}

impl ScenarioSource {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let (config, text) = ScenarioConfig::load(p)?;
                Ok(Self {
                    config,
                    text,
                    base: crate::base_dir(p),
                })
            }
            None => Ok(Self {
                config: ScenarioConfig::default(),
                text: String::new(),
                base: PathBuf::new(),
            }),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    overrides: OverridesRecord,
    seed: u64,
    controller: &'a str,
    scenario: &'a nlpid_core::sim::Scenario,
    termination: &'a Termination,
    thrust_guard_ticks: usize,
    outputs: Vec<&'static str>,
}

#[derive(Serialize)]
struct OverridesRecord {
    preset_controller: Option<String>,
    preset_trajectory: Option<String>,
    dt: Option<f64>,
    t_final: Option<f64>,
    seed: Option<u64>,
}

impl From<&Overrides> for OverridesRecord {
    fn from(o: &Overrides) -> Self {
        Self {
            preset_controller: o.preset_controller.clone(),
            preset_trajectory: o.preset_trajectory.clone(),
            dt: o.dt,
            t_final: o.t_final,
            seed: o.seed,
        }
    }
}

/// Writes every file only after all of them have been produced in memory.
fn write_all(out: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, bytes) in files {
        let path = out.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn run(source: &ScenarioSource, overrides: &Overrides, out: &Path, formats: &[OutputFormat]) -> Result<()> {
    let resolved = source.config.resolve(overrides, &source.base)?;
    let log = simulate(&resolved.scenario)?;
    let report = MetricsReport::from_log(&log, &OpiWeights::standard())?;

    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    if formats.contains(&OutputFormat::Csv) {
        let mut csv = Vec::new();
        log.write_csv(&mut csv)?;
        files.push((TIMESERIES_FILE, csv));
    }
    if formats.contains(&OutputFormat::Report) {
        files.push((REPORT_FILE, pretty_json(&report)?));
    }
    let manifest = Manifest {
        tool: "nlpid",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(source.text.as_bytes()),
        overrides: overrides.into(),
        seed: resolved.seed,
        controller: &resolved.controller_label,
        scenario: &resolved.scenario,
        termination: &log.termination,
        thrust_guard_ticks: log.thrust_guard_ticks,
        outputs: files.iter().map(|(n, _)| *n).collect(),
    };
    files.push((MANIFEST_FILE, pretty_json(&manifest)?));
    write_all(out, &files)?;

    if formats.contains(&OutputFormat::Report) {
        print!("{}", report.to_table());
    }
    if !log.termination.is_completed() {
        eprintln!("warning: run stopped early: {:?}", log.termination);
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareColumn<'a> {
    label: String,
    controller: &'a str,
    config_sha256: String,
    report: &'a MetricsReport,
}

pub fn compare(columns: &[(ScenarioSource, Overrides)], out: &Path) -> Result<()> {
    let mut runs = Vec::new();
    for (source, overrides) in columns {
        let resolved = source.config.resolve(overrides, &source.base)?;
        let log = simulate(&resolved.scenario)?;
        let report = MetricsReport::from_log(&log, &OpiWeights::standard())?;
        runs.push((resolved, report, sha256_hex(source.text.as_bytes())));
    }
    let mut labels: Vec<String> = runs.iter().map(|(r, _, _)| r.controller_label.clone()).collect();
    if labels.iter().skip(1).any(|l| *l == labels[0]) {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = format!("{l}#{}", i + 1);
        }
    }
    let table = render_tables(
        &labels
            .iter()
            .zip(&runs)
            .map(|(l, (_, rep, _))| (l.as_str(), rep))
            .collect::<Vec<_>>(),
    );
    let json: Vec<CompareColumn> = labels
        .iter()
        .zip(&runs)
        .map(|(label, (res, rep, hash))| CompareColumn {
            label: label.clone(),
            controller: &res.controller_label,
            config_sha256: hash.clone(),
            report: rep,
        })
        .collect();
    write_all(
        out,
        &[("compare.json", pretty_json(&json)?), ("compare.txt", table.clone().into_bytes())],
    )?;
    print!("{table}");
    Ok(())
}

pub fn stability(gains: Option<&Path>, preset: Option<&str>, config: Option<&Path>, out: Option<&Path>) -> Result<ExitCode> {
    let source = ScenarioSource::load(config)?;
    let controller = match (gains, preset) {
        (Some(_), Some(_)) => bail!("pass either --gains or --preset-controller, not both"),
        (Some(path), None) => config::load_gains(path)?,
        (None, Some(name)) => config::named_controller(name)?,
        (None, None) => {
            let overrides = Overrides::default();
            source.config.resolve(&overrides, &source.base)?.scenario.controller
        }
    };
    let params = source.config.params;
    params.validate()?;
    let reports = verify_controller(&controller, &params);
    print!("{}", render_reports(&reports));
    if let Some(dir) = out {
        write_all(dir, &[("stability.json", pretty_json(&reports)?)])?;
    }
    let failing: Vec<String> = Channel::ALL
        .iter()
        .filter_map(|&c| {
            let r = reports.get(c);
            (!r.stable).then(|| format!("{}: {} <= 0", c.name(), r.failing_minor.as_deref().unwrap_or("minor")))
        })
        .collect();
    if failing.is_empty() {
        println!("all subsystems Hurwitz stable over their sector boxes");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("not certified: {}", failing.join("; "));
        Ok(ExitCode::from(2))
    }
}

#[derive(Serialize)]
struct TuneSummary<'a> {
    target: TuneTarget,
    seed: u64,
    config_sha256: String,
    best_fitness: f64,
    evaluations: usize,
    generations: usize,
    best: &'a [f64],
}

fn history_csv(history: &[tuning::GenerationRecord]) -> Vec<u8> {
    let mut s = String::from("generation,best,mean,best_so_far\n");
    for h in history {
        let _ = writeln!(s, "{},{:.10e},{:.10e},{:.10e}", h.generation, h.best, h.mean, h.best_so_far);
    }
    s.into_bytes()
}

pub fn tune(path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let (cfg, text) = TuneConfig::load(path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let ga = |bounds: Bounds| GaConfig {
        population: cfg.population,
        generations: cfg.generations,
        crossover_prob: cfg.crossover_prob,
        mutation_prob: cfg.mutation_prob,
        mutation_scale: cfg.mutation_scale,
        tournament_size: cfg.tournament_size,
        seed,
        bounds,
    };

    let (result, extra): (tuning::GaResult, Option<(&str, Vec<u8>)>) = match cfg.target {
        TuneTarget::Sphere => {
            let s = &cfg.sphere;
            let bounds = Bounds {
                lower: vec![s.lower; s.dim],
                upper: vec![s.upper; s.dim],
            };
            let centre = s.centre.clone().unwrap_or_else(|| vec![0.0; s.dim]);
            if centre.len() != s.dim {
                bail!("sphere centre has {} entries, dim is {}", centre.len(), s.dim);
            }
            (ga_optimize(&ga(bounds), &[], |x| sphere(x, &centre))?, None)
        }
        TuneTarget::Nlpid | TuneTarget::Lpid => {
            let kind = if cfg.target == TuneTarget::Nlpid {
                ControllerKind::Nlpid
            } else {
                ControllerKind::Lpid
            };
            let mut template = FitnessTemplate::step(kind);
            if let Some(t) = cfg.t_final {
                template.scenario.t_final = t;
                template.scenario.trajectory.t_final = t;
            }
            if let Some(dt) = cfg.dt {
                template.scenario.dt = dt;
            }
            template.scenario.validate()?;
            let seeds = if cfg.seed_with_preset {
                vec![GainVector::encode(&template.scenario.controller)]
            } else {
                Vec::new()
            };
            let (best, result) = tuning::tune(&ga(Bounds::reference(kind)), &template, kind, &seeds)?;
            let gains = config::gains_to_toml(&best.decode())?;
            (result, Some(("best_gains.toml", gains.into_bytes())))
        }
    };

    let summary = TuneSummary {
        target: cfg.target,
        seed,
        config_sha256: sha256_hex(text.as_bytes()),
        best_fitness: result.best_fitness,
        evaluations: result.evaluations,
        generations: result.history.len(),
        best: &result.best,
    };
    let mut files = vec![("history.csv", history_csv(&result.history)), ("tune.json", pretty_json(&summary)?)];
    files.extend(extra);
    write_all(out, &files)?;
    println!(
        "best fitness {:.6} after {} generations ({} evaluations)",
        result.best_fitness,
        result.history.len(),
        result.evaluations
    );
    Ok(())
}

pub fn presets_listing() -> String {
    let mut s = String::from("controllers:\n");
    for name in presets::CONTROLLER_PRESETS {
        let kind = presets::controller(name).map(|g| config::kind_name(g.kind())).unwrap_or("?");
        let _ = writeln!(s, "  {name:<14} {kind}");
    }
    s.push_str("trajectories:\n");
    for name in presets::TRAJECTORY_PRESETS {
        if let Some(t) = presets::trajectory(name) {
            let shape = match t.kind {
                nlpid_core::TrajectoryKind::Step { .. } => "unit step",
                nlpid_core::TrajectoryKind::Circular { .. } => "circle",
                nlpid_core::TrajectoryKind::Helical { .. } => "helix",
                nlpid_core::TrajectoryKind::Square { .. } => "square pulses",
            };
            let _ = writeln!(s, "  {name:<14} {shape}, {} s", t.t_final);
        }
    }
    s
}
