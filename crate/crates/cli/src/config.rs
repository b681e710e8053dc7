//! TOML scenario and tuning configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nlpid_core::control::{CascadeSettings, ControllerGains, ControllerKind};
use nlpid_core::dynamics::{QuadParams, RigidBodyState};
use nlpid_core::presets;
use nlpid_core::sim::Scenario;
use nlpid_core::trajectories::TrajectorySpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub params: QuadParams,
    #[serde(default)]
    pub controller: ControllerSection,
    /// Either `preset = "<name>"` or an inline trajectory (`kind = ...`).
    #[serde(default)]
    pub trajectory: Option<toml::Table>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Exactly one of `preset`, `gains_file`, or `kind` + `gains`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub preset: Option<String>,
    pub gains_file: Option<PathBuf>,
    pub kind: Option<ControllerKind>,
    pub gains: Option<toml::Table>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    /// Recorded in the manifest; the simulator itself draws no randomness.
    pub seed: Option<u64>,
    pub controller_rate: Option<u32>,
    pub initial_position: Option<[f64; 3]>,
    pub angle_limit: Option<f64>,
    pub integral_limit: Option<f64>,
    pub feasibility_clamp: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub formats: Option<Vec<OutputFormat>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Report,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset_controller: Option<String>,
    pub preset_trajectory: Option<String>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub seed: Option<u64>,
}

/// A fully resolved run: the scenario plus bookkeeping for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub scenario: Scenario,
    pub controller_label: String,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok((cfg, text))
    }

    /// Builds the scenario. Relative `gains_file` paths resolve against `base`.
    pub fn resolve(&self, overrides: &Overrides, base: &Path) -> Result<Resolved> {
        let (controller, controller_label) = match &overrides.preset_controller {
            Some(name) => (named_controller(name)?, name.clone()),
            None => self.controller.resolve(base)?,
        };

        let mut trajectory = match (&overrides.preset_trajectory, &self.trajectory) {
            (Some(name), _) => named_trajectory(name)?,
            (None, Some(table)) => trajectory_from_table(table)?,
            (None, None) => named_trajectory(presets::STEP)?,
        };

        let s = &self.sim;
        let t_final = overrides.t_final.or(s.t_final).unwrap_or(trajectory.t_final);
        trajectory.t_final = t_final;

        let mut scenario = Scenario::new(controller, trajectory);
        scenario.params = self.params;
        scenario.t_final = t_final;
        scenario.dt = overrides.dt.or(s.dt).unwrap_or(Scenario::DEFAULT_DT);
        if let Some(rate) = s.controller_rate {
            scenario.controller_rate = rate;
        }
        if let Some([x, y, z]) = s.initial_position {
            scenario.initial_state = RigidBodyState::at_position(x, y, z);
        }
        let defaults = CascadeSettings::default();
        scenario.cascade = CascadeSettings {
            angle_limit: s.angle_limit.unwrap_or(defaults.angle_limit),
            integral_limit: s.integral_limit.or(defaults.integral_limit),
        };
        scenario.feasibility_clamp = s.feasibility_clamp.unwrap_or(false);
        scenario.validate()?;

        Ok(Resolved {
            scenario,
            controller_label,
            seed: overrides.seed.or(s.seed).unwrap_or(0),
        })
    }

    pub fn formats(&self) -> Vec<OutputFormat> {
        self.output
            .formats
            .clone()
            .unwrap_or_else(|| vec![OutputFormat::Csv, OutputFormat::Report])
    }
}

impl ControllerSection {
    fn resolve(&self, base: &Path) -> Result<(ControllerGains, String)> {
        match (&self.preset, &self.gains_file, &self.kind, &self.gains) {
            (Some(name), None, None, None) => Ok((named_controller(name)?, name.clone())),
            (None, Some(file), None, None) => {
                let path = base.join(file);
                Ok((load_gains(&path)?, file.display().to_string()))
            }
            (None, None, Some(kind), Some(gains)) => {
                let mut t = toml::Table::new();
                t.insert("kind".into(), toml::Value::try_from(kind)?);
                t.insert("gains".into(), toml::Value::Table(gains.clone()));
                let g: ControllerGains = toml::Value::Table(t).try_into().context("parsing [controller.gains]")?;
                Ok((g, format!("inline-{}", kind_name(*kind))))
            }
            (None, None, None, None) => Ok((named_controller(presets::PAPER_NLPID)?, presets::PAPER_NLPID.into())),
            _ => bail!("[controller] needs exactly one of `preset`, `gains_file`, or `kind` with `gains`"),
        }
    }
}

pub fn kind_name(kind: ControllerKind) -> &'static str {
    match kind {
        ControllerKind::Lpid => "lpid",
        ControllerKind::Nlpid => "nlpid",
    }
}

pub fn named_controller(name: &str) -> Result<ControllerGains> {
    presets::controller(name).with_context(|| {
        format!("unknown controller preset `{name}` (available: {})", presets::CONTROLLER_PRESETS.join(", "))
    })
}

pub fn named_trajectory(name: &str) -> Result<TrajectorySpec> {
    presets::trajectory(name).with_context(|| {
        format!("unknown trajectory preset `{name}` (available: {})", presets::TRAJECTORY_PRESETS.join(", "))
    })
}

fn trajectory_from_table(table: &toml::Table) -> Result<TrajectorySpec> {
    if let Some(name) = table.get("preset") {
        if table.len() > 1 {
            bail!("[trajectory] with `preset` takes no other keys; set the horizon under [sim]");
        }
        let name = name.as_str().context("[trajectory] preset must be a string")?;
        return named_trajectory(name);
    }
    let spec: TrajectorySpec = toml::Value::Table(table.clone()).try_into().context("parsing [trajectory]")?;
    spec.validate()?;
    Ok(spec)
}

/// A gain-set file: `kind = "nlpid"` followed by `[gains.x]` ... `[gains.psi]`.
pub fn load_gains(path: &Path) -> Result<ControllerGains> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let g: ControllerGains = toml::from_str(&text).with_context(|| format!("parsing gains file {}", path.display()))?;
    g.validate()?;
    Ok(g)
}

pub fn gains_to_toml(gains: &ControllerGains) -> Result<String> {
    Ok(toml::to_string(gains)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneTarget {
    Nlpid,
    Lpid,
    /// Sphere function over a box; exercises the optimiser alone.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub target: TuneTarget,
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default = "default_crossover")]
    pub crossover_prob: f64,
    #[serde(default = "default_mutation")]
    pub mutation_prob: f64,
    #[serde(default = "default_mutation")]
    pub mutation_scale: f64,
    #[serde(default = "default_tournament")]
    pub tournament_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Put the matching reference gain set into the initial population.
    #[serde(default)]
    pub seed_with_preset: bool,
    /// Step-scenario horizon for fitness runs.
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    #[serde(default)]
    pub sphere: SphereSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSection {
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    /// Defaults to the origin.
    pub centre: Option<Vec<f64>>,
}

impl Default for SphereSection {
    fn default() -> Self {
        Self {
            dim: 4,
            lower: -5.0,
            upper: 5.0,
            centre: None,
        }
    }
}

fn default_population() -> usize {
    40
}
fn default_generations() -> usize {
    50
}
fn default_crossover() -> f64 {
    0.9
}
fn default_mutation() -> f64 {
    0.1
}
fn default_tournament() -> usize {
    3
}

impl TuneConfig {
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok((cfg, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<Resolved> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.resolve(&Overrides::default(), Path::new("."))
    }

    #[test]
    fn empty_config_is_the_nlpid_step() {
        let r = resolve("").unwrap();
        assert_eq!(r.scenario, presets::scenario(presets::PAPER_NLPID, presets::STEP).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ScenarioConfig>("[sim]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<ScenarioConfig>("[weird]\n").is_err());
        assert!(resolve("[trajectory]\nkind = \"circular\"\nt_final = 5.0\nradius2 = 1\n").is_err());
        assert!(resolve("[controller]\nkind = \"lpid\"\n[controller.gains.x]\nkp = 1\n").is_err());
    }

    #[test]
    fn inline_gains_and_custom_trajectory() {
        let mut text = String::from("[controller]\nkind = \"lpid\"\n");
        for c in ["x", "y", "z", "phi", "theta", "psi"] {
            text.push_str(&format!("[controller.gains.{c}]\nkp = 1.0\nki = 0.1\nkd = 0.5\n"));
        }
        text.push_str("[trajectory]\nkind = \"helical\"\nradius = 2.0\nt_final = 10.0\n[sim]\ndt = 0.002\n");
        let r = resolve(&text).unwrap();
        assert_eq!(r.scenario.controller.kind(), ControllerKind::Lpid);
        assert_eq!(r.scenario.t_final, 10.0);
        assert_eq!(r.scenario.dt, 0.002);
    }

    #[test]
    fn overrides_win() {
        let cfg: ScenarioConfig = toml::from_str("[controller]\npreset = \"paper-nlpid\"\n[sim]\nt_final = 3.0\n").unwrap();
        let o = Overrides {
            preset_controller: Some("paper-lpid".into()),
            preset_trajectory: Some("case1-circle".into()),
            t_final: Some(2.0),
            ..Default::default()
        };
        let r = cfg.resolve(&o, Path::new(".")).unwrap();
        assert_eq!(r.scenario.controller.kind(), ControllerKind::Lpid);
        assert_eq!(r.scenario.t_final, 2.0);
        assert!(matches!(r.scenario.trajectory.kind, nlpid_core::TrajectoryKind::Circular { .. }));
    }

    #[test]
    fn conflicting_controller_sources() {
        assert!(resolve("[controller]\npreset = \"paper-lpid\"\ngains_file = \"g.toml\"\n").is_err());
        assert!(resolve("[controller]\npreset = \"nope\"\n").is_err());
    }

    #[test]
    fn gains_round_trip_through_toml() {
        for name in presets::CONTROLLER_PRESETS {
            let g = presets::controller(name).unwrap();
            let text = gains_to_toml(&g).unwrap();
            assert_eq!(toml::from_str::<ControllerGains>(&text).unwrap(), g);
        }
    }

    #[test]
    fn tune_config_defaults() {
        let c: TuneConfig = toml::from_str("target = \"sphere\"\n").unwrap();
        assert_eq!((c.population, c.generations, c.tournament_size), (40, 50, 3));
        assert!(toml::from_str::<TuneConfig>("target = \"sphere\"\npopsize = 3\n").is_err());
    }
}
