//! Scenario files: sectioned `key = value` text.
//!
//! ```text
//! preset = desk
//!
//! [target]
//! z_nominal = -30.0   # metres
//! seed = 4
//! ```
//!
//! The optional top-level `preset` (`paper` or `desk`) picks the defaults;
//! every other key lives in a section and overrides one field. Unknown
//! sections and keys are errors. [`ScenarioFile::normalize`] writes every key
//! explicitly in a fixed order, and its SHA-256 is the scenario hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes_opt::CaseSpec;
use crate::error::{Error, Result};
use crate::policy_learn::{LrStage, MdpSpec, RlConfig};
use crate::simulator::Scenario;

/// Optimizer settings carried in the `[bo]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoSettings {
    pub case: u8,
    pub budget: usize,
    pub initial_samples: usize,
    pub active_set: usize,
    pub sigma_tol: f64,
    pub refit_every: usize,
    pub seed: u64,
}

impl Default for BoSettings {
    fn default() -> Self {
        let c = CaseSpec::new(1).expect("case 1 exists");
        Self {
            case: 1,
            budget: c.budget,
            initial_samples: c.initial_samples,
            active_set: c.active_set,
            sigma_tol: c.sigma_tol,
            refit_every: c.refit_every,
            seed: 0,
        }
    }
}

impl BoSettings {
    /// Case specification with these settings and `base` for the inactive
    /// variables.
    pub fn case_spec(&self, case: u8, scenario: &Scenario) -> Result<CaseSpec> {
        let mut c = CaseSpec::new(case)?;
        c.budget = self.budget;
        c.initial_samples = self.initial_samples;
        c.active_set = self.active_set;
        c.sigma_tol = self.sigma_tol;
        c.refit_every = self.refit_every;
        c.base = scenario.actions.clone();
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn scenario(self) -> Scenario {
        match self {
            Preset::Paper => Scenario::paper(),
            Preset::Desk => Scenario::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub rl: RlConfig,
    pub bo: BoSettings,
}

impl ScenarioFile {
    pub fn preset(p: Preset) -> Self {
        let scenario = p.scenario();
        let rl = RlConfig {
            burn_rate: scenario.propulsion.burn_rate,
            initial_mass: scenario.actions.initial_mass,
            ..RlConfig::default()
        };
        Self {
            scenario,
            rl,
            bo: BoSettings::default(),
        }
    }

    /// Parse without validating.
    pub fn parse(text: &str) -> Result<Self> {
        let fields = fields();
        let mut file: Option<Self> = None;
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::Parse { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("malformed section header `{line}`")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            if key.is_empty() || value.is_empty() {
                return Err(err(format!("expected `key = value`, found `{line}`")));
            }
            let Some(sec) = section.as_deref() else {
                if key != "preset" {
                    return Err(err(format!("key `{key}` outside a section")));
                }
                if file.is_some() {
                    return Err(err("`preset` must come first".into()));
                }
                let p = match value {
                    "paper" => Preset::Paper,
                    "desk" => Preset::Desk,
                    other => return Err(err(format!("unknown preset `{other}`"))),
                };
                file = Some(Self::preset(p));
                continue;
            };
            let f = fields
                .iter()
                .find(|f| f.section == sec && f.key == key)
                .ok_or_else(|| err(format!("unknown key `{key}` in [{sec}]")))?;
            if !seen.insert((sec.to_string(), key.to_string())) {
                return Err(err(format!("duplicate key `{key}` in [{sec}]")));
            }
            let target = file.get_or_insert_with(|| Self::preset(Preset::Paper));
            (f.set)(target, value).map_err(|m| err(format!("{sec}.{key}: {m}")))?;
        }
        Ok(file.unwrap_or_else(|| Self::preset(Preset::Paper)))
    }

    /// Parse and validate every section.
    pub fn load(text: &str) -> Result<Self> {
        let f = Self::parse(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.rl.validate()?;
        MdpSpec::for_scenario(&self.scenario).validate()?;
        self.bo.case_spec(self.bo.case, &self.scenario)?;
        Ok(())
    }

    /// Every key, one section at a time, in a fixed order.
    pub fn normalize(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for f in fields() {
            if f.section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{}]\n", f.section));
                current = f.section;
            }
            out.push_str(&format!("{} = {}\n", f.key, (f.get)(self)));
        }
        out
    }

    /// Hex SHA-256 of the normalized text.
    pub fn scenario_hash(&self) -> String {
        hex::encode(Sha256::digest(self.normalize().as_bytes()))
    }
}

const SECTIONS: [&str; 12] = [
    "net",
    "deploy",
    "tether",
    "chaser",
    "target",
    "contact",
    "phases",
    "actions",
    "propulsion",
    "switches",
    "rl",
    "bo",
];

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{s}` is not finite"))
        }
    }

    fn render(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! integer_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("`{s}` is not a non-negative integer in range"))
            }

            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
integer_value!(u8, u64, usize);

impl ConfigValue for bool {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("`{s}` is not true or false")),
        }
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

/// `none` for absent values.
impl ConfigValue for Option<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            f64::parse_value(s).map(Some)
        }
    }

    fn render(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.render())
    }
}

/// Comma-separated `fraction:rate` pairs.
impl ConfigValue for Vec<LrStage> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|part| {
                let (f, lr) = part.split_once(':').ok_or_else(|| format!("`{}` is not fraction:rate", part.trim()))?;
                Ok(LrStage {
                    from_fraction: f64::parse_value(f.trim())?,
                    lr: f64::parse_value(lr.trim())?,
                })
            })
            .collect()
    }

    fn render(&self) -> String {
        self.iter()
            .map(|s| format!("{}:{}", s.from_fraction.render(), s.lr.render()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

struct Field {
    section: &'static str,
    key: &'static str,
    get: fn(&ScenarioFile) -> String,
    set: fn(&mut ScenarioFile, &str) -> std::result::Result<(), String>,
}

macro_rules! field {
    ($sec:literal, $key:literal, $($path:tt)+) => {
        Field {
            section: $sec,
            key: $key,
            get: |f| ConfigValue::render(&f.$($path)+),
            set: |f, s| {
                f.$($path)+ = ConfigValue::parse_value(s)?;
                Ok(())
            },
        }
    };
}

fn fields() -> Vec<Field> {
    vec![
        field!("net", "mesh_count", scenario.net.mesh_count),
        field!("net", "side_length", scenario.net.side_length),
        field!("net", "mesh_length", scenario.net.mesh_length),
        field!("net", "thread_radius", scenario.net.thread_radius),
        field!("net", "thread_density", scenario.net.thread_density),
        field!("net", "youngs_modulus", scenario.net.youngs_modulus),
        field!("net", "damping_ratio", scenario.net.damping_ratio),
        field!("net", "knot_mass", scenario.net.knot_mass),
        field!("net", "corner_thread_length", scenario.net.corner_thread_length),
        field!("net", "corner_thread_radius", scenario.net.corner_thread_radius),
        field!("net", "mu_radius", scenario.net.mu_radius),
        field!("net", "mu_mass", scenario.net.mu_mass),
        field!("net", "stowed_side_length", scenario.net.stowed_side_length),
        field!("deploy", "ejection_speed", scenario.deploy.ejection_speed),
        field!("deploy", "shooting_angle_deg", scenario.deploy.shooting_angle_deg),
        field!("deploy", "stow_gap", scenario.deploy.stow_gap),
        field!("tether", "density", scenario.tether.density),
        field!("tether", "youngs_modulus", scenario.tether.youngs_modulus),
        field!("tether", "radius", scenario.tether.radius),
        field!("tether", "length", scenario.tether.length),
        field!("tether", "damping_ratio", scenario.tether.damping_ratio),
        field!("tether", "segment_count", scenario.tether.segment_count),
        field!("chaser", "mass", scenario.chaser.mass),
        field!("chaser", "side", scenario.chaser.side),
        field!("chaser", "spool_tension", scenario.chaser.spool_tension),
        field!("target", "radius", scenario.target.radius),
        field!("target", "length", scenario.target.length),
        field!("target", "mass", scenario.target.mass),
        field!("target", "x_offset", scenario.target.x_offset),
        field!("target", "z_nominal", scenario.target.z_nominal),
        field!("target", "z_noise", scenario.target.z_noise),
        field!("target", "reference_volume", scenario.target.reference_volume),
        field!("target", "reference_area", scenario.target.reference_area),
        field!("target", "reference_length", scenario.target.reference_length),
        field!("target", "seed", scenario.seed),
        field!("contact", "stiffness", scenario.contact.stiffness),
        field!("contact", "damping", scenario.contact.damping),
        field!("contact", "friction", scenario.contact.friction),
        field!("contact", "regularization_speed", scenario.contact.regularization_speed),
        field!("contact", "knot_radius", scenario.contact.knot_radius),
        field!("phases", "dt", scenario.phases.dt),
        field!("phases", "thrust_on_time", scenario.phases.thrust_on_time),
        field!("phases", "closing_distance", scenario.phases.closing_distance),
        field!("phases", "settle_duration", scenario.phases.settle_duration),
        field!("phases", "max_closing_time", scenario.phases.max_closing_time),
        field!("phases", "max_time", scenario.phases.max_time),
        field!("phases", "lock_distance", scenario.phases.lock_distance),
        field!("phases", "closing_force", scenario.phases.closing_force),
        field!("phases", "lock_stiffness", scenario.phases.lock_stiffness),
        field!("phases", "lock_damping_ratio", scenario.phases.lock_damping_ratio),
        field!("phases", "cqi_window", scenario.phases.cqi_window),
        field!("phases", "sample_interval", scenario.phases.sample_interval),
        field!("phases", "divergence_speed", scenario.phases.divergence_speed),
        field!("phases", "substep_safety", scenario.phases.substep_safety),
        field!("actions", "psi1_deg", scenario.actions.psi_deg[0]),
        field!("actions", "psi2_deg", scenario.actions.psi_deg[1]),
        field!("actions", "psi3_deg", scenario.actions.psi_deg[2]),
        field!("actions", "psi4_deg", scenario.actions.psi_deg[3]),
        field!("actions", "theta_deg", scenario.actions.theta_deg),
        field!("actions", "thrust", scenario.actions.thrust),
        field!("actions", "initial_mass", scenario.actions.initial_mass),
        field!("propulsion", "burn_rate", scenario.propulsion.burn_rate),
        field!("propulsion", "nominal_thrust", scenario.propulsion.nominal_thrust),
        field!("propulsion", "dry_mass", scenario.propulsion.dry_mass),
        field!("switches", "thrust", scenario.switches.thrust),
        field!("switches", "contact", scenario.switches.contact),
        field!("switches", "closing", scenario.switches.closing),
        field!("rl", "batch_episodes", rl.batch_episodes),
        field!("rl", "total_episodes", rl.total_episodes),
        field!("rl", "lr_schedule", rl.lr_schedule),
        field!("rl", "clip", rl.ppo.clip),
        field!("rl", "value_coef", rl.ppo.value_coef),
        field!("rl", "entropy_coef", rl.ppo.entropy_coef),
        field!("rl", "epochs", rl.ppo.epochs),
        field!("rl", "minibatch", rl.ppo.minibatch),
        field!("rl", "max_grad_norm", rl.ppo.max_grad_norm),
        field!("rl", "normalize_advantages", rl.ppo.normalize_advantages),
        field!("rl", "burn_rate", rl.burn_rate),
        field!("rl", "initial_mass", rl.initial_mass),
        field!("rl", "initial_log_std", rl.initial_log_std),
        field!("rl", "short_window", rl.short_window),
        field!("rl", "long_window", rl.long_window),
        field!("rl", "seed", rl.seed),
        field!("bo", "case", bo.case),
        field!("bo", "budget", bo.budget),
        field!("bo", "initial_samples", bo.initial_samples),
        field!("bo", "active_set", bo.active_set),
        field!("bo", "sigma_tol", bo.sigma_tol),
        field!("bo", "refit_every", bo.refit_every),
        field!("bo", "seed", bo.seed),
    ]
}
