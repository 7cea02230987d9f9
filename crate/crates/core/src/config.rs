//! Run configuration: flat `key = value` text with dotted sections.
//!
//! ```text
//! # comment
//! system.name = torus2
//! level = inf
//! [conley]
//! grid = 128        # same as conley.grid
//! ```

use crate::conley::ConleyConfig;
use crate::connections::ConnectionConfig;
use crate::critical::SearchConfig;
use crate::error::{Error, Result};
use crate::filtration::FiltrationConfig;
use crate::semiflow::FlowParams;
use crate::systems::{LoopDiscretization, RiemannianSystem, Tolerances};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;

pub const OUT_ENV: &str = "MORSE_CONLEY_OUT";

#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    pub torus_b: f64,
    pub torus_t: f64,
    pub loop_points: usize,
    pub loop_kappa: f64,
    pub loop_kappa_t: f64,
    pub loop_winding: i64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec { name: "torus2".into(), torus_b: 0.5, torus_t: 0.1, loop_points: 16, loop_kappa: 0.1, loop_kappa_t: 0.0, loop_winding: 0 }
    }
}

impl SystemSpec {
    pub fn build(&self, tol: &Tolerances) -> Result<RiemannianSystem> {
        let mut sys = match self.name.as_str() {
            "circle" => RiemannianSystem::circle(),
            "sphere2" => RiemannianSystem::sphere2(),
            "torus2" => RiemannianSystem::torus2_with(self.torus_b, self.torus_t),
            "loopspace" => {
                if self.loop_points < 3 {
                    return Err(Error::Config("system.points must be at least 3".into()));
                }
                RiemannianSystem::loopspace(LoopDiscretization {
                    base_dim: 1,
                    num_points: self.loop_points,
                    kappa: self.loop_kappa,
                    kappa_t: self.loop_kappa_t,
                    winding_class: vec![self.loop_winding],
                })
            }
            other => return Err(Error::Config(format!("unknown system '{other}' (circle, sphere2, torus2, loopspace)"))),
        };
        sys.tol = tol.clone();
        Ok(sys)
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub level: f64,
    pub seed: u64,
    pub flow: FlowParams,
    pub tol: Tolerances,
    pub search: SearchConfig,
    pub rho_shots: usize,
    pub conley: ConleyConfig,
    pub conley_epsilon: Option<f64>,
    pub conley_tau: Option<f64>,
    pub connections: ConnectionConfig,
    pub filtration: FiltrationConfig,
    pub grid: usize,
    pub samples: usize,
    pub sublevel: Option<f64>,
    pub leaf_probes: usize,
    pub leaf_per_branch: usize,
    pub out: Option<PathBuf>,
    pub json: bool,
    pub csv: bool,
    /// Canonical `key = value` lines of everything explicitly set.
    entries: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemSpec::default(),
            level: f64::INFINITY,
            seed: 1,
            flow: FlowParams::default(),
            tol: Tolerances::default(),
            search: SearchConfig::default(),
            rho_shots: 64,
            conley: ConleyConfig::default(),
            conley_epsilon: None,
            conley_tau: None,
            connections: ConnectionConfig::default(),
            filtration: FiltrationConfig::default(),
            grid: 128,
            samples: 1000,
            sublevel: None,
            leaf_probes: 6,
            leaf_per_branch: 12,
            out: None,
            json: true,
            csv: true,
            entries: BTreeMap::new(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "system.name",
    "system.b",
    "system.t",
    "system.points",
    "system.kappa",
    "system.kappa_t",
    "system.winding",
    "level",
    "seed",
    "flow.step_ctrl",
    "flow.max_time",
    "flow.grad_stop_tol",
    "flow.basin_tol",
    "flow.band",
    "tol.constraint",
    "tol.symmetry",
    "tol.crit",
    "crit.density",
    "crit.newton_iters",
    "crit.merge_tol",
    "crit.degeneracy_rel",
    "crit.loop_seeds",
    "crit.rho_shots",
    "conley.epsilon",
    "conley.tau",
    "conley.tau_scale",
    "conley.eps_frac",
    "conley.grid",
    "conley.axiom_samples",
    "connections.mesh",
    "connections.levels",
    "connections.max_depth",
    "filtration.grid",
    "filtration.samples",
    "filtration.time_factor",
    "filtration.exit_samples",
    "filtration.sublevel",
    "leaf.probes",
    "leaf.per_branch",
    "output.dir",
    "output.json",
    "output.csv",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn real(key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => num::<f64>(key, v),
    }
}

fn auto(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        let x = real(key, v)?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Config(format!("{key} must be positive or 'auto'")));
        }
        Ok(Some(x))
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn positive(key: &str, v: &str) -> Result<usize> {
    let n: usize = num(key, v)?;
    if n == 0 {
        return Err(Error::Config(format!("{key} must be positive")));
    }
    Ok(n)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        let mut seen = std::collections::BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[') {
                let s = s.strip_suffix(']').ok_or_else(|| Error::Config(format!("line {}: unterminated section", no + 1)))?;
                section = s.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if !seen.insert(key.clone()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", no + 1)));
            }
            self.set(&key, v.trim())?;
        }
        Ok(())
    }

    /// Sets one dotted key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "system.name" => self.system.name = v.to_string(),
            "system.b" => self.system.torus_b = real(key, v)?,
            "system.t" => self.system.torus_t = real(key, v)?,
            "system.points" => self.system.loop_points = positive(key, v)?,
            "system.kappa" => self.system.loop_kappa = real(key, v)?,
            "system.kappa_t" => self.system.loop_kappa_t = real(key, v)?,
            "system.winding" => self.system.loop_winding = num(key, v)?,
            "level" => self.level = real(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "flow.step_ctrl" => self.flow.step_ctrl = real(key, v)?,
            "flow.max_time" => self.flow.max_time = real(key, v)?,
            "flow.grad_stop_tol" => self.flow.grad_stop_tol = real(key, v)?,
            "flow.basin_tol" => self.flow.basin_tol = real(key, v)?,
            "flow.band" => self.flow.band = real(key, v)?,
            "tol.constraint" => self.tol.constraint = real(key, v)?,
            "tol.symmetry" => self.tol.symmetry = real(key, v)?,
            "tol.crit" => self.tol.crit = real(key, v)?,
            "crit.density" => self.search.density = positive(key, v)?,
            "crit.newton_iters" => self.search.newton_iters = positive(key, v)?,
            "crit.merge_tol" => self.search.merge_tol = real(key, v)?,
            "crit.degeneracy_rel" => self.search.degeneracy_rel = real(key, v)?,
            "crit.loop_seeds" => self.search.loop_seeds = num(key, v)?,
            "crit.rho_shots" => self.rho_shots = positive(key, v)?,
            "conley.epsilon" => self.conley_epsilon = auto(key, v)?,
            "conley.tau" => self.conley_tau = auto(key, v)?,
            "conley.tau_scale" => self.conley.tau_scale = real(key, v)?,
            "conley.eps_frac" => self.conley.eps_frac = real(key, v)?,
            "conley.grid" => self.conley.grid = positive(key, v)?,
            "conley.axiom_samples" => self.conley.axiom_samples = positive(key, v)?,
            "connections.mesh" => self.connections.mesh = positive(key, v)?,
            "connections.levels" => self.connections.levels = positive(key, v)?,
            "connections.max_depth" => self.connections.max_depth = positive(key, v)?,
            "filtration.grid" => self.grid = positive(key, v)?,
            "filtration.samples" => self.samples = positive(key, v)?,
            "filtration.time_factor" => self.filtration.time_factor = real(key, v)?,
            "filtration.exit_samples" => self.filtration.exit_samples = positive(key, v)?,
            "filtration.sublevel" => self.sublevel = Some(real(key, v)?),
            "leaf.probes" => self.leaf_probes = positive(key, v)?,
            "leaf.per_branch" => self.leaf_per_branch = positive(key, v)?,
            "output.dir" => self.out = Some(PathBuf::from(v)),
            "output.json" => self.json = flag(key, v)?,
            "output.csv" => self.csv = flag(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        self.entries.insert(key.to_string(), v.to_string());
        self.sync_seed();
        self.validate()
    }

    fn sync_seed(&mut self) {
        self.search.seed = self.seed;
        self.conley.seed = self.seed;
        self.filtration.seed = self.seed;
    }

    fn validate(&self) -> Result<()> {
        if !(self.flow.step_ctrl > 0.0) || !(self.flow.max_time > 0.0) {
            return Err(Error::Config("flow.step_ctrl and flow.max_time must be positive".into()));
        }
        if !(self.filtration.time_factor >= 1.0) {
            return Err(Error::Config("filtration.time_factor must be >= 1".into()));
        }
        if self.level.is_nan() {
            return Err(Error::Config("level must be a number or inf".into()));
        }
        Ok(())
    }

    pub fn system(&self) -> Result<RiemannianSystem> {
        self.system.build(&self.tol)
    }

    /// Output directory: environment override, then config.
    pub fn out_dir(&self) -> Option<PathBuf> {
        std::env::var_os(OUT_ENV).map(PathBuf::from).or_else(|| self.out.clone())
    }

    /// Canonical text of the explicitly set keys.
    pub fn canonical(&self) -> String {
        self.entries.iter().filter(|(k, _)| k.as_str() != "output.dir").map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys_agree() {
        let a = RunConfig::parse("[conley]\ngrid = 64\n[system]\nname = sphere2\n").unwrap();
        let b = RunConfig::parse("conley.grid = 64 # comment\nsystem.name = sphere2").unwrap();
        assert_eq!(a.conley.grid, 64);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.system.name, "sphere2");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("seed = 1\nseed = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("conley.grid = -3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("just words"), Err(Error::Config(_))));
        let c = RunConfig::parse("level = inf\nconley.tau = auto\nconley.epsilon = 0.1").unwrap();
        assert!(c.level.is_infinite() && c.conley_tau.is_none() && c.conley_epsilon == Some(0.1));
        assert!(matches!(RunConfig::parse("system.name = klein").unwrap().system(), Err(Error::Config(_))));
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let sample = |k: &str| match k {
            "system.name" => "circle",
            "conley.epsilon" | "conley.tau" => "auto",
            "output.dir" => "out",
            "output.json" | "output.csv" => "true",
            "system.winding" => "0",
            "filtration.time_factor" => "1.5",
            _ => "3",
        };
        for k in KEYS {
            RunConfig::default().set(k, sample(k)).unwrap();
        }
    }
}
