//! Experiment runner behind the `setbellman` binary.
//!
//! A config file holds one [`ExperimentConfig`] or a list of them. Each entry
//! is one run and writes its own artifacts into the output directory, named
//! after the entry's `name`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::game::{containment_report, ContainmentTolerance, OpponentStrategy, ValueInit, two_player_vi, CouplingForm};
use crate::grid::{build_grid_kernel, sample_cost_matrices, GridSpec};
use crate::interval::{point_to_box_distance, IntervalVector};
use crate::mdp::{certify_interval_optimality, greedy_policy, value_iteration, Policy, ValueFunction, DEFAULT_MAX_ITERS};
use crate::random::{seeded_rng, streams, PRNG_NAME};
use crate::schema::{game_csv, trajectory_csv, InstanceFile};
use crate::set_bellman::{
    fixed_point_box, inflate, random_cost_trajectory, sampled_fixed_points, set_value_iteration, CostSampler, DEFAULT_EPSILON,
};

pub const THREADS_ENV: &str = "SETBELLMAN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    SetSolve,
    Certify,
    Trajectory,
    GameSim,
    GridGen,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::SetSolve => "set-solve",
            Mode::Certify => "certify",
            Mode::Trajectory => "trajectory",
            Mode::GameSim => "game-sim",
            Mode::GridGen => "grid-gen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    UniformBox,
    Vertex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_stick")]
    pub stick_prob: f64,
    #[serde(default = "default_grid_discount")]
    pub discount: f64,
    #[serde(default = "default_grid_discount")]
    pub discount_p2: f64,
    #[serde(default)]
    pub coupling_form: CouplingForm,
}

fn default_stick() -> f64 {
    0.7
}

fn default_grid_discount() -> f64 {
    0.7
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_num_iters() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Artifact file stem; defaults to the mode, suffixed by the entry index
    /// in multi-entry configs.
    #[serde(default)]
    pub name: Option<String>,
    /// Instance JSON, relative to the config file. Unused by `grid-gen`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overrides the instance file's opponent in `game-sim`.
    #[serde(default)]
    pub opponent: Option<OpponentStrategy>,
    /// Steps for `trajectory` and `game-sim`.
    #[serde(default = "default_num_iters")]
    pub num_iters: usize,
    /// Player one's initial value function.
    #[serde(default)]
    pub init: ValueInit,
    /// `certify`: policy to certify; defaults to the greedy policy at the box midpoint.
    #[serde(default)]
    pub policy: Option<Vec<usize>>,
    /// `trajectory`: cost sampler.
    #[serde(default)]
    pub sampler: SamplerKind,
    /// `set-solve`: extra sampled fixed points checked against the box.
    #[serde(default)]
    pub num_samples: usize,
    /// `grid-gen` instance shape.
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        serde_json::from_value(json!({ "mode": mode })).expect("defaults deserialize")
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(format!("field `epsilon`: {} must be a finite positive number", self.epsilon));
        }
        if self.max_iters == 0 {
            return Err("field `max_iters`: must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return Err("field `seeds`: must not be empty".into());
        }
        if matches!(self.mode, Mode::Trajectory | Mode::GameSim) && self.num_iters == 0 {
            return Err("field `num_iters`: must be at least 1".into());
        }
        match self.mode {
            Mode::GridGen if self.grid.is_none() => Err("field `grid`: required for mode grid-gen".into()),
            Mode::GridGen => Ok(()),
            _ if self.input.is_none() => Err(format!("field `input`: required for mode {}", self.mode.as_str())),
            _ => Ok(()),
        }
    }

    pub fn stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.mode.as_str().to_string())
    }
}

/// Outcome classes mapped to process exit codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub files: Vec<PathBuf>,
    /// False when some iteration hit its budget or a run was cut short; the
    /// artifacts are then partial.
    pub completed: bool,
}

/// Command-line overrides applied to every config entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Parses a config file's text into its entries.
pub fn parse_configs(text: &str) -> Result<Vec<ExperimentConfig>, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
    let items = match value {
        Value::Array(items) => items,
        other => vec![other],
    };
    if items.is_empty() {
        return Err(CliError::Validation("config: empty list".into()));
    }
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).map_err(|e| CliError::Validation(format!("config entry {i}: {e}"))))
        .collect()
}

/// Applies overrides, fills default names and resolves paths; rejects the
/// batch on the first invalid entry or on clashing names.
pub fn resolve_configs(
    mut configs: Vec<ExperimentConfig>,
    overrides: &Overrides,
) -> Result<Vec<ExperimentConfig>, CliError> {
    let multi = configs.len() > 1;
    for (i, c) in configs.iter_mut().enumerate() {
        if let Some(seed) = overrides.seed {
            c.seeds = vec![seed];
        }
        if let Some(eps) = overrides.epsilon {
            c.epsilon = eps;
        }
        if c.name.is_none() && multi {
            c.name = Some(format!("{}_{i}", c.mode.as_str()));
        }
        c.check().map_err(|m| CliError::Validation(format!("config entry {i}: {m}")))?;
        let stem = c.stem();
        if stem.is_empty() || stem.contains(['/', '\\']) || stem.starts_with('.') {
            return Err(CliError::Validation(format!("config entry {i}: field `name`: {stem:?} is not a plain file stem")));
        }
    }
    let mut stems: Vec<String> = configs.iter().map(|c| c.stem()).collect();
    stems.sort();
    if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Validation(format!("config: duplicate run name {:?}", w[0])));
    }
    Ok(configs)
}

/// Thread count from `SETBELLMAN_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Validation(format!("{THREADS_ENV}: {v:?} is not a positive integer"))),
        },
    }
}

/// Runs every entry of a config file. `base_dir` anchors relative input and
/// output paths from the file; `overrides.out` wins over each entry's `out`.
pub fn run_file(config_path: &Path, overrides: &Overrides) -> Vec<Result<RunReport, CliError>> {
    let text = match fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => return vec![Err(CliError::Runtime(format!("reading {}: {e}", config_path.display())))],
    };
    let configs = match parse_configs(&text).and_then(|c| resolve_configs(c, overrides)) {
        Ok(c) => c,
        Err(e) => return vec![Err(e)],
    };
    let cap = match thread_cap() {
        Ok(c) => c,
        Err(e) => return vec![Err(e)],
    };
    let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let run_all = || -> Vec<Result<RunReport, CliError>> {
        configs
            .par_iter()
            .map(|c| {
                let out = overrides
                    .out
                    .clone()
                    .or_else(|| c.out.as_ref().map(|o| base_dir.join(o)))
                    .unwrap_or_else(|| PathBuf::from("."));
                run(c, &base_dir, &out)
            })
            .collect()
    };
    match cap {
        None => run_all(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run_all),
            Err(e) => vec![Err(CliError::Runtime(format!("thread pool: {e}")))],
        },
    }
}

/// Exit status for a batch: 2 if any entry failed validation, else 1 if any
/// failed or is partial, else 0.
pub fn exit_status(results: &[Result<RunReport, CliError>]) -> i32 {
    let mut code = 0;
    for r in results {
        let c = match r {
            Ok(rep) if rep.completed => 0,
            Ok(_) => 1,
            Err(e) => e.exit_code(),
        };
        code = code.max(c);
    }
    code
}

/// Runs one resolved entry, writing artifacts under `out_dir`.
pub fn run(config: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<RunReport, CliError> {
    config.check().map_err(CliError::Validation)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", out_dir.display())))?;
    let mut ctx = Ctx { config, out_dir, files: Vec::new() };
    let result = match config.mode {
        Mode::Solve => ctx.solve(base_dir),
        Mode::SetSolve => ctx.set_solve(base_dir),
        Mode::Certify => ctx.certify(base_dir),
        Mode::Trajectory => ctx.trajectory(base_dir),
        Mode::GameSim => ctx.game_sim(base_dir),
        Mode::GridGen => ctx.grid_gen(),
    };
    match result {
        Ok(completed) => Ok(RunReport { name: config.stem(), files: ctx.files, completed }),
        Err(CliError::Runtime(msg)) => {
            // leave a marker artifact so a failed run is visible in the output
            ctx.write_json(&format!("{}.json", config.stem()), json!({ "converged": false, "error": msg }))?;
            Err(CliError::Runtime(msg))
        }
        Err(e) => Err(e),
    }
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    out_dir: &'a Path,
    files: Vec<PathBuf>,
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn box_json(b: &IntervalVector) -> Value {
    json!({ "lo": b.lo().as_slice(), "hi": b.hi().as_slice() })
}

impl Ctx<'_> {
    fn meta(&self) -> Value {
        json!({ "config": self.config, "prng": PRNG_NAME })
    }

    fn csv_meta(&self, seed: u64) -> Vec<(&'static str, String)> {
        vec![
            ("config", serde_json::to_string(self.config).expect("config serializes")),
            ("prng", PRNG_NAME.to_string()),
            ("seed", seed.to_string()),
        ]
    }

    fn write(&mut self, file: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(file);
        fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        if !self.files.contains(&path) {
            self.files.push(path);
        }
        Ok(())
    }

    fn write_json(&mut self, file: &str, body: Value) -> Result<(), CliError> {
        let mut doc = self.meta();
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
        text.push('\n');
        self.write(file, &text)
    }

    fn result_name(&self) -> String {
        format!("{}.json", self.config.stem())
    }

    fn load(&self, base_dir: &Path) -> Result<InstanceFile, CliError> {
        let rel = self.config.input.as_ref().expect("checked");
        let path = base_dir.join(rel);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
        InstanceFile::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", rel.display())))
    }

    fn initial_value(&self, n: usize, seed: u64) -> ValueFunction {
        self.config.init.draw(n, &mut seeded_rng(seed, streams::P1_INIT))
    }

    fn solve(&mut self, base_dir: &Path) -> Result<bool, CliError> {
        let mdp = self.load(base_dir)?.to_mdp()?;
        let seed = self.config.seeds[0];
        let out = value_iteration(&mdp, &self.initial_value(mdp.num_states(), seed), self.config.epsilon, self.config.max_iters)?;
        let policy = greedy_policy(&mdp, &out.value)?.actions().expect("greedy is deterministic");
        let name = self.result_name();
        self.write_json(
            &name,
            json!({
                "converged": out.converged,
                "iterations": out.iterations,
                "last_step": out.last_step,
                "epsilon": self.config.epsilon,
                "value": out.value.as_slice(),
                "policy": policy,
            }),
        )?;
        Ok(out.converged)
    }

    fn set_solve(&mut self, base_dir: &Path) -> Result<bool, CliError> {
        let imdp = self.load(base_dir)?.to_interval_mdp()?;
        let (eps, seed) = (self.config.epsilon, self.config.seeds[0]);
        let start = IntervalVector::point(self.initial_value(imdp.num_states(), seed).into_vector());
        let sol = set_value_iteration(&imdp, &start, eps, self.config.max_iters)?;
        let mut body = json!({
            "converged": sol.converged,
            "iterations": sol.iterations,
            "last_step": sol.last_step,
            "epsilon": eps,
            "box": box_json(&sol.vbox),
            "over_approximation": box_json(&sol.over_approximation()),
        });
        if sol.converged {
            let fixed = fixed_point_box(&imdp, eps)?;
            body["fixed_point_box"] = box_json(&fixed);
            if self.config.num_samples > 0 {
                let pts = sampled_fixed_points(&imdp, self.config.num_samples, seed, eps)?;
                let widened = inflate(&fixed, eps)?;
                let mut worst: f64 = 0.0;
                for p in pts.points() {
                    worst = worst.max(point_to_box_distance(p, &fixed)?);
                }
                body["samples"] = json!({
                    "count": pts.len(),
                    "all_inside_inflated_box": pts.points().iter().all(|p| widened.contains_point(p, 0.0)),
                    "max_dist_to_fixed_box": worst,
                });
            }
        }
        let name = self.result_name();
        self.write_json(&name, body)?;
        Ok(sol.converged)
    }

    fn certify(&mut self, base_dir: &Path) -> Result<bool, CliError> {
        let imdp = self.load(base_dir)?.to_interval_mdp()?;
        let (lo, hi) = (imdp.cost_box().lo(), imdp.cost_box().hi());
        let policy = match &self.config.policy {
            Some(actions) => Policy::deterministic(actions, imdp.num_actions())?,
            None => {
                let mid = imdp.lower_mdp().with_cost((lo + hi) * 0.5)?;
                let out = value_iteration(&mid, &ValueFunction::zeros(mid.num_states()), self.config.epsilon, self.config.max_iters)?;
                if !out.converged {
                    return Err(Error::NotConverged { iterations: out.iterations }.into());
                }
                greedy_policy(&mid, &out.value)?
            }
        };
        let cert = certify_interval_optimality(imdp.kernel(), imdp.discount(), &policy, lo, hi)?;
        let end = |e: &crate::mdp::EndpointCheck| {
            json!({ "value": e.value.as_slice(), "bellman_residual": e.bellman_residual, "optimal": e.optimal })
        };
        let name = self.result_name();
        self.write_json(
            &name,
            json!({
                "converged": true,
                "policy": policy.actions(),
                "certified": cert.certified,
                "endpoints_optimal": cert.endpoints_optimal,
                "worst_case_advantage": cert.worst_case_advantage,
                "worst_case_pair": cert.worst_case_pair,
                "lower": end(&cert.lower),
                "upper": end(&cert.upper),
            }),
        )?;
        Ok(true)
    }

    fn trajectory(&mut self, base_dir: &Path) -> Result<bool, CliError> {
        let imdp = self.load(base_dir)?.to_interval_mdp()?;
        let sampler = match self.config.sampler {
            SamplerKind::UniformBox => CostSampler::UniformBox,
            SamplerKind::Vertex => CostSampler::Vertex,
        };
        let mut runs = Vec::new();
        for &seed in &self.config.seeds {
            let v0 = self.initial_value(imdp.num_states(), seed);
            let rec = random_cost_trajectory(&imdp, &v0, self.config.num_iters, seed, &sampler)?;
            let report = containment_report(&rec, &rec.fixed_box, ContainmentTolerance::default())?;
            let file = format!("{}_seed{seed}.csv", self.config.stem());
            self.write(&file, &trajectory_csv(&rec, &self.csv_meta(seed)))?;
            runs.push(json!({
                "seed": seed,
                "csv": file,
                "all_contained": report.all_contained,
                "first_violation": report.first_violation,
                "tail_distance": report.tail_distance,
                "passed": report.passed,
                "final_value": vec_json(&rec.steps.last().expect("non-empty").value),
                "fixed_point_box": box_json(&rec.fixed_box),
            }));
        }
        let name = self.result_name();
        self.write_json(&name, json!({ "converged": true, "sampler": sampler.name(), "runs": runs }))?;
        Ok(true)
    }

    fn game_sim(&mut self, base_dir: &Path) -> Result<bool, CliError> {
        let file = self.load(base_dir)?;
        let game = file.to_game()?;
        let opponent = self
            .config
            .opponent
            .clone()
            .or(file.opponent)
            .ok_or_else(|| CliError::Validation("field `opponent`: required in the config or the instance".into()))?;
        let tol = ContainmentTolerance::default();
        let mut runs = Vec::new();
        let mut completed = true;
        for &seed in &self.config.seeds {
            let v0 = self.initial_value(game.num_states(), seed);
            let traj = two_player_vi(&game, &opponent, &v0, self.config.num_iters, seed)?;
            let report = containment_report(&traj, &traj.fixed_box, tol)?;
            let csv_name = format!("{}_seed{seed}.csv", self.config.stem());
            self.write(&csv_name, &game_csv(&traj, tol.containment, &self.csv_meta(seed)))?;
            completed &= traj.failure.is_none();
            runs.push(json!({
                "seed": seed,
                "csv": csv_name,
                "iterations": traj.steps.len() - 1,
                "all_contained": report.all_contained,
                "first_violation": report.first_violation,
                "tail_distance": report.tail_distance,
                "passed": report.passed,
                "failure": traj.failure,
                "fixed_point_box": box_json(&traj.fixed_box),
            }));
        }
        let name = self.result_name();
        self.write_json(&name, json!({ "converged": completed, "opponent": opponent, "runs": runs }))?;
        Ok(completed)
    }

    fn grid_gen(&mut self) -> Result<bool, CliError> {
        let g = self.config.grid.clone().expect("checked");
        let multi = self.config.seeds.len() > 1;
        for &seed in &self.config.seeds {
            let spec = GridSpec::new(g.rows, g.cols, g.stick_prob, seed)?;
            let kernel = build_grid_kernel(&spec)?;
            let (c, j) = sample_cost_matrices(&spec)?;
            let mut inst = InstanceFile::for_game(&kernel, &c, &j, g.coupling_form, g.discount, g.discount_p2, self.config.opponent.clone());
            inst.meta = Some(json!({ "config": self.config, "prng": PRNG_NAME, "seed": seed }));
            // catches invalid discounts before anything is written
            inst.to_game()?;
            let file = if multi { format!("{}_seed{seed}.json", self.config.stem()) } else { self.result_name() };
            let mut text = inst.to_json();
            text.push('\n');
            self.write(&file, &text)?;
        }
        Ok(true)
    }
}
