//! Driver behind the `s2vgd` binary: argument parsing, config resolution,
//! multi-seed runs and artifact files.

pub mod args;
pub mod bandit;
pub mod rl;
pub mod supervised;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::args::{Cli, Command, Common};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A message and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<s2vgd::Error> for Failure {
    fn from(e: s2vgd::Error) -> Self {
        use s2vgd::Error as E;
        let code = match &e {
            E::Config(_) | E::FlowTooLong { .. } | E::Json(_) => EXIT_CONFIG,
            E::Data { .. } | E::Dataset(_) | E::Io(_) | E::DimensionMismatch { .. } | E::ClassOutOfRange { .. } | E::TargetKind(_) => {
                EXIT_DATA
            }
            E::NonFinite(_) | E::DegenerateHouseholder { .. } | E::NotPositiveDefinite(_) => EXIT_NUMERIC,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Regress(a) => supervised::regress(a),
        Command::Classify(a) => supervised::classify(a),
        Command::Bandit(a) => bandit::run(a),
        Command::Rl(a) => rl::run(a),
        Command::Diag(a) => diag(a.seed, a.inject_sign_flip),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn diag(seed: u64, inject_sign_flip: bool) -> Outcome<i32> {
    let checks = s2vgd::diag::suite(seed, inject_sign_flip);
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
}

/// Reads a JSON config file, or the defaults when no file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

pub(crate) fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// A flag value for a serde enum, such as `relu` or `fixed`.
pub(crate) fn parse_named<T: DeserializeOwned>(flag: &str, value: &str) -> Outcome<T> {
    serde_json::from_value(Value::String(value.to_string())).map_err(|_| Failure::config(format!("invalid value '{value}' for --{flag}")))
}

pub(crate) fn write(path: &Path, contents: &str) -> Outcome<()> {
    std::fs::write(path, contents).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(path: &Path) -> Outcome<()> {
    std::fs::create_dir_all(path).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::numeric(e.to_string()))?;
    text.push('\n');
    write(path, &text)
}

/// Seed, seed count, output directory and worker pool shared by the
/// experiment commands.
pub(crate) struct Plan {
    pub seed: u64,
    pub seeds: usize,
    pub out: PathBuf,
    pool: rayon::ThreadPool,
}

impl Plan {
    pub fn new(common: &Common, file_seed: Option<u64>, file_seeds: usize) -> Outcome<Self> {
        let seed = common
            .seed
            .or(file_seed)
            .ok_or_else(|| Failure::config("a seed is required (--seed or \"seed\" in the config file)"))?;
        let seeds = common.seeds.unwrap_or(file_seeds);
        if seeds == 0 {
            return Err(Failure::config("--seeds must be at least 1"));
        }
        if seed.checked_add(seeds as u64 - 1).is_none() {
            return Err(Failure::config("seed range overflows"));
        }
        if common.workers == Some(0) {
            return Err(Failure::config("--workers must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(common.workers.unwrap_or(0))
            .build()
            .map_err(|e| Failure::config(e.to_string()))?;
        Ok(Plan {
            seed,
            seeds,
            out: common.out.clone(),
            pool,
        })
    }

    /// Runs `one` for every seed. A single seed writes straight into the
    /// output directory. Several seeds get `seed_<n>/` subdirectories and a
    /// top-level summary with mean and standard deviation of every metric.
    /// `one` writes its own artifacts and returns the summary's results.
    pub fn execute<C: Serialize>(
        &self,
        command: &str,
        config: &C,
        one: impl Fn(u64, &Path) -> Outcome<Value> + Sync,
    ) -> Outcome<i32> {
        let start = Instant::now();
        let config = serde_json::to_value(config).map_err(|e| Failure::config(e.to_string()))?;
        create_dir(&self.out)?;
        let mut per_seed = Vec::with_capacity(self.seeds);
        for seed in self.seed..self.seed + self.seeds as u64 {
            let dir = if self.seeds == 1 {
                self.out.clone()
            } else {
                self.out.join(format!("seed_{seed}"))
            };
            create_dir(&dir)?;
            let t = Instant::now();
            let results = self.pool.install(|| one(seed, &dir))?;
            let mut echoed = config.clone();
            echoed["seed"] = json!(seed);
            write_json(
                &dir.join("summary.json"),
                &json!({
                    "command": command,
                    "config": echoed,
                    "results": results,
                    "wall_time_seconds": t.elapsed().as_secs_f64(),
                }),
            )?;
            if let Some(name) = first_null(&results, "") {
                return Err(Failure::numeric(format!("seed {seed}: {name} is not finite")));
            }
            if self.seeds > 1 {
                eprintln!("{command} seed {seed}: {}", compact(&results));
            }
            per_seed.push(results);
        }
        if self.seeds > 1 {
            let aggregate = aggregate(&per_seed);
            println!("{command} over {} seeds: {}", self.seeds, mean_std_line(&aggregate));
            write_json(
                &self.out.join("summary.json"),
                &json!({
                    "command": command,
                    "config": config,
                    "seeds": (self.seed..self.seed + self.seeds as u64).collect::<Vec<_>>(),
                    "aggregate": aggregate,
                    "wall_time_seconds": start.elapsed().as_secs_f64(),
                }),
            )?;
        } else {
            println!("{command}: {}", compact(&per_seed[0]));
        }
        Ok(0)
    }
}

// serde_json writes NaN and infinities as null, and results never contain
// a real null (absent values are skipped), so a null marks a bad number.
fn first_null(v: &Value, path: &str) -> Option<String> {
    match v {
        Value::Null => Some(path.to_string()),
        Value::Object(m) => m.iter().find_map(|(k, v)| first_null(v, &join(path, k))),
        Value::Array(a) => a.iter().enumerate().find_map(|(i, v)| first_null(v, &join(path, &i.to_string()))),
        _ => None,
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn numeric_leaves(v: &Value, path: String, out: &mut Vec<(String, f64)>) {
    match v {
        Value::Number(n) => out.extend(n.as_f64().map(|x| (path, x))),
        Value::Object(m) => m.iter().for_each(|(k, v)| numeric_leaves(v, join(&path, k), out)),
        _ => {}
    }
}

/// `{metric: {mean, std, values}}` over every numeric leaf of the per-seed
/// results, keyed by dotted path. `std` is the population deviation.
pub fn aggregate(results: &[Value]) -> Value {
    let mut columns: Map<String, Value> = Map::new();
    let mut order: Vec<(String, Vec<f64>)> = Vec::new();
    for r in results {
        let mut leaves = Vec::new();
        numeric_leaves(r, String::new(), &mut leaves);
        for (k, x) in leaves {
            match order.iter_mut().find(|(name, _)| *name == k) {
                Some((_, xs)) => xs.push(x),
                None => order.push((k, vec![x])),
            }
        }
    }
    for (k, xs) in order {
        columns.insert(
            k,
            json!({
                "mean": s2vgd::math::mean(&xs),
                "std": s2vgd::math::std_dev(&xs),
                "values": xs,
            }),
        );
    }
    Value::Object(columns)
}

fn mean_std_line(aggregate: &Value) -> String {
    let Value::Object(m) = aggregate else { return String::new() };
    m.iter()
        .map(|(k, v)| format!("{k}={:.4} ± {:.4}", v["mean"].as_f64().unwrap_or(f64::NAN), v["std"].as_f64().unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn compact(v: &Value) -> String {
    let mut leaves = Vec::new();
    match v {
        Value::Object(_) => {
            numeric_leaves(v, String::new(), &mut leaves);
            if leaves.is_empty() {
                return v.to_string();
            }
            leaves.iter().map(|(k, x)| format!("{k}={x:.4}")).collect::<Vec<_>>().join(" ")
        }
        other => other.to_string(),
    }
}
