//! `bandit`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use s2vgd::bandit::{run_bandit, BanditConfig, Method, MushroomEnv, MushroomRewards};
use s2vgd::math::RngStream;

use crate::args::{BanditArgs, ModelSlots};
use crate::{apply, load_config, write, Failure, Outcome, Plan};

pub const SYNTHETIC_ENV: &str = "mushroom_synthetic";
/// Stream id under the run seed for the synthetic mushroom table.
pub const ENV_STREAM: u64 = 100;
pub const SYNTHETIC_ROWS: usize = 8124;
pub const SYNTHETIC_WIDTH: usize = 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditFile {
    pub seed: Option<u64>,
    pub seeds: usize,
    /// `mushroom_synthetic` or `mushroom:<path>`.
    pub env: String,
    pub methods: Vec<Method>,
    pub rewards: MushroomRewards,
    pub bandit: BanditConfig,
}

impl Default for BanditFile {
    fn default() -> Self {
        BanditFile {
            seed: None,
            seeds: 1,
            env: SYNTHETIC_ENV.into(),
            methods: vec![Method::SteinThompson, Method::Greedy],
            rewards: MushroomRewards::default(),
            bandit: BanditConfig::default(),
        }
    }
}

pub fn resolve(args: &BanditArgs) -> Outcome<BanditFile> {
    let mut file: BanditFile = load_config(args.common.config.as_deref())?;
    apply(&mut file.seed, args.common.seed.map(Some));
    apply(&mut file.seeds, args.common.seeds);
    apply(&mut file.env, args.env.clone());
    if let Some(methods) = &args.method {
        file.methods = methods.iter().map(|m| m.parse()).collect::<s2vgd::Result<_>>()?;
    }
    let b = &mut file.bandit;
    args.model.apply(ModelSlots {
        hidden: &mut b.hidden,
        particles: &mut b.particles,
        k: &mut b.k,
        step: &mut b.step,
        prior_variance_init: &mut b.prior_variance_init,
        prior_scales: &mut b.prior_scales,
    })?;
    apply(&mut b.steps, args.steps);
    apply(&mut b.n_update, args.n_update);
    apply(&mut b.batch_size, args.batch_size);
    if file.methods.is_empty() {
        return Err(Failure::config("no bandit method given"));
    }
    let names: Vec<String> = file.methods.iter().map(|m| m.to_string()).collect();
    if (1..names.len()).any(|i| names[..i].contains(&names[i])) {
        return Err(Failure::config("bandit methods repeat"));
    }
    Ok(file)
}

pub fn run(args: BanditArgs) -> Outcome<i32> {
    let file = resolve(&args)?;
    let plan = Plan::new(&args.common, file.seed, file.seeds)?;
    plan.execute("bandit", &file, |seed, dir| run_seed(&file, seed, dir))
}

/// The synthetic table is redrawn per seed from stream `ENV_STREAM`.
pub fn make_env(file: &BanditFile, seed: u64) -> Outcome<MushroomEnv> {
    let mut env = if file.env == SYNTHETIC_ENV {
        MushroomEnv::synthetic(SYNTHETIC_ROWS, SYNTHETIC_WIDTH, &mut RngStream::new(seed, ENV_STREAM))?
    } else if let Some(path) = file.env.strip_prefix("mushroom:") {
        MushroomEnv::from_csv(&PathBuf::from(path))?
    } else {
        return Err(Failure::config(format!("unknown bandit environment '{}'", file.env)));
    };
    env.rewards = file.rewards;
    Ok(env)
}

/// Per-step CSV of one method, e.g. `regret_eps_greedy_0.1.csv`.
pub fn csv_name(method: Method) -> String {
    format!("regret_{}.csv", method.to_string().replace(':', "_"))
}

fn run_seed(file: &BanditFile, seed: u64, dir: &Path) -> Outcome<Value> {
    let env = make_env(file, seed)?;
    let mut results = Map::new();
    for &method in &file.methods {
        let run = run_bandit(&env, method, &file.bandit, seed, |_| {})?;
        write(&dir.join(csv_name(method)), &run.to_csv())?;
        let final_reward = run.rows.last().map_or(0.0, |r| r.cumulative_reward);
        results.insert(
            method.to_string(),
            json!({"final_regret": run.final_regret(), "final_reward": final_reward}),
        );
    }
    Ok(Value::Object(results))
}
