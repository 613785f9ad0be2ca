//! `rl`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use s2vgd::bnn::Checkpoint;
use s2vgd::rl::{run_rl, CartPole, RlConfig};

use crate::args::{ModelSlots, RlArgs};
use crate::{apply, load_config, write, Outcome, Plan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlFile {
    pub seed: Option<u64>,
    pub seeds: usize,
    pub cartpole: CartPole,
    pub rl: RlConfig,
}

impl Default for RlFile {
    fn default() -> Self {
        RlFile {
            seed: None,
            seeds: 1,
            cartpole: CartPole::default(),
            rl: RlConfig::default(),
        }
    }
}

pub fn resolve(args: &RlArgs) -> Outcome<RlFile> {
    let mut file: RlFile = load_config(args.common.config.as_deref())?;
    apply(&mut file.seed, args.common.seed.map(Some));
    apply(&mut file.seeds, args.common.seeds);
    let r = &mut file.rl;
    args.model.apply(ModelSlots {
        hidden: &mut r.hidden,
        particles: &mut r.particles,
        k: &mut r.k,
        step: &mut r.step,
        prior_variance_init: &mut r.prior_variance_init,
        prior_scales: &mut r.prior_scales,
    })?;
    apply(&mut r.alpha, args.alpha);
    apply(&mut r.iterations, args.iters);
    apply(&mut r.episodes_per_iter, args.episodes);
    apply(&mut r.discount, args.discount);
    Ok(file)
}

pub fn run(args: RlArgs) -> Outcome<i32> {
    let file = resolve(&args)?;
    let plan = Plan::new(&args.common, file.seed, file.seeds)?;
    plan.execute("rl", &file, |seed, dir| run_seed(&file, seed, dir))
}

fn run_seed(file: &RlFile, seed: u64, dir: &Path) -> Outcome<Value> {
    let run = run_rl(&file.cartpole, &file.rl, seed, |_| {})?;
    write(&dir.join("metrics.csv"), &run.to_csv())?;
    let net = file.rl.network(&file.cartpole)?;
    let checkpoint = Checkpoint::new(&net, run.ensemble.particles.clone())?;
    write(&dir.join("checkpoint.json"), &checkpoint.to_json()?)?;
    let returns: Vec<f64> = run.rows.iter().map(|r| r.mean_return).collect();
    let Some((&first, &last)) = returns.first().zip(returns.last()) else {
        return Ok(json!({}));
    };
    let best = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({"first_return": first, "last_return": last, "best_return": best}))
}
