//! `regress` and `classify`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use s2vgd::bnn::{Checkpoint, Network, Prediction};
use s2vgd::data::{
    load_csv, split_and_normalize, synthetic_classification, synthetic_regression, CsvSchema, Dataset, Normalization, TargetKind,
};
use s2vgd::math::{mean, RngStream};
use s2vgd::train::{class_probabilities, classification_metrics, train_supervised, Evaluation, SupervisedConfig};

use crate::args::{ModelSlots, SupervisedArgs};
use crate::{apply, load_config, parse_named, write, write_json, Failure, Outcome, Plan};

pub const SYNTHETIC: &str = "synthetic";
/// Stream ids under the run seed: synthetic training draw, synthetic test
/// draw, CSV train/test split. Training itself uses stream 0.
pub const TRAIN_STREAM: u64 = 10;
pub const TEST_STREAM: u64 = 11;
pub const SPLIT_STREAM: u64 = 12;

/// Input bands of the synthetic regression task: between the two data
/// clusters, and inside the larger one.
pub const GAP_BAND: (f64, f64) = (0.62, 0.78);
pub const DATA_BAND: (f64, f64) = (0.1, 0.5);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedFile {
    pub seed: Option<u64>,
    pub seeds: usize,
    pub dataset: String,
    /// Header name or 0-based index; the last column when absent.
    pub target_column: Option<String>,
    pub categorical_columns: Vec<String>,
    pub header: bool,
    pub train_fraction: f64,
    pub training: SupervisedConfig,
}

impl Default for SupervisedFile {
    fn default() -> Self {
        SupervisedFile {
            seed: None,
            seeds: 1,
            dataset: SYNTHETIC.into(),
            target_column: None,
            categorical_columns: Vec::new(),
            header: true,
            train_fraction: 0.9,
            training: SupervisedConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regress,
    Classify,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Regress => "regress",
            Task::Classify => "classify",
        }
    }
}

pub fn resolve(args: &SupervisedArgs) -> Outcome<SupervisedFile> {
    let mut file: SupervisedFile = load_config(args.common.config.as_deref())?;
    apply(&mut file.seed, args.common.seed.map(Some));
    apply(&mut file.seeds, args.common.seeds);
    apply(&mut file.dataset, args.dataset.clone());
    apply(&mut file.target_column, args.target_column.clone().map(Some));
    apply(&mut file.categorical_columns, args.categorical.clone());
    if args.no_header {
        file.header = false;
    }
    apply(&mut file.train_fraction, args.train_fraction);
    let t = &mut file.training;
    args.model.apply(ModelSlots {
        hidden: &mut t.hidden,
        particles: &mut t.particles,
        k: &mut t.k,
        step: &mut t.step,
        prior_variance_init: &mut t.prior_variance_init,
        prior_scales: &mut t.prior_scales,
    })?;
    if let Some(a) = &args.activation {
        t.activation = parse_named("activation", a)?;
    }
    apply(&mut t.epochs, args.epochs);
    apply(&mut t.batch_size, args.batch_size);
    apply(&mut t.init_std, args.init_std);
    apply(&mut t.log_every, args.log_every);
    Ok(file)
}

pub fn regress(args: SupervisedArgs) -> Outcome<i32> {
    run(Task::Regress, args)
}

pub fn classify(args: SupervisedArgs) -> Outcome<i32> {
    run(Task::Classify, args)
}

fn run(task: Task, args: SupervisedArgs) -> Outcome<i32> {
    let file = resolve(&args)?;
    let plan = Plan::new(&args.common, file.seed, file.seeds)?;
    plan.execute(task.name(), &file, |seed, dir| run_seed(task, &file, seed, dir))
}

/// Normalized training and test sets plus the statistics used.
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub norm: Normalization,
}

pub fn load_data(task: Task, file: &SupervisedFile, seed: u64) -> Outcome<Split> {
    if file.dataset == SYNTHETIC {
        let generate = match task {
            Task::Regress => synthetic_regression,
            Task::Classify => synthetic_classification,
        };
        let train = generate(&mut RngStream::new(seed, TRAIN_STREAM));
        let test = generate(&mut RngStream::new(seed, TEST_STREAM));
        let norm = Normalization::fit(&train.inputs, &train.targets)?;
        return Ok(Split {
            train: train.normalized(&norm),
            test: test.normalized(&norm),
            norm,
        });
    }
    let path = Path::new(&file.dataset);
    let target_column = match &file.target_column {
        Some(c) => c.clone(),
        None => last_column(path)?,
    };
    let schema = CsvSchema {
        target_column,
        target_kind: match task {
            Task::Regress => TargetKind::Real,
            Task::Classify => TargetKind::Class,
        },
        categorical_columns: file.categorical_columns.clone(),
        has_header: file.header,
    };
    let data = load_csv(path, &schema)?;
    let (train, test) = split_and_normalize(&data, file.train_fraction, &mut RngStream::new(seed, SPLIT_STREAM))?;
    let norm = train.normalization.clone().expect("split records its statistics");
    Ok(Split { train, test, norm })
}

fn last_column(path: &Path) -> Outcome<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: crate::EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    let width = text.lines().next().map_or(0, |l| l.split(',').count());
    if width == 0 {
        return Err(Failure {
            code: crate::EXIT_DATA,
            message: format!("{}: empty file", path.display()),
        });
    }
    Ok((width - 1).to_string())
}

fn run_seed(task: Task, file: &SupervisedFile, seed: u64, dir: &Path) -> Outcome<Value> {
    let split = load_data(task, file, seed)?;
    let run = train_supervised(&file.training, &split.train, Some(&split.test), seed, |_| {})?;
    write(&dir.join("metrics.csv"), &run.metrics_csv())?;
    let checkpoint = Checkpoint::new(&run.net, run.ensemble.particles.clone())?;
    write(&dir.join("checkpoint.json"), &checkpoint.to_json()?)?;
    write_json(&dir.join("normalization.json"), &split.norm)?;

    let last = run.rows.last().expect("at least one epoch");
    let mut results = Map::new();
    results.insert("final_train_log_posterior".into(), json!(last.train_log_posterior));
    match last.test {
        Some(Evaluation::Regression(m)) => {
            results.insert("test_rmse".into(), json!(m.rmse));
            results.insert("test_log_likelihood".into(), json!(m.log_likelihood));
        }
        Some(Evaluation::Classification(m)) => {
            results.insert("test_accuracy".into(), json!(m.accuracy));
            results.insert("test_log_likelihood".into(), json!(m.log_likelihood));
        }
        None => {}
    }
    let particles = &run.ensemble.particles;
    let synthetic = file.dataset == SYNTHETIC;
    match task {
        Task::Regress if synthetic => {
            write(&dir.join("predictive.csv"), &predictive_csv(&run.net, particles, &split.norm)?)?;
            let gap = band_epistemic_std(&run.net, particles, &split.norm, GAP_BAND)?;
            let data = band_epistemic_std(&run.net, particles, &split.norm, DATA_BAND)?;
            results.insert("epistemic".into(), json!({"gap": gap, "data": data, "ratio": gap / data}));
        }
        Task::Regress => {}
        Task::Classify => {
            let train = classification_metrics(&run.net, particles, &split.train)?;
            results.insert("train_accuracy".into(), json!(train.accuracy));
            if split.train.input_dim() == 2 {
                write(&dir.join("grid.csv"), &grid_csv(&run.net, particles, &split.norm, split.train.output_dim())?)?;
                if synthetic {
                    let p = class_probabilities(&run.net, particles, &split.norm.normalize_input(&[0.0, 0.0]))?;
                    results.insert("p1_origin".into(), json!(p[1]));
                }
            }
        }
    }
    Ok(Value::Object(results))
}

fn regression_prediction(net: &Network, particles: &[Vec<f64>], norm: &Normalization, x: f64) -> Outcome<(f64, f64, f64)> {
    match net.predict_ensemble(particles, &norm.normalize_input(&[x]))? {
        Prediction::Regression {
            mean,
            epistemic_std,
            total_std,
        } => {
            let scale = norm.target_scale(0);
            Ok((norm.denormalize_target(&mean)[0], epistemic_std[0] * scale, total_std[0] * scale))
        }
        Prediction::Classification { .. } => Err(Failure::config("regression output expected")),
    }
}

/// Mean epistemic standard deviation over 50 evenly spaced points of a band,
/// in target units.
pub fn band_epistemic_std(net: &Network, particles: &[Vec<f64>], norm: &Normalization, (lo, hi): (f64, f64)) -> Outcome<f64> {
    let stds = (0..50)
        .map(|i| {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / 50.0;
            regression_prediction(net, particles, norm, x).map(|p| p.1)
        })
        .collect::<Outcome<Vec<f64>>>()?;
    Ok(mean(&stds))
}

fn predictive_csv(net: &Network, particles: &[Vec<f64>], norm: &Normalization) -> Outcome<String> {
    let mut out = String::from("x,mean,epistemic_std,total_std\n");
    for i in 0..=140 {
        let x = -0.2 + i as f64 * 0.01;
        let (m, e, t) = regression_prediction(net, particles, norm, x)?;
        out.push_str(&format!("{x},{m},{e},{t}\n"));
    }
    Ok(out)
}

/// Predictive class probabilities on an 81×81 grid over [−4, 4]².
fn grid_csv(net: &Network, particles: &[Vec<f64>], norm: &Normalization, classes: usize) -> Outcome<String> {
    let mut out = String::from("x1,x2");
    for c in 0..classes {
        out.push_str(&format!(",p{c}"));
    }
    out.push('\n');
    for i in 0..=80 {
        for j in 0..=80 {
            let (x1, x2) = (-4.0 + 0.1 * i as f64, -4.0 + 0.1 * j as f64);
            let p = class_probabilities(net, particles, &norm.normalize_input(&[x1, x2]))?;
            out.push_str(&format!("{x1},{x2}"));
            for v in p {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
