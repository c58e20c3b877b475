use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use iterseg::datagen::{generate_dataset, phantom_suite, split_dataset, Dataset, Split, SplitName};
use iterseg::env::{ActionSet, EnvConfig, EpisodeInput};
use iterseg::metrics::{evaluate_sequence_with, summarize, EvalReport};
use iterseg::neural::{ActorCritic, Checkpoint};
use iterseg::oracle::InteractionMode;
use iterseg::trainer::train;
use iterseg::volume::ProbabilityMap;
use iterseg_service::{serve, AppState, ServiceConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Classify, CliError, CliResult};

pub const TRAIN_LOG_FILE: &str = "train_log.ndjson";
pub const EVAL_FILE: &str = "eval.json";
pub const ABLATE_FILE: &str = "ablate.json";

/// The action sets swept by `ablate`, as magnitudes.
pub const ABLATION_SETS: [&[f64]; 7] = [
    &[1.0],
    &[0.4],
    &[0.2],
    &[0.1],
    &[0.1, 0.2],
    &[0.1, 0.2, 0.4],
    &[0.1, 0.2, 0.4, 1.0],
];

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).runtime()?;
    fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string(value).runtime()?);
    Ok(())
}

fn split_ids(split: &Split, name: SplitName, n: usize) -> Vec<usize> {
    match name {
        SplitName::Train1 => split.train1.clone(),
        SplitName::Train2 => split.train2.clone(),
        SplitName::Test => split.test.clone(),
        SplitName::All => (0..n).collect(),
    }
}

/// Cases of one split, read from a generated dataset or, without one,
/// generated in memory exactly as `gen` would write them (volumes are
/// narrowed to f32 like the files).
pub struct Cases {
    pub ids: Vec<usize>,
    pub inputs: Vec<EpisodeInput>,
}

pub fn load_cases(cfg: &RunConfig, data: Option<&Path>, split: SplitName) -> CliResult<Cases> {
    let cases = match data {
        Some(dir) => {
            let ds = Dataset::load(dir).data()?;
            Cases {
                ids: ds.ids(split),
                inputs: ds.select(split).data()?,
            }
        }
        None => {
            let narrow = |v: f64| v as f32 as f64;
            let all: Vec<EpisodeInput> = phantom_suite(&cfg.data)
                .data()?
                .into_iter()
                .map(|c| {
                    let initial = ProbabilityMap::new(c.initial.map(narrow))?;
                    EpisodeInput::new(c.image.map(narrow), initial, c.truth)
                })
                .collect::<iterseg::Result<_>>()
                .data()?;
            let ids: Vec<usize> = (0..all.len()).collect();
            let s = split_dataset(&ids, cfg.data.n_train, cfg.data.seed).data()?;
            let ids = split_ids(&s, split, all.len());
            Cases {
                inputs: ids.iter().map(|&i| all[i].clone()).collect(),
                ids,
            }
        }
    };
    if cases.inputs.is_empty() {
        return Err(CliError::Data(format!("split {split:?} is empty")));
    }
    Ok(cases)
}

#[derive(Serialize)]
struct GenSummary<'a> {
    out: &'a Path,
    cases: usize,
    train1: usize,
    train2: usize,
    test: usize,
}

pub fn gen(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    create_dir(out)?;
    let manifest = generate_dataset(out, &cfg.data).data()?;
    cfg.save(out)?;
    print_json(&GenSummary {
        out,
        cases: manifest.entries.len(),
        train1: manifest.split.train1.len(),
        train2: manifest.split.train2.len(),
        test: manifest.split.test.len(),
    })
}

fn fit(cfg: &RunConfig, inputs: &[EpisodeInput], log_path: Option<&Path>) -> CliResult<ActorCritic> {
    let net = ActorCritic::seeded(cfg.net.clone(), cfg.train.seed).config()?;
    let mut log = match log_path {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?,
        )),
        None => None,
    };
    let mut write_err = None;
    let outcome = train(net, inputs, &cfg.env, &cfg.train, |e| {
        log::info!(
            "epoch {} {:?} reward {:.4} dice {:.3}",
            e.epoch,
            e.phase,
            e.mean_reward,
            e.mean_dice
        );
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(e).expect("epoch log serializes");
            if let Err(err) = writeln!(w, "{line}") {
                write_err.get_or_insert(err);
            }
        }
    })
    .runtime()?;
    if let Some(mut w) = log {
        if let Some(err) = write_err {
            return Err(CliError::Runtime(format!("writing training log: {err}")));
        }
        w.flush().runtime()?;
    }
    Ok(outcome.net)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: &'a Path,
    train_cases: usize,
    epochs: usize,
}

pub fn train_cmd(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> CliResult<()> {
    let cases = load_cases(cfg, data, cfg.train_split)?;
    create_dir(out)?;
    cfg.save(out)?;
    let net = fit(cfg, &cases.inputs, Some(&out.join(TRAIN_LOG_FILE)))?;
    Checkpoint::new(net, cfg.env.actions.clone())
        .runtime()?
        .save(out)
        .runtime()?;
    print_json(&TrainSummary {
        checkpoint: out,
        train_cases: cases.inputs.len(),
        epochs: cfg.train.pretrain_epochs + cfg.train.epochs,
    })
}

#[derive(Debug, Serialize)]
pub struct CaseResult {
    pub id: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Mean per-step dice over the evaluated split, plus every case.
#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub interaction: InteractionMode,
    pub actions: Vec<f64>,
    pub step_dice: Vec<f64>,
    pub deltas: Vec<f64>,
    pub clicks_per_step: Vec<usize>,
    pub cases: Vec<CaseResult>,
}

/// Greedy episodes over `cases`, giving case `i` oracle seed
/// `rng_seed + i`. Also reports whether every probability stayed exactly
/// 0 or 1 from the initial map to the last step.
pub fn evaluate(net: &ActorCritic, cases: &Cases, env: &EnvConfig) -> CliResult<(EvalOutput, bool)> {
    let mut binary = true;
    let reports = cases
        .inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let mut cfg = env.clone();
            cfg.oracle.rng_seed = cfg.oracle.rng_seed.wrapping_add(i as u64);
            evaluate_sequence_with(net, input, &cfg, |state| {
                binary &= state.prob.data().iter().all(|&p| p == 0.0 || p == 1.0);
            })
        })
        .collect::<iterseg::Result<Vec<_>>>()
        .runtime()?;
    let suite = summarize(reports).runtime()?;
    let output = EvalOutput {
        interaction: env.oracle.mode,
        actions: env.actions.deltas().to_vec(),
        step_dice: suite.mean.step_dice,
        deltas: suite.mean.deltas,
        clicks_per_step: suite.mean.clicks_per_step,
        cases: cases
            .ids
            .iter()
            .zip(suite.cases)
            .map(|(&id, report)| CaseResult { id, report })
            .collect(),
    };
    Ok((output, binary))
}

/// The checkpoint decides the action set; an explicit `--actions` must agree.
pub fn reconcile_actions(cfg: &mut RunConfig, model: &Checkpoint, explicit: bool) -> CliResult<()> {
    if explicit && cfg.env.actions != model.actions {
        return Err(CliError::Config(format!(
            "--actions {:?} differs from the checkpoint's {:?}",
            cfg.env.actions.deltas(),
            model.actions.deltas()
        )));
    }
    cfg.set_actions(model.actions.clone());
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig, model: &Checkpoint, data: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let cases = load_cases(cfg, data, cfg.eval_split)?;
    let (result, _) = evaluate(&model.net, &cases, &cfg.env)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        cfg.save(dir)?;
        write_json(&dir.join(EVAL_FILE), &result)?;
    }
    print_json(&result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationPart {
    All,
    Actions,
    Interaction,
}

#[derive(Debug, Serialize)]
struct CellSummary {
    name: String,
    actions: Vec<f64>,
    interaction: InteractionMode,
    binary_regime: bool,
    final_dice: f64,
    step_dice: Vec<f64>,
    report: PathBuf,
}

#[derive(Debug, Serialize)]
struct CellReport<'a> {
    name: &'a str,
    binary_regime: bool,
    #[serde(flatten)]
    eval: &'a EvalOutput,
}

fn cell_name(actions: &ActionSet) -> String {
    let mags: Vec<String> = actions
        .deltas()
        .iter()
        .filter(|&&d| d > 0.0)
        .map(|d| d.to_string())
        .collect();
    format!("actions_{}", mags.join("_"))
}

/// Trains one model per action set and evaluates the configured set's model
/// under each interaction mode.
pub fn ablate(
    cfg: &RunConfig,
    data: Option<&Path>,
    explicit_actions: bool,
    part: AblationPart,
    out: &Path,
) -> CliResult<()> {
    let train_cases = load_cases(cfg, data, cfg.train_split)?;
    let eval_cases = load_cases(cfg, data, cfg.eval_split)?;
    create_dir(&out.join("cells"))?;
    cfg.save(out)?;
    let sets: Vec<ActionSet> = if explicit_actions {
        vec![cfg.env.actions.clone()]
    } else {
        ABLATION_SETS
            .iter()
            .map(|m| ActionSet::symmetric(m))
            .collect::<iterseg::Result<_>>()
            .config()?
    };

    let mut summaries = Vec::new();
    let mut reference = None;
    let record = |name: String, eval: EvalOutput, binary: bool| -> CliResult<CellSummary> {
        let report = PathBuf::from("cells").join(format!("{name}.json"));
        write_json(
            &out.join(&report),
            &CellReport {
                name: &name,
                binary_regime: binary,
                eval: &eval,
            },
        )?;
        log::info!(
            "{name}: final dice {:.4}",
            eval.step_dice.last().copied().unwrap_or(0.0)
        );
        Ok(CellSummary {
            final_dice: eval.step_dice.last().copied().unwrap_or(0.0),
            name,
            actions: eval.actions,
            interaction: eval.interaction,
            binary_regime: binary,
            step_dice: eval.step_dice,
            report,
        })
    };

    if part != AblationPart::Interaction {
        for set in &sets {
            let mut c = cfg.clone();
            c.set_actions(set.clone());
            let name = cell_name(set);
            log::info!("training {name}");
            let net = fit(&c, &train_cases.inputs, None)?;
            let (eval, binary) = evaluate(&net, &eval_cases, &c.env)?;
            let models = out.join("models").join(&name);
            create_dir(&models)?;
            Checkpoint::new(net.clone(), set.clone())
                .runtime()?
                .save(&models)
                .runtime()?;
            if *set == cfg.env.actions {
                reference = Some(net);
            }
            summaries.push(record(name, eval, binary)?);
        }
    }

    let mut modes = Vec::new();
    if part != AblationPart::Actions {
        let net = match reference {
            Some(net) => net,
            None => {
                log::info!("training the reference model");
                fit(cfg, &train_cases.inputs, None)?
            }
        };
        for mode in [InteractionMode::Good, InteractionMode::Without, InteractionMode::Bad] {
            let mut env = cfg.env.clone();
            env.oracle.mode = mode;
            let (eval, binary) = evaluate(&net, &eval_cases, &env)?;
            let name = format!(
                "interaction_{}",
                serde_json::to_value(mode).runtime()?.as_str().unwrap_or("mode")
            );
            modes.push(record(name, eval, binary)?);
        }
    }

    let summary = serde_json::json!({ "actions": summaries, "interaction": modes });
    write_json(&out.join(ABLATE_FILE), &summary)?;
    print_json(&summary)
}

pub fn serve_cmd(
    cfg: &RunConfig,
    addr: SocketAddr,
    checkpoint: Option<&Path>,
    checkpoint_root: Option<PathBuf>,
) -> CliResult<()> {
    let default_checkpoint = checkpoint.map(Checkpoint::load).transpose().data()?;
    let state = AppState::new(ServiceConfig {
        checkpoint_root,
        default_checkpoint,
        geodesy: cfg.env.geodesy,
    });
    let rt = tokio::runtime::Runtime::new().runtime()?;
    rt.block_on(serve(addr, state)).runtime()
}
