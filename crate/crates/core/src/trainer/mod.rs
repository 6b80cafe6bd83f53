//! The pretraining loop: task interleaving, gradient accumulation, per-group
//! learning rates, periodic validation, early stopping and checkpointing.

mod config;
mod data;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::GroundedPair;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamKind};
use crate::objectives::{task_loss, LossValue, Objective, TaskBatch};
use crate::optim::{AdamW, AdamWConfig};
use crate::pipeline::{init_sampling_weights, next_task, DataBudget, Task, Vocab};
use crate::rng::{seeded, stream, RngState};
use crate::scheduler::{SchedulerConfig, SchedulerEvent, SchedulerState};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub use config::{lr_at, lr_at_named, TrainConfig};
pub use data::{batch_ranges, prepare_data, with_cls, ChunkRef, PreparedData, ValidationSet};
pub use manifest::{select_checkpoint, CheckpointManifest, MetricRecord, Split};

use data::StreamWalkers;

/// Called with the step and the held-out losses of each validation, before
/// the scheduler sees them. Test harnesses use it to force loss trajectories.
pub type ValidationHook<'h> = Box<dyn FnMut(u64, &mut BTreeMap<Objective, f64>) + 'h>;

#[derive(Default)]
pub struct RunOptions<'h> {
    pub config_hash: String,
    /// Where manifests, parameter blobs and logs are written, if anywhere.
    pub out_dir: Option<PathBuf>,
    pub validation_hook: Option<ValidationHook<'h>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    /// Every sampling weight reached zero with no restart pending.
    Exhausted,
}

pub struct RunOutcome {
    pub manifests: Vec<CheckpointManifest>,
    pub metrics: Vec<MetricRecord>,
    pub events: Vec<SchedulerEvent>,
    pub initial_scheduler: SchedulerState,
    pub final_scheduler: SchedulerState,
    pub final_params: ModelParams,
    pub best_params: ModelParams,
    pub selected: CheckpointManifest,
    pub steps: u64,
    pub stop_reason: StopReason,
}

fn group_loss(losses: &BTreeMap<Objective, f64>, task: Task) -> Option<f64> {
    let parts: Vec<f64> =
        losses.iter().filter(|(o, _)| o.task() == task).map(|(_, l)| *l).collect();
    (!parts.is_empty()).then(|| parts.iter().sum())
}

/// Mean held-out loss of each enabled objective of `tasks`, with masking
/// drawn from a fixed validation stream.
pub fn validate(
    params: &ModelParams,
    data: &PreparedData,
    vset: &ValidationSet,
    train: &TrainConfig,
    tasks: &[Task],
) -> Result<BTreeMap<Objective, LossValue>> {
    let mut mask_rng = seeded(train.seed, stream::VALIDATION_MASKING);
    let mut neg_rng = seeded(train.seed, stream::VALIDATION_NEGATIVES);
    let mut sums: BTreeMap<Objective, (f64, usize)> = BTreeMap::new();
    let mut add = |batch: &TaskBatch| -> Result<()> {
        let mut tape = Tape::new(&params.tensors);
        if let Some(step) = task_loss(&mut tape, params, batch, &train.objectives, train.temperature)? {
            for (o, v, n) in step.parts {
                let e = sums.entry(o).or_insert((0.0, 0));
                e.0 += tape.value(v).item() * n as f64;
                e.1 += n;
            }
        }
        Ok(())
    };
    let size = train.micro_batch_size;
    for &task in tasks {
        match task {
            Task::Text => {
                if vset.text.is_empty() {
                    return Err(Error::Config("held-out text split is empty".into()));
                }
                for r in batch_ranges(vset.text.len(), size) {
                    let chunks: Vec<&[usize]> = vset.text[r].iter().map(|c| data.chunk(*c)).collect();
                    add(&data.text_batch(&chunks, train.p_mask_text, &mut mask_rng))?;
                }
            }
            Task::Vision => {
                if vset.vision.is_empty() {
                    return Err(Error::Config("held-out vision split is empty".into()));
                }
                for r in batch_ranges(vset.vision.len(), size) {
                    add(&data.vision_batch(&vset.vision[r], train.p_mask_image, &mut mask_rng))?;
                }
            }
            Task::Multimodal => {
                let pairwise = train.objectives.iter().any(|o| matches!(o, Objective::Itm | Objective::Contrastive));
                if vset.multimodal.is_empty() || (pairwise && vset.multimodal.len() < 2) {
                    return Err(Error::Config("held-out multimodal split is too small".into()));
                }
                for r in batch_ranges(vset.multimodal.len(), size) {
                    let items = &vset.multimodal[r];
                    let ids: Vec<usize> = items.iter().map(|(p, _)| *p).collect();
                    let chunks: Vec<&[usize]> = items.iter().map(|(_, c)| data.chunk(*c)).collect();
                    add(&data.pair_batch(&ids, &chunks, train, &mut mask_rng, &mut neg_rng)?)?;
                }
            }
        }
    }
    Ok(sums.into_iter().map(|(o, (s, n))| (o, LossValue { loss: s / n as f64, count: n })).collect())
}

/// Pretrains `params` on prepared data.
pub fn train(
    mut params: ModelParams,
    data: &PreparedData,
    train: &TrainConfig,
    scheduler: &SchedulerConfig,
    mut opts: RunOptions,
) -> Result<RunOutcome> {
    train.validate()?;
    let init = init_sampling_weights(&data.loaders)?;
    let mut sched = SchedulerState::new(scheduler.clone(), init)?;
    let initial_scheduler = sched.clone();
    let vset = ValidationSet::new(data, train);
    let mut walkers = StreamWalkers::new(data, train.seed)?;
    let mut task_rng = seeded(train.seed, stream::TASKS);
    let mut mask_rng = seeded(train.seed, stream::MASKING);
    let mut neg_rng = seeded(train.seed, stream::NEGATIVES);

    let decay: Vec<bool> =
        params.specs.iter().map(|s| matches!(s.kind, ParamKind::Weight | ParamKind::Identity)).collect();
    let adam = AdamWConfig { betas: train.adam_betas, eps: train.adam_eps, weight_decay: train.weight_decay };
    let mut opt = AdamW::new(adam, &params.tensors, decay);
    let groups: Vec<_> = (0..params.len()).map(|i| params.group_of(i)).collect();

    let mut metrics = Vec::new();
    let mut events = Vec::new();
    let mut manifests: Vec<CheckpointManifest> = Vec::new();
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut step = 0u64;
    let stop_reason;

    loop {
        // validation phase
        let active = sched.active_tasks();
        let values = validate(&params, data, &vset, train, &active)?;
        let mut losses: BTreeMap<Objective, f64> = values.iter().map(|(o, v)| (*o, v.loss)).collect();
        if let Some(hook) = opts.validation_hook.as_mut() {
            hook(step, &mut losses);
        }
        for (o, l) in &losses {
            let count = values.get(o).map_or(0, |v| v.count);
            metrics.push(MetricRecord { step, task: o.task(), split: Split::Val, objective: *o, loss: *l, target_count: count });
        }
        for &task in &active {
            if let Some(l) = group_loss(&losses, task) {
                events.extend(sched.on_validation(task, l)?);
            }
        }
        events.extend(sched.on_phase_end());
        let manifest = CheckpointManifest {
            step,
            phase: sched.phase - 1,
            config_hash: opts.config_hash.clone(),
            val_losses: losses,
            scheduler: sched.clone(),
            rng: RngState::capture(train.seed, &task_rng),
            params_file: None,
        };
        if manifest.selection_loss() < best_loss {
            best_loss = manifest.selection_loss();
            best_params = params.clone();
        }
        manifests.push(manifest);

        if step >= train.max_steps {
            stop_reason = StopReason::MaxSteps;
            break;
        }
        // idle phases until a stopped task restarts
        while sched.current_weights().total() == 0.0 && sched.restart_pending() {
            events.extend(sched.on_phase_end());
        }
        if sched.current_weights().total() == 0.0 {
            stop_reason = StopReason::Exhausted;
            break;
        }

        // train until the next validation
        let next_val = ((step / train.validation_interval_steps) + 1) * train.validation_interval_steps;
        let until = next_val.min(train.max_steps);
        while step < until {
            let weights = sched.current_weights();
            let mut acc: Vec<Option<Tensor>> = vec![None; params.len()];
            let scale = 1.0 / train.accumulation_steps as f64;
            for _ in 0..train.accumulation_steps {
                let task = next_task(&weights, &mut task_rng)?;
                let batch = walkers.next_batch(data, task, train, &mut mask_rng, &mut neg_rng)?;
                let mut tape = Tape::new(&params.tensors);
                let loss = task_loss(&mut tape, &params, &batch, &train.objectives, train.temperature)?
                    .ok_or_else(|| Error::Usage(format!("no enabled objective for sampled task {task}")))?;
                let total = tape.value(loss.total).item();
                if !total.is_finite() {
                    return Err(Error::NonFinite { step: step + 1, task: task.to_string(), loss: total });
                }
                for (o, v, n) in &loss.parts {
                    metrics.push(MetricRecord {
                        step: step + 1,
                        task,
                        split: Split::Train,
                        objective: *o,
                        loss: tape.value(*v).item(),
                        target_count: *n,
                    });
                }
                for (a, g) in acc.iter_mut().zip(tape.backward(loss.total).into_params()) {
                    let Some(mut g) = g else { continue };
                    g.scale_in_place(scale);
                    match a {
                        Some(a) => a.add_assign(&g),
                        None => *a = Some(g),
                    }
                }
            }
            step += 1;
            let lrs: Vec<f64> = groups.iter().map(|g| lr_at(train, *g, step)).collect();
            opt.step(&mut params.tensors, &acc, &lrs);
        }
    }

    let selected = select_checkpoint(&manifests).expect("at least one validation phase").clone();
    let outcome = RunOutcome {
        manifests,
        metrics,
        events,
        initial_scheduler,
        final_scheduler: sched,
        final_params: params,
        best_params,
        selected,
        steps: step,
        stop_reason,
    };
    if let Some(dir) = &opts.out_dir {
        write_run(dir, &outcome, &opts.config_hash)?;
    }
    Ok(outcome)
}

/// Partitions and tokenizes `corpus`, initializes a model and trains it.
#[allow(clippy::too_many_arguments)]
pub fn run(
    corpus: &[GroundedPair],
    budget: DataBudget,
    vocab: Vocab,
    model: &ModelConfig,
    train_config: &TrainConfig,
    scheduler: &SchedulerConfig,
    opts: RunOptions,
) -> Result<(PreparedData, RunOutcome)> {
    train_config.validate()?;
    let data = prepare_data(corpus, budget, vocab, model, train_config)?;
    let config = data.model_config(model);
    let params = ModelParams::init(&config, config.seed)?;
    let outcome = train(params, &data, train_config, scheduler, opts)?;
    Ok((data, outcome))
}

pub const BEST_PARAMS: &str = "best.params";
pub const FINAL_PARAMS: &str = "final.params";
pub const METRICS_LOG: &str = "metrics.csv";
pub const SCHEDULER_LOG: &str = "scheduler_events.csv";
pub const MANIFEST_DIR: &str = "manifests";

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes manifests, the selected and final parameters, and both logs.
pub fn write_run(dir: &Path, outcome: &RunOutcome, config_hash: &str) -> Result<()> {
    let mdir = dir.join(MANIFEST_DIR);
    fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
    let last = outcome.manifests.last().map(|m| m.step);
    for m in &outcome.manifests {
        let mut m = m.clone();
        if m.step == outcome.selected.step {
            m.params_file = Some(BEST_PARAMS.into());
        } else if Some(m.step) == last {
            m.params_file = Some(FINAL_PARAMS.into());
        }
        m.save(&mdir.join(format!("step-{:08}.toml", m.step)))?;
    }
    let mut selected = outcome.selected.clone();
    selected.params_file = Some(BEST_PARAMS.into());
    selected.save(&dir.join("selected.toml"))?;
    outcome.best_params.save_tagged(&dir.join(BEST_PARAMS), config_hash)?;
    outcome.final_params.save_tagged(&dir.join(FINAL_PARAMS), config_hash)?;
    let mut log = format!("# config_hash {config_hash}\n{}\n", MetricRecord::HEADER);
    for r in &outcome.metrics {
        log.push_str(&r.to_line());
        log.push('\n');
    }
    write_file(&dir.join(METRICS_LOG), &log)?;
    let mut ev = format!("# config_hash {config_hash}\nphase,task,event,weight_after,val_loss\n");
    for e in &outcome.events {
        ev.push_str(&e.to_line());
        ev.push('\n');
    }
    write_file(&dir.join(SCHEDULER_LOG), &ev)
}
