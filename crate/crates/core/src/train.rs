//! Training loop, checkpoints with optimizer state, evaluation and the
//! ablation sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, Sample};
use crate::error::{Error, Result};
use crate::loss::loss_total;
use crate::metrics::{psnr, MetricsReport, SampleMetrics};
use crate::model::{load_params, save_params, Model, ModelConfig, SarInput};
use crate::nn::{ParamKind, ParamStore, Session};
use crate::ops::Mode;
use crate::optim::Adam;
use crate::run::RunConfig;
use crate::tensor::Tensor;

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub total: f64,
    pub global: f64,
    pub local: f64,
    pub ssim: f64,
    /// PSNR of the clipped prediction, dB.
    pub psnr: f64,
}

impl StepStats {
    fn add(&mut self, o: &StepStats) {
        self.total += o.total;
        self.global += o.global;
        self.local += o.local;
        self.ssim += o.ssim;
        self.psnr += o.psnr;
    }

    fn scaled(self, k: f64) -> StepStats {
        StepStats {
            total: self.total * k,
            global: self.global * k,
            local: self.local * k,
            ssim: self.ssim * k,
            psnr: self.psnr * k,
        }
    }
}

/// Batch tensors: cloudy, radar (if used), clean target and mask.
pub struct Batch {
    pub cloudy: Tensor,
    pub sar: Option<Tensor>,
    pub clean: Tensor,
    pub mask: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample], sel: SarInput) -> Result<Batch> {
        let stack = |f: &dyn Fn(&Sample) -> Tensor| -> Result<Tensor> {
            let parts: Vec<Tensor> = samples.iter().map(|s| f(s)).collect();
            Tensor::stack(&parts)
        };
        Ok(Batch {
            cloudy: stack(&|s| s.cloudy.clone())?,
            sar: match sel {
                SarInput::None => None,
                _ => Some(stack(&|s| s.sar(sel).expect("radar selected"))?),
            },
            clean: stack(&|s| s.clean.clone())?,
            mask: stack(&|s| s.mask.clone())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainState {
    step: usize,
    adam_step: u64,
}

/// Mutable training state of one model.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub store: ParamStore,
    pub adam: Adam,
    /// Optimizer steps taken so far.
    pub step: usize,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (model, store) = Model::build(config.model_config(), config.seed)?;
        let adam = Adam::new(config.adam(), &store);
        Ok(Trainer {
            config,
            model,
            store,
            adam,
            step: 0,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.config
    }

    fn sar_input(&self) -> SarInput {
        if self.model.config.dual() {
            self.config.sar_input
        } else {
            SarInput::None
        }
    }

    /// Batches per pass over `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.config.batch_size)
    }

    /// Sample indices used at global step `step`: each epoch visits a fresh
    /// seeded permutation.
    pub fn batch_indices(&self, step: usize, n: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(n);
        let (epoch, pos) = (step / spe, step % spe);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, 0xE90C + epoch as u64)));
        let bs = self.config.batch_size;
        order[pos * bs..((pos + 1) * bs).min(n)].to_vec()
    }

    fn loss_stats(&self, store: &mut ParamStore, batch: &Batch, mode: Mode, update: bool) -> Result<(StepStats, Option<Vec<Option<Tensor>>>)> {
        let mut s = Session::new(store, mode, update);
        let c = s.input(batch.cloudy.clone(), false);
        let r = batch.sar.as_ref().map(|t| s.input(t.clone(), false));
        let y = self.model.forward(&mut s, c, r)?;
        let t = s.input(batch.clean.clone(), false);
        let parts = loss_total(&mut s.graph, y, t, &batch.mask, self.config.loss_weights())?;
        let stats = StepStats {
            total: s.value(parts.total).item(),
            global: s.value(parts.global).item(),
            local: s.value(parts.local).item(),
            ssim: s.value(parts.ssim).item(),
            psnr: psnr(&s.value(y).map(|v| v.clamp(0.0, 1.0)), &batch.clean)?,
        };
        let grads = if update { Some(s.backward(parts.total)?) } else { None };
        Ok((stats, grads))
    }

    /// Composite loss without changing any state; batch statistics are used
    /// in train mode on a scratch copy of the parameters.
    pub fn loss(&self, batch: &Batch, mode: Mode) -> Result<StepStats> {
        let mut scratch = self.store.clone();
        Ok(self.loss_stats(&mut scratch, batch, mode, false)?.0)
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let mut store = std::mem::take(&mut self.store);
        let res = self.loss_stats(&mut store, batch, Mode::Train, true);
        self.store = store;
        let (stats, grads) = res?;
        if !stats.total.is_finite() {
            return Err(Error::NonFinite {
                op: "loss_total",
                shape: crate::tensor::Shape::scalar(),
            });
        }
        let grads = grads.expect("gradients requested");
        if let Some(bad) = grads.iter().flatten().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                op: "backward",
                shape: bad.shape(),
            });
        }
        self.adam.update(&mut self.store, &grads)?;
        self.step += 1;
        Ok(stats)
    }

    /// Train until `total_steps`, writing a checkpoint to `checkpoint` after
    /// every completed epoch and at the end. `log` receives one line per
    /// epoch.
    pub fn run(
        &mut self,
        samples: &[Sample],
        total_steps: usize,
        checkpoint: Option<&Path>,
        log: &mut dyn FnMut(&str),
    ) -> Result<Vec<StepStats>> {
        if samples.is_empty() {
            return Err(Error::Invalid("no training samples".into()));
        }
        let spe = self.steps_per_epoch(samples.len());
        let sel = self.sar_input();
        let mut epoch_sum = StepStats::default();
        let mut in_epoch = 0usize;
        let mut epochs = Vec::new();
        while self.step < total_steps {
            let idx = self.batch_indices(self.step, samples.len());
            let refs: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_samples(&refs, sel)?;
            let st = self.train_step(&batch)?;
            epoch_sum.add(&st);
            in_epoch += 1;
            let epoch_done = self.step.is_multiple_of(spe);
            if epoch_done || self.step == total_steps {
                let mean = epoch_sum.scaled(1.0 / in_epoch as f64);
                log(&format!(
                    "epoch={} step={} loss={:.6} l_global={:.6} l_local={:.6} ssim={:.6} psnr={:.4}",
                    self.step.div_ceil(spe),
                    self.step,
                    mean.total,
                    mean.global,
                    mean.local,
                    mean.ssim,
                    mean.psnr
                ));
                epochs.push(mean);
                epoch_sum = StepStats::default();
                in_epoch = 0;
                if let Some(dir) = checkpoint {
                    self.save(dir)?;
                }
            }
        }
        Ok(epochs)
    }

    fn moment_store(&self) -> Result<ParamStore> {
        let mut st = ParamStore::new();
        for id in self.store.trainable_ids() {
            let name = self.store.name(id);
            let i = id.index();
            st.insert(format!("m.{name}"), ParamKind::Trainable, self.adam.m[i].clone().expect("moment"))?;
            st.insert(format!("v.{name}"), ParamKind::Trainable, self.adam.v[i].clone().expect("moment"))?;
        }
        Ok(st)
    }

    /// Write parameters, optimizer moments, step counters and the run
    /// configuration under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_params(dir.join("params"), &self.store)?;
        save_params(dir.join("optimizer"), &self.moment_store()?)?;
        let state = TrainState {
            step: self.step,
            adam_step: self.adam.step,
        };
        let write = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("state.toml", toml::to_string(&state).expect("state serializes"))?;
        write("config.toml", self.config.to_toml())
    }

    /// Restore a trainer saved by [`Trainer::save`]. The model is rebuilt
    /// from `config`, which must describe the same network.
    pub fn resume(config: RunConfig, dir: &Path) -> Result<Self> {
        let mut t = Trainer::new(config)?;
        load_params(dir.join("params"), &mut t.store)?;
        let mut moments = t.moment_store()?;
        load_params(dir.join("optimizer"), &mut moments)?;
        for id in t.store.trainable_ids().collect::<Vec<_>>() {
            let name = t.store.name(id).to_string();
            let get = |prefix: &str| moments.get(moments.find(&format!("{prefix}.{name}")).expect("moment entry")).clone();
            t.adam.m[id.index()] = Some(get("m"));
            t.adam.v[id.index()] = Some(get("v"));
        }
        let sp = dir.join("state.toml");
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let state: TrainState = toml::from_str(&text).map_err(|e| Error::Format {
            what: "training state",
            detail: e.to_string(),
        })?;
        t.step = state.step;
        t.adam.step = state.adam_step;
        Ok(t)
    }

    /// Whether `dir` holds a resumable checkpoint.
    pub fn has_checkpoint(dir: &Path) -> bool {
        dir.join("state.toml").is_file()
    }
}

/// Predict every sample in eval mode and score the clipped prediction.
/// Work is split across `threads` workers; the result does not depend on
/// the thread count.
pub fn evaluate(model: &Model, store: &ParamStore, samples: &[Sample], sel: SarInput, threads: usize) -> Result<MetricsReport> {
    let sel = if model.config.dual() { sel } else { SarInput::None };
    let score = |s: &Sample, store: &mut ParamStore| -> Result<SampleMetrics> {
        let sar = s.sar(sel);
        let pred = model.predict(store, &s.cloudy, sar.as_ref())?.map(|v| v.clamp(0.0, 1.0));
        SampleMetrics::compute(&pred, &s.clean, &s.mask)
    };
    let chunk = samples.len().div_ceil(threads.max(1)).max(1);
    let results: Vec<Result<Vec<SampleMetrics>>> = thread::scope(|sc| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                let mut local = store.clone();
                let score = &score;
                sc.spawn(move || part.iter().map(|s| score(s, &mut local)).collect::<Result<Vec<_>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut report = MetricsReport::new();
    let mut it = samples.iter();
    for part in results {
        for m in part? {
            let s = it.next().expect("one result per sample");
            report.push(s.coverage_bin, s.class_label, m)?;
        }
    }
    Ok(report)
}

/// One line of the ablation comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub overall: SampleMetrics,
    pub final_loss: f64,
    pub report: MetricsReport,
}

/// Named run configurations of the sweep: module ablations (full model
/// first) followed by the radar input selections.
pub fn ablation_variants(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    for (name, ab) in crate::model::Ablations::variants() {
        out.push((
            name.to_string(),
            RunConfig {
                ablations: ab,
                ..base.clone()
            },
        ));
    }
    for sel in SarInput::ALL {
        out.push((
            format!("input_{}", sel.name()),
            RunConfig {
                sar_input: sel,
                ablations: Default::default(),
                ..base.clone()
            },
        ));
    }
    out
}

/// Train and evaluate one configuration from scratch.
pub fn train_and_evaluate(cfg: &RunConfig, train: &[Sample], test: &[Sample]) -> Result<(MetricsReport, f64)> {
    let mut t = Trainer::new(cfg.clone())?;
    let total = cfg.total_steps(train.len());
    let epochs = t.run(train, total, None, &mut |_| {})?;
    let report = evaluate(&t.model, &t.store, test, cfg.sar_input, 1)?;
    Ok((report, epochs.last().map_or(f64::NAN, |e| e.total)))
}

/// Run every variant, distinct configurations in parallel on up to
/// `threads` workers. Variants with identical configurations share a run.
pub fn run_ablation(base: &RunConfig, train: &[Sample], test: &[Sample], threads: usize) -> Result<Vec<AblationRow>> {
    let variants = ablation_variants(base);
    let mut unique: Vec<RunConfig> = Vec::new();
    let slot: Vec<usize> = variants
        .iter()
        .map(|(_, c)| {
            let key = RunConfig { ..c.clone() };
            match unique.iter().position(|u| u.model_config() == key.model_config()) {
                Some(i) => i,
                None => {
                    unique.push(key);
                    unique.len() - 1
                }
            }
        })
        .collect();
    let mut results: Vec<Option<Result<(MetricsReport, f64)>>> = (0..unique.len()).map(|_| None).collect();
    for start in (0..unique.len()).step_by(threads.max(1)) {
        let end = (start + threads.max(1)).min(unique.len());
        let batch: Vec<Result<(MetricsReport, f64)>> = thread::scope(|sc| {
            let hs: Vec<_> = unique[start..end]
                .iter()
                .map(|c| sc.spawn(move || train_and_evaluate(c, train, test)))
                .collect();
            hs.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
        });
        for (k, r) in batch.into_iter().enumerate() {
            results[start + k] = Some(r);
        }
    }
    let results: Vec<(MetricsReport, f64)> = results
        .into_iter()
        .map(|r| r.expect("every configuration ran"))
        .collect::<Result<_>>()?;
    variants
        .iter()
        .zip(slot)
        .map(|((name, _), i)| {
            let (report, loss) = &results[i];
            Ok(AblationRow {
                variant: name.clone(),
                overall: report.overall().ok_or_else(|| Error::Invalid("empty test split".into()))?,
                final_loss: *loss,
                report: report.clone(),
            })
        })
        .collect()
}

pub const ABLATION_HEADER: &str = "variant\tpsnr\tssim\tcc\tsam\tmasked_l1\tfinal_loss";

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        let m = r.overall;
        writeln!(
            out,
            "{}\t{:.4}\t{:.6}\t{:.6}\t{:.4}\t{:.6}\t{:.6}",
            r.variant, m.psnr, m.ssim, m.cc, m.sam, m.masked_l1, r.final_loss
        )
        .expect("string write");
    }
    out
}
