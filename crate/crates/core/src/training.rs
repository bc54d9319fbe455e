//! Seeded training loop shared by every trained model.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{apply_adapter, loss_and_grads, Batch, ControlBranch, Denoiser, LowRankAdapter, ModelRef, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{AdamW, Grads, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_warmup() -> usize {
    100
}

fn default_clip() -> f64 {
    1.0
}

impl OptimConfig {
    pub fn new(iterations: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self { iterations, batch_size, learning_rate, warmup: default_warmup(), grad_clip: default_clip(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::invalid("grad_clip must be >= 0"));
        }
        Ok(())
    }

    /// Linear warmup, then cosine decay to a tenth of the peak.
    pub fn lr_at(&self, it: usize) -> f64 {
        let lr = self.learning_rate;
        if it < self.warmup {
            return lr * (it + 1) as f64 / self.warmup as f64;
        }
        let span = self.iterations.saturating_sub(self.warmup).max(1);
        let p = ((it - self.warmup) as f64 / span as f64).min(1.0);
        lr * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub loss: f64,
    pub wall_clock_s: f64,
}

/// What a run updates; everything else is frozen.
pub enum Trainable<'a, S> {
    Base(&'a mut Denoiser<S>),
    Adapter { base: &'a Denoiser<S>, adapter: &'a mut LowRankAdapter<S> },
    Control { base: &'a Denoiser<S>, weights: &'a ParamSet<S>, branch: &'a mut ControlBranch<S> },
}

fn clip<S: Scalar>(g: &mut Grads<S>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let n = g.norm().as_f64();
    if n > max_norm {
        g.scale(S::lit(max_norm / n));
    }
}

/// Runs `cfg.iterations` steps, drawing batches from `make_batch`.
///
/// One rng seeded from `cfg.seed` feeds both batch construction and noise
/// draws, so a rerun with the same inputs reproduces the loss curve.
pub fn train<S: Scalar>(
    mut target: Trainable<'_, S>,
    cfg: &OptimConfig,
    sched: &NoiseSchedule,
    mut make_batch: impl FnMut(&mut ChaCha8Rng, usize) -> Result<Batch<S>>,
    mut on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = match &target {
        Trainable::Base(d) => AdamW::new(d.params(), cfg.learning_rate),
        Trainable::Adapter { adapter, .. } => AdamW::new(adapter.params(), cfg.learning_rate),
        Trainable::Control { branch, .. } => AdamW::new(branch.params(), cfg.learning_rate),
    };
    let start = Instant::now();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = make_batch(&mut rng, cfg.batch_size)?;
        let lr = cfg.lr_at(it);
        let loss = match &mut target {
            Trainable::Base(den) => {
                let mut g = loss_and_grads(&ModelRef::base(den), &batch, sched, &mut rng)?;
                check(it, g.loss)?;
                clip(&mut g.weights, cfg.grad_clip);
                let params = den.params_mut();
                opt.step_with_lr(params, &g.weights, lr);
                g.loss
            }
            Trainable::Adapter { base, adapter } => {
                let merged = apply_adapter(base.params(), adapter)?;
                let g = loss_and_grads(&ModelRef::with_weights(base, &merged), &batch, sched, &mut rng)?;
                check(it, g.loss)?;
                let mut ag = adapter.grads_from_merged(&g.weights);
                clip(&mut ag, cfg.grad_clip);
                opt.step_with_lr(adapter.params_mut(), &ag, lr);
                g.loss
            }
            Trainable::Control { base, weights, branch } => {
                let model = ModelRef::with_weights(base, weights).with_control(branch);
                let g = loss_and_grads(&model, &batch, sched, &mut rng)?;
                check(it, g.loss)?;
                let mut cg = g.control.expect("control gradients present when a branch is given");
                clip(&mut cg, cfg.grad_clip);
                opt.step_with_lr(branch.params_mut(), &cg, lr);
                g.loss
            }
        };
        let loss = loss.as_f64();
        losses.push(loss);
        on_log(&LogRecord { iteration: it, loss, wall_clock_s: start.elapsed().as_secs_f64() })?;
    }
    Ok(losses)
}

fn check<S: Scalar>(iteration: usize, loss: S) -> Result<()> {
    let l = loss.as_f64();
    if l.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { iteration, loss: l })
    }
}

/// Appends log records to a JSON-lines file.
pub struct JsonlLog {
    path: std::path::PathBuf,
    out: std::io::BufWriter<std::fs::File>,
}

impl JsonlLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            crate::fsutil::create_dir_all(dir)?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: std::io::BufWriter::new(f) })
    }

    pub fn write(&mut self, rec: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
