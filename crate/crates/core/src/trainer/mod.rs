//! MSE + Adam training with pooled or per-pair strategies, checkpointing,
//! evaluation and the ablation / patch-size experiments.

mod adam;
mod config;
mod experiments;

use std::sync::mpsc::sync_channel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, BETA1, BETA2, EPS};
pub use config::{Strategy, TrainConfig};
pub use experiments::{
    default_ablation_rows, evaluate, format_ablation_table, run_ablation, run_patch_sweep, AblationResult,
    AblationRow, PatchSweep, SweepPoint,
};

use crate::error::{Error, Result};
use crate::imaging::{split_3x4, ImagePair, PadMode};
use crate::model::{forward_on, Checkpoint, Mode, Model, ModelConfig, ParamStore};
use crate::tensor::{Element, Tape, Tensor};

/// Mean squared error of two equally shaped tensors.
pub fn mse_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let (p, t) = (tape.constant(pred.clone()), tape.constant(target.clone()));
    let l = tape.mse(p, t)?;
    Ok(tape.value(l).data()[0].as_f64())
}

/// Model, optimizer state and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            model: Model::new(config.model.clone(), config.seed)?,
            adam: Adam::new(config.lr),
            step: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.model.write_to(&mut c);
        for (k, v) in &self.adam.m {
            c.insert_tensor(format!("adam.m/{k}"), v);
        }
        for (k, v) in &self.adam.v {
            c.insert_tensor(format!("adam.v/{k}"), v);
        }
        c.insert_u64("meta/step", vec![self.step]);
        c.insert_u64("meta/adam_t", vec![self.adam.t]);
        c.insert_u64("meta/config_hash", vec![self.model.config().hash()]);
        c.insert_tensor("meta/lr", &Tensor::<f64>::from_f64(&[1], &[self.adam.lr]).expect("one value"));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let model = Model::<f32>::read_from(c)?;
        let hash = c.u64s("meta/config_hash")?;
        if hash != [model.config().hash()] {
            return Err(Error::Format {
                format: "checkpoint".into(),
                reason: "config hash does not match the stored model config".into(),
            });
        }
        let one = |name: &str| -> Result<u64> {
            c.u64s(name)?.first().copied().ok_or_else(|| Error::Format {
                format: "checkpoint".into(),
                reason: format!("{name} is empty"),
            })
        };
        let mut adam = Adam::new(c.tensor::<f64>("meta/lr")?.data()[0]);
        adam.t = one("meta/adam_t")?;
        adam.m = c.tensors_with_prefix("adam.m/")?;
        adam.v = c.tensors_with_prefix("adam.v/")?;
        Ok(Self {
            model,
            adam,
            step: one("meta/step")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub loss: f64,
    /// Mean held-out ΔPSNR, on validation steps.
    pub val_delta_psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Last good state (before a divergent step, if any).
    pub state: TrainState,
    pub curve: Vec<CurvePoint>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss,val_delta_psnr\n");
    for p in curve {
        let v = p.val_delta_psnr.map_or(String::new(), |v| format!("{v:.6}"));
        out.push_str(&format!("{},{:.9},{v}\n", p.step, p.loss));
    }
    out
}

struct Batch {
    input: Tensor<f32>,
    target: Tensor<f32>,
}

/// Random crops for `step`; depends only on `(seed, step)`.
fn sample_batch(pairs: &[ImagePair], cfg: &TrainConfig, step: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step + 1);
    let c = cfg.crop;
    let mut input = Vec::with_capacity(cfg.batch_size * c * c);
    let mut target = Vec::with_capacity(cfg.batch_size * c * c);
    for _ in 0..cfg.batch_size {
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let (h, w) = pair.dims();
        let top = rng.random_range(0..=h - c);
        let left = rng.random_range(0..=w - c);
        for y in top..top + c {
            let row = y * w + left..y * w + left + c;
            input.extend(pair.lr_up.data()[row.clone()].iter().map(|&v| v as f32));
            target.extend(pair.hr.data()[row].iter().map(|&v| v as f32));
        }
    }
    let shape = [cfg.batch_size, c, c, 1];
    Ok(Batch {
        input: Tensor::new(&shape, input)?,
        target: Tensor::new(&shape, target)?,
    })
}

/// One forward/backward pass; returns the loss and per-parameter gradients.
fn loss_and_grads(model: &Model<f32>, batch: &Batch) -> Result<(f64, ParamStore<f32>)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape, true);
    let x = tape.constant(batch.input.clone());
    let t = tape.constant(batch.target.clone());
    let y = forward_on(model.config(), &mut tape, &vars, x, Mode::Train)?;
    let loss = tape.mse(y, t)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let store = vars
        .iter()
        .filter_map(|(k, &v)| grads.take(v).map(|g| (k.clone(), g)))
        .collect();
    Ok((value, store))
}

/// Mean ΔPSNR of predict-mode outputs on `pairs`.
pub fn validation_delta_psnr(model: &Model<f32>, pairs: &[ImagePair], patch: usize) -> Result<f64> {
    let report = evaluate(model, pairs, patch, PadMode::Reflect)?;
    let n = report.records.len().max(1) as f64;
    Ok(report.records.iter().map(|r| r.delta_psnr).sum::<f64>() / n)
}

fn check_pairs(train: &[ImagePair], crop: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    if let Some(p) = train.iter().find(|p| p.dims().0 < crop || p.dims().1 < crop) {
        let (h, w) = p.dims();
        return Err(Error::config(format!(
            "training image {} is {h}×{w}, smaller than the {crop}×{crop} crop",
            p.id
        )));
    }
    Ok(())
}

/// Trains from `resume` (or a fresh init) until `cfg.steps` total steps.
///
/// Batches are produced on a helper thread through a bounded queue, in
/// step order. `on_point` sees every curve point as it is recorded.
pub fn train(
    train: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_point: impl FnMut(&CurvePoint),
) -> Result<TrainRun> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    check_pairs(train, cfg.crop)?;
    let mut state = match resume {
        Some(s) => {
            if s.model.config() != &cfg.model {
                return Err(Error::config(format!(
                    "checkpoint model config differs from the requested one:\n{}vs\n{}",
                    s.model.config().to_kv().render(),
                    cfg.model.to_kv().render()
                )));
            }
            s
        }
        None => TrainState::new(&cfg)?,
    };
    state.adam.lr = cfg.lr;
    let val_set = &val[..cfg.val_images.min(val.len())];
    let start = state.step;
    let mut curve = Vec::new();
    let mut diverged = None;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<Batch>>(cfg.prefetch);
        let producer_cfg = &cfg;
        scope.spawn(move || {
            for step in start..producer_cfg.steps {
                if tx.send(sample_batch(train, producer_cfg, step)).is_err() {
                    break;
                }
            }
        });
        for step in start..cfg.steps {
            let batch = rx
                .recv()
                .map_err(|_| Error::usage("batch producer stopped early"))??;
            let (loss, grads) = match loss_and_grads(&state.model, &batch) {
                Ok(r) => r,
                Err(Error::Numeric(msg)) => {
                    diverged = Some(format!("step {}: {msg}", step + 1));
                    break;
                }
                Err(e) => return Err(e),
            };
            let mut next = state.model.params().clone();
            let mut adam = state.adam.clone();
            if let Err(e) = adam.step(&mut next, &grads) {
                match e {
                    Error::Numeric(msg) => {
                        diverged = Some(format!("step {}: {msg}", step + 1));
                        break;
                    }
                    other => return Err(other),
                }
            }
            *state.model.params_mut() = next;
            state.adam = adam;
            state.step = step + 1;

            let validate_now = !val_set.is_empty()
                && ((cfg.val_every > 0 && state.step % cfg.val_every == 0) || state.step == cfg.steps);
            let point = CurvePoint {
                step: state.step,
                loss,
                val_delta_psnr: if validate_now {
                    Some(validation_delta_psnr(&state.model, val_set, cfg.crop)?)
                } else {
                    None
                },
            };
            on_point(&point);
            curve.push(point);
        }
        Ok(())
    })?;

    Ok(TrainRun {
        state,
        curve,
        diverged,
    })
}

/// Self-training: one model per source pair, each trained on the pair's
/// 3×3 left block and validated on its right column.
pub fn train_per_pair(
    pairs: &[ImagePair],
    cfg: &TrainConfig,
    mut on_point: impl FnMut(&str, &CurvePoint),
) -> Result<Vec<(String, TrainRun, Vec<ImagePair>)>> {
    pairs
        .iter()
        .map(|pair| {
            let split = split_3x4(pair)?;
            let run = train(&split.train, &split.test, cfg, None, |p| on_point(&pair.id, p))?;
            Ok((pair.id.clone(), run, split.test))
        })
        .collect()
}

/// Fresh model config helper for experiments.
pub fn with_variant(cfg: &TrainConfig, model: ModelConfig) -> TrainConfig {
    TrainConfig {
        model,
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests;
