//! Patch sampling, the L2 objective, the epoch loop and PSNR evaluation.

mod adam;
mod eval;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, NetworkConfig};
use crate::pyramid::{PatchRect, PATCH_SIZE};
use crate::tensor::{Shape, Tensor};

pub use adam::{adam_step, AdamConfig};
pub use eval::{evaluate, psnr, psnr_from_mse, EvalReport, ImageScore, PSNR_CAP};

/// One aligned input/target pair, each `(1, h, w, 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl Example {
    pub fn new(id: impl Into<String>, input: Tensor<f32>, target: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        let s = input.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::InvalidInput(format!(
                "{id}: expected one RGB image, got {s}"
            )));
        }
        target
            .expect_shape(s, "target")
            .map_err(|e| Error::InvalidInput(format!("{id}: input and target differ: {e}")))?;
        Ok(Example { id, input, target })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_images: usize,
    pub patches_per_image: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_images: 4,
            patches_per_image: 16,
            patch_size: PATCH_SIZE,
            epochs: 100,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn examples_per_step(&self) -> usize {
        self.batch_images * self.patches_per_image
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_images == 0 || self.patches_per_image == 0 || self.patch_size == 0 {
            return Err(Error::config(
                "batch, patch count and patch size must all be >= 1",
            ));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} is not a finite non-negative number",
                self.adam.lr
            )));
        }
        Ok(())
    }
}

/// Fresh parameters for `network`, seeded from `seed`. Training draws from a
/// separate stream of the same seed.
pub fn init_model(network: NetworkConfig, seed: u64) -> Result<ModelParams<f32>> {
    ModelParams::init(network, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `count` patch origins drawn uniformly over every valid position of an
/// `image`-sized frame; patches may overlap.
pub fn sample_patches<R: Rng + ?Sized>(
    rng: &mut R,
    image: Shape,
    count: usize,
    size: usize,
) -> Result<Vec<PatchRect>> {
    if image.h < size || image.w < size {
        return Err(Error::config(format!(
            "image {}x{} is smaller than the {size}x{size} patch",
            image.h, image.w
        )));
    }
    Ok((0..count)
        .map(|_| {
            let item = rng.random_range(0..image.n);
            let y = rng.random_range(0..=image.h - size);
            let x = rng.random_range(0..=image.w - size);
            PatchRect::with_size(item, y, x, size)
        })
        .collect())
}

/// Crops `rects` out of `image` into a `(rects, size, size, c)` batch.
pub fn gather_patches(image: &Tensor<f32>, rects: &[PatchRect]) -> Result<Tensor<f32>> {
    let size = rects.first().map_or(0, |r| r.size);
    let c = image.shape().c;
    let mut out = Tensor::zeros(Shape::new(rects.len(), size, size, c)?);
    let row = size * c;
    for (i, r) in rects.iter().enumerate() {
        r.check(image.shape())?;
        if r.size != size {
            return Err(Error::config("all patches in a set must share one size"));
        }
        for dy in 0..size {
            let src = image.shape().offset(r.item, r.y + dy, r.x, 0);
            let dst = out.shape().offset(i, dy, 0, 0);
            out.data_mut()[dst..dst + row].copy_from_slice(&image.data()[src..src + row]);
        }
    }
    Ok(out)
}

/// Squared error summed over pixels and channels, averaged over the batch
/// dimension, and its gradient `2 (pred - target) / n`.
pub fn l2_loss<T: crate::tensor::Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    target.expect_shape(pred.shape(), "l2_loss target")?;
    let n = pred.shape().n as f64;
    let scale = T::from_f64(2.0 / n);
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0f64;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok((sum / n, grad))
}

/// Deterministic split of `n` items: the first 80% (at least one) train, the
/// rest validate.
pub fn split_train_val(n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let train = if n == 0 { 0 } else { ((n * 4).div_ceil(5)).max(1) };
    (0..train, train..n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective over the epoch's steps.
    pub train_loss: f64,
    /// Full-image mean squared error on the validation set, scaled to the
    /// per-patch units of `train_loss`. `None` without validation images.
    pub val_loss: Option<f64>,
}

impl EpochStats {
    /// The value best-checkpoint selection minimizes.
    pub fn selection_loss(&self) -> f64 {
        self.val_loss.unwrap_or(self.train_loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub best: ModelParams<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// One optimizer step over `batch`. Returns the batch objective.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut ModelParams<f32>,
    batch: &[&Example],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::config("empty training batch"));
    }
    let mut total = params.zero_gradients();
    let mut loss = 0.0;
    let weight = 1.0 / batch.len() as f32;
    for ex in batch {
        let rects = sample_patches(rng, ex.input.shape(), cfg.patches_per_image, cfg.patch_size)?;
        let (pred, trace) = params.forward_patchwise(&ex.input, &rects)?;
        let target = gather_patches(&ex.target, &rects)?;
        let (l, mut grad) = l2_loss(&pred, &target)?;
        grad.data_mut().iter_mut().for_each(|g| *g *= weight);
        let g = params.backward(&trace, &grad)?;
        accumulate(&mut total, &g);
        loss += l;
    }
    loss /= batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "training loss is {loss} at step {}",
            params.adam.step + 1
        )));
    }
    adam_step(params, &total, &cfg.adam)?;
    Ok(loss)
}

fn accumulate(total: &mut crate::model::ParamGradients<f32>, g: &crate::model::ParamGradients<f32>) {
    let pairs = total
        .hist_centers
        .iter_mut()
        .zip(&g.hist_centers)
        .chain(total.hist_widths.iter_mut().zip(&g.hist_widths));
    for (a, b) in pairs {
        *a += b;
    }
    for (a, b) in total.convs.iter_mut().zip(&g.convs) {
        for (x, y) in a
            .kernel
            .iter_mut()
            .zip(&b.kernel)
            .chain(a.bias.iter_mut().zip(&b.bias))
        {
            *x += y;
        }
    }
}

/// Validation objective; see [`EpochStats::val_loss`].
pub fn validation_loss(
    params: &ModelParams<f32>,
    examples: &[Example],
    patch_size: usize,
) -> Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for ex in examples {
        let pred = params.forward_full(&ex.input)?;
        let (sse, _) = l2_loss(&pred, &ex.target)?;
        total += sse / ex.target.data().len() as f64;
    }
    Ok(Some(
        total / examples.len() as f64 * (patch_size * patch_size * 3) as f64,
    ))
}

/// Runs the epoch loop. `observer` sees every epoch's statistics together
/// with the current parameters and whether they are the best so far; an
/// error from it stops training.
pub fn train(
    initial: ModelParams<f32>,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &ModelParams<f32>, bool) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut params = initial;
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_images) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            sum += train_step(&mut params, &batch, cfg, &mut rng).map_err(|e| annotate(e, epoch))?;
            steps += 1;
        }
        let stats = EpochStats {
            epoch,
            train_loss: sum / steps as f64,
            val_loss: validation_loss(&params, val_set, cfg.patch_size)?,
        };
        let is_best = stats.selection_loss() < best_loss;
        if is_best {
            best_loss = stats.selection_loss();
            best = params.clone();
            best_epoch = epoch;
        }
        log::debug!(
            "epoch {epoch}: train {:.6} val {:?}{}",
            stats.train_loss,
            stats.val_loss,
            if is_best { " (best)" } else { "" }
        );
        observer(&stats, &params, is_best)?;
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        best,
        best_epoch,
        history,
    })
}

fn annotate(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("{m} (epoch {epoch})")),
        other => other,
    }
}

/// Writes `epoch,train_loss,val_loss` rows; missing validation is empty.
pub fn write_loss_csv<W: std::io::Write>(history: &[EpochStats], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(format!("writing loss curve: {e}"));
    wr.write_record(["epoch", "train_loss", "val_loss"])
        .map_err(err)?;
    for s in history {
        let val = s.val_loss.map(|v| format!("{v:?}")).unwrap_or_default();
        wr.write_record([s.epoch.to_string(), format!("{:?}", s.train_loss), val])
            .map_err(err)?;
    }
    wr.flush()
        .map_err(|e| Error::Format(format!("writing loss curve: {e}")))?;
    Ok(())
}
