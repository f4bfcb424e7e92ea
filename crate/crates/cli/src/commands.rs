use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use scenepipe::checkpoint;
use scenepipe::data::{
    input_depth, load_manifest, load_pairs, output_depth, read_rgb_expect, swap_global_histogram,
    synth_generate, to_example, write_gray8, write_rgb, SwapChannels, SwapOptions, SynthConfig,
};
use scenepipe::model::NetworkConfig;
use scenepipe::selfcheck::run_gradcheck_suite;
use scenepipe::trainer::{self, evaluate, split_train_val, write_loss_csv, AdamConfig, Example, TrainConfig};
use scenepipe::Error;

use crate::args::{EvalArgs, GradcheckArgs, InferArgs, SwapArgs, SwapChannelsArg, SynthArgs, TrainArgs};

/// `count` verification checks failed.
#[derive(Debug)]
pub struct CheckFailed(pub usize);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} gradient check(s) failed", self.0)
    }
}

impl std::error::Error for CheckFailed {}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        count: a.count,
        size: a.size,
        seed: a.seed,
        contrast_strength: a.contrast_strength,
        saturation_strength: a.saturation_strength,
        shadow_lift_strength: a.shadow_lift_strength,
        lift_radius: a.lift_radius,
        ..SynthConfig::default()
    };
    if a.no_enhancement {
        cfg = cfg.zero_strengths();
    }
    let manifest = synth_generate(&cfg, &a.out)?;
    info!("wrote {} pairs, manifest {}", cfg.count, manifest.display());
    Ok(())
}

fn size_opt(size: usize) -> Option<usize> {
    (size > 0).then_some(size)
}

fn load_examples(manifest: &Path, size: usize, net: &NetworkConfig) -> Result<Vec<Example>> {
    let entries = load_manifest(manifest)?;
    let pairs = load_pairs(&entries, size_opt(size))?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no usable images", manifest.display())).into());
    }
    Ok(pairs
        .iter()
        .map(|p| to_example(p, net.direction))
        .collect::<scenepipe::Result<_>>()?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut net = NetworkConfig::new(a.direction.into(), a.arch.into()).with_hidden(a.hidden);
    net.context_frozen = a.freeze_context;
    net.validate()?;
    let cfg = TrainConfig {
        batch_images: a.batch,
        patches_per_image: a.patches,
        patch_size: a.patch_size,
        epochs: a.epochs,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
    };
    cfg.validate()?;
    info!(
        "direction={} arch={} hidden={} lr={} betas=({}, {}) eps={} batch={}x{} patch={} epochs={} seed={} frozen_context={}",
        net.direction, net.arch, net.hidden, cfg.adam.lr, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.epsilon,
        cfg.batch_images, cfg.patches_per_image, cfg.patch_size, cfg.epochs, cfg.seed, net.context_frozen
    );
    let examples = load_examples(&a.data, a.size, &net)?;
    let (tr, va) = split_train_val(examples.len());
    info!("{} training and {} validation images", tr.len(), va.len());
    let metadata = serde_json::json!({
        "train": cfg,
        "network": net,
        "init": "kaiming-uniform fan-in, zero bias",
        "manifest": a.data,
    })
    .to_string();

    let best_path = a.out.clone();
    let outcome = trainer::train(
        trainer::init_model(net, a.seed)?,
        &examples[tr],
        &examples[va],
        &cfg,
        |stats, params, is_best| {
            info!(
                "epoch {:>4} train {:.6} val {}{}",
                stats.epoch,
                stats.train_loss,
                stats.val_loss.map_or("-".into(), |v| format!("{v:.6}")),
                if is_best { "  *" } else { "" }
            );
            if is_best {
                checkpoint::save(&best_path, params, &metadata)?;
            }
            Ok(())
        },
    )?;
    let final_path = with_suffix(&a.out, ".final");
    checkpoint::save(&final_path, &outcome.params, &metadata)?;
    let csv_path = a.loss_csv.unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    let file = fs::File::create(&csv_path).map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    write_loss_csv(&outcome.history, file)?;
    info!(
        "best epoch {} -> {}; final -> {}; loss curve -> {}",
        outcome.best_epoch,
        a.out.display(),
        final_path.display(),
        csv_path.display()
    );
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let ck = checkpoint::load(&a.ckpt)?;
    let dir = ck.params.config.direction;
    let image = read_rgb_expect(&a.input, input_depth(dir))
        .with_context(|| format!("input does not match a {dir} checkpoint"))?;
    let pred = ck.params.forward_full(&image)?;
    write_rgb(&a.out, &pred, output_depth(dir))?;
    info!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ck = checkpoint::load(&a.ckpt)?;
    let examples = load_examples(&a.data, a.size, &ck.params.config)?;
    let report = evaluate(&ck.params, &examples)?;
    println!("{report}");
    if let Some(path) = &a.csv {
        let file = fs::File::create(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        report.write_csv(file)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let reports = run_gradcheck_suite(a.seed, a.corrupt.as_deref());
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CheckFailed(failed).into());
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}

pub const MANIPULATED: &str = "manipulated.png";
pub const BASELINE: &str = "baseline.png";
pub const HEATMAP: &str = "diff_heatmap.png";
pub const HEATMAP_NOTE: &str = "diff_heatmap.txt";

pub fn analyze_swap(a: SwapArgs) -> Result<()> {
    let ck = checkpoint::load(&a.ckpt)?;
    let dir = ck.params.config.direction;
    let source = read_rgb_expect(&a.source, input_depth(dir))?;
    let target = read_rgb_expect(&a.target, input_depth(dir))?;
    let opts = SwapOptions {
        channels: match a.channels {
            SwapChannelsArg::Luminance => SwapChannels::Luminance,
            SwapChannelsArg::All => SwapChannels::All,
        },
        all_scales: a.all_scales,
    };
    let r = swap_global_histogram(&ck.params, &source, &target, opts)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    write_rgb(&a.out.join(MANIPULATED), &r.manipulated, output_depth(dir))?;
    write_rgb(&a.out.join(BASELINE), &r.baseline, output_depth(dir))?;
    let max = r.max_difference();
    let scaled: Vec<f32> = r
        .difference
        .data()
        .iter()
        .map(|&d| if max > 0.0 { d / max } else { 0.0 })
        .collect();
    let s = r.difference.shape();
    write_gray8(&a.out.join(HEATMAP), &scaled, s.h, s.w)?;
    let mean = r.difference.data().iter().map(|&d| d as f64).sum::<f64>() / s.pixels() as f64;
    let note = format!(
        "source: {}\ntarget: {}\nchannels: {:?}\nall_scales: {}\nheatmap: mean absolute RGB difference, scaled so 255 = max\nmax_difference: {max:?}\nmean_difference: {mean:?}\n",
        a.source.display(),
        a.target.display(),
        opts.channels,
        opts.all_scales
    );
    let note_path = a.out.join(HEATMAP_NOTE);
    fs::write(&note_path, note).map_err(|e| Error::Io {
        path: note_path,
        source: e,
    })?;
    info!("max difference {max:.6}; outputs in {}", a.out.display());
    Ok(())
}
