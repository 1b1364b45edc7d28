use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::losses::{LossValues, LossWeights};
use super::step::forward_backward;
use crate::error::{Error, Result};
use crate::io::{save_checkpoint, save_weights, Checkpoint};
use crate::models::{ModelWeights, SIZE_MULTIPLE};
use crate::tensor::{adam_step, clip_global_norm, BnMode, OptimizerState, Param};

pub const LOG_HEADER: [&str; 6] = ["step", "loss_total", "loss_r", "loss_a", "loss_d", "seconds"];
pub const ADAM_EPS: f32 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub lambda_a: f32,
    pub lambda_d: f32,
    pub batch_size: usize,
    pub crop_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_interval: usize,
    pub dataset_path: PathBuf,
    /// Global gradient norm limit; 0 disables clipping.
    pub grad_clip: f32,
    /// Receives the CSV log, checkpoints and final weights when set.
    pub out_dir: Option<PathBuf>,
    /// Runs every kernel on one thread.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 7,
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            lambda_a: 1.0,
            lambda_d: 0.5,
            batch_size: 8,
            crop_size: 64,
            steps: 2000,
            seed: 0,
            checkpoint_interval: 500,
            dataset_path: PathBuf::from("data"),
            grad_clip: 5.0,
            out_dir: None,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k == 0 || self.k > crate::palette::MAX_PALETTE_SIZE {
            return bad(format!("k = {} is unsupported", self.k));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0,1)".into());
        }
        if !(self.lambda_a >= 0.0 && self.lambda_d >= 0.0) {
            return bad("lambda_a and lambda_d must be nonnegative".into());
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(SIZE_MULTIPLE) {
            return bad(format!("crop_size {} is not a positive multiple of {SIZE_MULTIPLE}", self.crop_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return bad("grad_clip must be nonnegative".into());
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_a: self.lambda_a,
            lambda_d: self.lambda_d,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_r: f64,
    pub loss_a: f64,
    pub loss_d: f64,
    pub seconds: f64,
}

impl LogRow {
    fn new(step: usize, l: &LossValues, seconds: f64) -> Self {
        LogRow {
            step,
            loss_total: l.total,
            loss_r: l.reconstruction,
            loss_a: l.alpha,
            loss_d: l.distance,
            seconds,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final weights, or the last finite ones if training diverged.
    pub weights: ModelWeights,
    pub log: Vec<LogRow>,
    /// Step at which a non-finite loss or gradient stopped training.
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    /// Mean total loss over the first and last `fraction` of logged steps.
    pub fn loss_trend(&self, fraction: f64) -> (f64, f64) {
        let n = self.log.len();
        let m = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let mean = |rows: &[LogRow]| rows.iter().map(|r| r.loss_total).sum::<f64>() / rows.len().max(1) as f64;
        (mean(&self.log[..m.min(n)]), mean(&self.log[n.saturating_sub(m)..]))
    }
}

pub fn write_log(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::io(path, e.into()))
}

/// Loads the dataset named by the config and trains on it.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let data = Dataset::from_dir(&config.dataset_path, config.crop_size)?;
    info!("training on {} images from {}", data.len(), config.dataset_path.display());
    train_on(config, &data, |_| {})
}

/// Joint Adam training of both networks. `observe` sees every log row as
/// it is produced.
pub fn train_on(config: &TrainConfig, data: &Dataset, mut observe: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    config.validate()?;
    if data.crop_size() != config.crop_size {
        return Err(Error::InvalidArgument(format!(
            "dataset prepared for crop {} but config asks for {}",
            data.crop_size(),
            config.crop_size
        )));
    }
    let previous = crate::tensor::parallel_enabled();
    if config.deterministic {
        crate::tensor::set_parallel(false);
    }
    let result = run(config, data, &mut observe);
    crate::tensor::set_parallel(previous);
    result
}

fn run(config: &TrainConfig, data: &Dataset, observe: &mut dyn FnMut(&LogRow)) -> Result<TrainOutcome> {
    let mut weights = ModelWeights::new(config.k, config.seed)?;
    let shapes: Vec<Vec<usize>> = weights.parameters().iter().map(|t| t.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut opt = OptimizerState::new(&shape_refs, config.lr, config.beta1, config.beta2, ADAM_EPS);
    let names = weights.parameter_names();
    let mut stream = data.stream(config.k, config.seed ^ 0x5eed);
    let extra = serde_json::to_value(config)?;
    let out_dir = config.out_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let checkpoint = |w: &ModelWeights, o: &OptimizerState, step: usize, name: &str| -> Result<()> {
        if let Some(dir) = out_dir {
            let ck = Checkpoint {
                weights: w.clone(),
                optimizer: o.clone(),
                step,
                extra: extra.clone(),
            };
            save_checkpoint(&ck, dir.join(name))?;
        }
        Ok(())
    };

    let start = Instant::now();
    let mut log = Vec::with_capacity(config.steps);
    let mut diverged_at = None;
    for step in 0..config.steps {
        let batch = stream.next_batch(config.batch_size)?;
        let mut out = forward_backward(&weights, &batch, config.loss_weights(), BnMode::Train)?;
        let finite = out.losses.is_finite() && out.grads.iter().all(|g| g.is_finite());
        if !finite {
            warn!("step {step}: non-finite loss or gradient, stopping");
            diverged_at = Some(step);
            checkpoint(&weights, &opt, step, "last_good.sseg")?;
            break;
        }
        let row = LogRow::new(step, &out.losses, start.elapsed().as_secs_f64());
        observe(&row);
        log.push(row);
        if config.grad_clip > 0.0 {
            clip_global_norm(&mut out.grads, config.grad_clip);
        }
        let before = weights.clone();
        let (pa, pr) = (&mut weights.alpha.net, &mut weights.residue.net);
        let mut params: Vec<Param<'_>> = pa
            .parameters_mut()
            .into_iter()
            .chain(pr.parameters_mut())
            .zip(&names)
            .zip(&out.grads)
            .map(|((value, name), grad)| Param { name, value, grad })
            .collect();
        adam_step(&mut params, &mut opt)?;
        weights.alpha.net.update_running_stats(&out.alpha_cache);
        weights.residue.net.update_running_stats(&out.residue_cache);
        if weights.parameters().iter().any(|t| !t.is_finite()) {
            warn!("step {step}: parameters became non-finite, stopping");
            weights = before;
            diverged_at = Some(step);
            checkpoint(&weights, &opt, step, "last_good.sseg")?;
            break;
        }
        let done = step + 1;
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
            checkpoint(&weights, &opt, done, &format!("checkpoint_{done:06}.sseg"))?;
        }
    }
    if let Some(dir) = out_dir {
        write_log(&log, dir.join("train_log.csv"))?;
        save_weights(&weights, dir.join("weights.sseg"))?;
    }
    Ok(TrainOutcome {
        weights,
        log,
        diverged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::synthetic::{scenes, SceneParams};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            k: 2,
            lr: 2e-3,
            batch_size: 2,
            crop_size: 16,
            steps: 6,
            seed: 3,
            checkpoint_interval: 3,
            deterministic: true,
            ..Default::default()
        }
    }

    fn tiny_data() -> Dataset {
        let p = SceneParams {
            width: 24,
            height: 16,
            ..Default::default()
        };
        Dataset::from_images(scenes(&p, 4, 0), 16).unwrap()
    }

    #[test]
    fn config_parses_toml_and_json() {
        let c = TrainConfig::parse("k = 4\nsteps = 10\ndataset_path = \"x\"\n").unwrap();
        assert_eq!((c.k, c.steps, c.lr, c.lambda_a, c.lambda_d), (4, 10, 2e-4, 1.0, 0.5));
        let j = TrainConfig::parse(r#"{"k": 4, "steps": 10, "dataset_path": "x"}"#).unwrap();
        assert_eq!(c, j);
        assert!(TrainConfig::parse("crop_size = 12").is_err());
        assert!(TrainConfig::parse("lambda_d = -1").is_err());
        assert!(TrainConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn same_seed_same_curve() {
        let data = tiny_data();
        let a = train_on(&tiny_config(), &data, |_| {}).unwrap();
        let b = train_on(&tiny_config(), &data, |_| {}).unwrap();
        let strip = |o: &TrainOutcome| o.log.iter().map(|r| r.loss_total).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.log.len(), 6);
    }

    #[test]
    fn outputs_land_in_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            out_dir: Some(dir.path().to_path_buf()),
            ..tiny_config()
        };
        let out = train_on(&cfg, &tiny_data(), |_| {}).unwrap();
        let log = read_log(dir.path().join("train_log.csv")).unwrap();
        assert_eq!(log, out.log);
        let header = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert_eq!(header.lines().next().unwrap(), LOG_HEADER.join(","));
        let ck = crate::io::load_checkpoint(dir.path().join("checkpoint_000006.sseg")).unwrap();
        assert_eq!(ck.step, 6);
        assert_eq!(ck.weights, out.weights);
        assert!(dir.path().join("checkpoint_000003.sseg").exists());
        assert_eq!(crate::io::load_weights(dir.path().join("weights.sseg")).unwrap(), out.weights);
    }

    #[test]
    fn divergence_keeps_the_last_finite_weights() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            lr: 1e30,
            grad_clip: 0.0,
            steps: 20,
            out_dir: Some(dir.path().to_path_buf()),
            ..tiny_config()
        };
        let out = train_on(&cfg, &tiny_data(), |_| {}).unwrap();
        let step = out.diverged_at.expect("lr 1e30 must diverge");
        assert!(out.weights.parameters().iter().all(|t| t.is_finite()));
        let ck = crate::io::load_checkpoint(dir.path().join("last_good.sseg")).unwrap();
        assert_eq!(ck.weights, out.weights);
        assert_eq!(ck.step, step);
    }
}
