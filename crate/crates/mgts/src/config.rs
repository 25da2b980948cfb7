//! Flat key=value run configuration.
//!
//! One file drives a whole run: dataset generation, model architecture,
//! detector noise, loss state, training and evaluation. The schema is
//! strict — unknown or duplicate keys are errors, so a typo can never fall
//! back to a silent default. Serialization is deterministic and the parse of
//! a serialized config reproduces it exactly.

use crate::detectsim::DetectorNoiseCfg;
use crate::error::{Error, Result};
use crate::evalkit::EvalCfg;
use crate::reidnet::{MaskMode, ModelCfg, TrainCfg, Variant};
use crate::synthdata::DatasetCfg;
use std::fmt::Write as _;
use std::path::Path;

/// Everything a run needs, with documented defaults for each key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetCfg,
    pub model: ModelCfg,
    pub detector: DetectorNoiseCfg,
    pub oim_tau: f64,
    pub oim_queue_capacity: usize,
    pub oim_eta: f64,
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_lr: f64,
    pub eval_gamma: f64,
    pub mask_mode: MaskMode,
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub cmc_ks: Vec<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainCfg::default();
        let e = EvalCfg::default();
        RunConfig {
            dataset: DatasetCfg::default(),
            model: ModelCfg::default(),
            detector: DetectorNoiseCfg::default(),
            oim_tau: t.tau,
            oim_queue_capacity: t.queue_capacity,
            oim_eta: t.eta,
            train_epochs: t.epochs,
            train_batch_size: t.batch_size,
            train_lr: t.lr,
            eval_gamma: e.gamma,
            mask_mode: MaskMode::Instance,
            score_thresh: e.score_thresh,
            nms_thresh: e.nms_thresh,
            cmc_ks: e.cmc_ks,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn train_cfg(&self) -> TrainCfg {
        TrainCfg {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            lr: self.train_lr,
            gamma: self.eval_gamma,
            mask_mode: self.mask_mode,
            queue_capacity: self.oim_queue_capacity,
            tau: self.oim_tau,
            eta: self.oim_eta,
            seed: self.seed,
        }
    }

    pub fn eval_cfg(&self) -> EvalCfg {
        EvalCfg {
            gamma: self.eval_gamma,
            mask_mode: self.mask_mode,
            score_thresh: self.score_thresh,
            nms_thresh: self.nms_thresh,
            noise: self.detector.clone(),
            cmc_ks: self.cmc_ks.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train_cfg().validate()?;
        Ok(())
    }
}

fn mask_mode_str(m: MaskMode) -> &'static str {
    match m {
        MaskMode::Instance => "instance",
        MaskMode::BoxMask => "box",
    }
}

fn parse_mask_mode(s: &str) -> Result<MaskMode> {
    match s {
        "instance" => Ok(MaskMode::Instance),
        "box" => Ok(MaskMode::BoxMask),
        other => Err(Error::Config(format!(
            "mask_mode must be 'instance' or 'box', got '{other}'"
        ))),
    }
}

fn join<T: std::fmt::Display>(vs: &[T]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: bad list element '{p}'")))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'")))
}

/// Serialize with one `key = value` line per field, in schema order.
pub fn to_text(c: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str("# mgts run configuration (schema v1)\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("seed", c.seed.to_string());
    kv("dataset.image_w", c.dataset.image_w.to_string());
    kv("dataset.image_h", c.dataset.image_h.to_string());
    kv("dataset.num_identities", c.dataset.num_identities.to_string());
    kv("dataset.num_scenes", c.dataset.num_scenes.to_string());
    kv("dataset.persons_min", c.dataset.persons_min.to_string());
    kv("dataset.persons_max", c.dataset.persons_max.to_string());
    kv("dataset.unlabeled_frac", c.dataset.unlabeled_frac.to_string());
    kv("dataset.occlusion_prob", c.dataset.occlusion_prob.to_string());
    kv("dataset.noise_level", c.dataset.noise_level.to_string());
    kv("dataset.clutter_max", c.dataset.clutter_max.to_string());
    kv("dataset.train_frac", c.dataset.train_frac.to_string());
    kv("dataset.num_probes", c.dataset.num_probes.to_string());
    kv("dataset.gallery_sizes", join(&c.dataset.gallery_sizes));
    kv(
        "dataset.identity_disjoint",
        c.dataset.identity_disjoint.to_string(),
    );
    kv("model.variant", c.model.variant.label().to_string());
    kv("model.channel_plan", join(&c.model.channel_plan));
    kv("model.embed_dim", c.model.embed_dim.to_string());
    kv("model.se_reduction", c.model.se_reduction.to_string());
    kv("model.input_h", c.model.input_h.to_string());
    kv("model.input_w", c.model.input_w.to_string());
    kv("detector.jitter_sigma", c.detector.jitter_sigma.to_string());
    kv("detector.miss_rate", c.detector.miss_rate.to_string());
    kv(
        "detector.false_positive_rate",
        c.detector.false_positive_rate.to_string(),
    );
    kv("detector.tp_score_lo", c.detector.tp_score_lo.to_string());
    kv("detector.tp_score_hi", c.detector.tp_score_hi.to_string());
    kv("detector.fp_score_lo", c.detector.fp_score_lo.to_string());
    kv("detector.fp_score_hi", c.detector.fp_score_hi.to_string());
    kv("oim.tau", c.oim_tau.to_string());
    kv("oim.queue_capacity", c.oim_queue_capacity.to_string());
    kv("oim.eta", c.oim_eta.to_string());
    kv("train.epochs", c.train_epochs.to_string());
    kv("train.batch_size", c.train_batch_size.to_string());
    kv("train.lr", c.train_lr.to_string());
    kv("eval.gamma", c.eval_gamma.to_string());
    kv("eval.mask_mode", mask_mode_str(c.mask_mode).to_string());
    kv("eval.score_thresh", c.score_thresh.to_string());
    kv("eval.nms_thresh", c.nms_thresh.to_string());
    kv("eval.cmc_ks", join(&c.cmc_ks));
    s
}

/// Parse key=value text over defaults. Unknown and duplicate keys fail.
pub fn from_text(text: &str) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    let mut seen: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
            "line {}: expected 'key = value', got '{line}'",
            ln + 1
        )))?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
        apply(&mut c, key, value)?;
    }
    Ok(c)
}

fn apply(c: &mut RunConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "seed" => c.seed = parse_scalar(key, v)?,
        "dataset.image_w" => c.dataset.image_w = parse_scalar(key, v)?,
        "dataset.image_h" => c.dataset.image_h = parse_scalar(key, v)?,
        "dataset.num_identities" => c.dataset.num_identities = parse_scalar(key, v)?,
        "dataset.num_scenes" => c.dataset.num_scenes = parse_scalar(key, v)?,
        "dataset.persons_min" => c.dataset.persons_min = parse_scalar(key, v)?,
        "dataset.persons_max" => c.dataset.persons_max = parse_scalar(key, v)?,
        "dataset.unlabeled_frac" => c.dataset.unlabeled_frac = parse_scalar(key, v)?,
        "dataset.occlusion_prob" => c.dataset.occlusion_prob = parse_scalar(key, v)?,
        "dataset.noise_level" => c.dataset.noise_level = parse_scalar(key, v)?,
        "dataset.clutter_max" => c.dataset.clutter_max = parse_scalar(key, v)?,
        "dataset.train_frac" => c.dataset.train_frac = parse_scalar(key, v)?,
        "dataset.num_probes" => c.dataset.num_probes = parse_scalar(key, v)?,
        "dataset.gallery_sizes" => c.dataset.gallery_sizes = parse_list(key, v)?,
        "dataset.identity_disjoint" => c.dataset.identity_disjoint = parse_scalar(key, v)?,
        "model.variant" => c.model.variant = Variant::parse(v)?,
        "model.channel_plan" => c.model.channel_plan = parse_list(key, v)?,
        "model.embed_dim" => c.model.embed_dim = parse_scalar(key, v)?,
        "model.se_reduction" => c.model.se_reduction = parse_scalar(key, v)?,
        "model.input_h" => c.model.input_h = parse_scalar(key, v)?,
        "model.input_w" => c.model.input_w = parse_scalar(key, v)?,
        "detector.jitter_sigma" => c.detector.jitter_sigma = parse_scalar(key, v)?,
        "detector.miss_rate" => c.detector.miss_rate = parse_scalar(key, v)?,
        "detector.false_positive_rate" => c.detector.false_positive_rate = parse_scalar(key, v)?,
        "detector.tp_score_lo" => c.detector.tp_score_lo = parse_scalar(key, v)?,
        "detector.tp_score_hi" => c.detector.tp_score_hi = parse_scalar(key, v)?,
        "detector.fp_score_lo" => c.detector.fp_score_lo = parse_scalar(key, v)?,
        "detector.fp_score_hi" => c.detector.fp_score_hi = parse_scalar(key, v)?,
        "oim.tau" => c.oim_tau = parse_scalar(key, v)?,
        "oim.queue_capacity" => c.oim_queue_capacity = parse_scalar(key, v)?,
        "oim.eta" => c.oim_eta = parse_scalar(key, v)?,
        "train.epochs" => c.train_epochs = parse_scalar(key, v)?,
        "train.batch_size" => c.train_batch_size = parse_scalar(key, v)?,
        "train.lr" => c.train_lr = parse_scalar(key, v)?,
        "eval.gamma" => c.eval_gamma = parse_scalar(key, v)?,
        "eval.mask_mode" => c.mask_mode = parse_mask_mode(v)?,
        "eval.score_thresh" => c.score_thresh = parse_scalar(key, v)?,
        "eval.nms_thresh" => c.nms_thresh = parse_scalar(key, v)?,
        "eval.cmc_ks" => c.cmc_ks = parse_list(key, v)?,
        other => return Err(Error::Config(format!("unknown key '{other}'"))),
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<RunConfig> {
    from_text(&std::fs::read_to_string(path)?)
}

pub fn save(path: &Path, c: &RunConfig) -> Result<()> {
    std::fs::write(path, to_text(c))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_exactly() {
        let c = RunConfig::default();
        let text = to_text(&c);
        let back = from_text(&text).unwrap();
        assert_eq!(c, back);
        // serialization is stable
        assert_eq!(text, to_text(&back));
    }

    #[test]
    fn non_default_values_roundtrip() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.model.variant = Variant::SingleB;
        c.model.channel_plan = vec![4, 8, 16, 32];
        c.dataset.gallery_sizes = vec![5, 15];
        c.detector.jitter_sigma = 0.1;
        c.oim_tau = 0.05;
        c.train_lr = 0.001;
        c.mask_mode = MaskMode::BoxMask;
        c.cmc_ks = vec![1, 3];
        let back = from_text(&to_text(&c)).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let err = from_text("train.learning_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("train.learning_rate"));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(from_text("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let c = from_text("# a comment\n\nseed = 9\n").unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(from_text("just some words").is_err());
        assert!(from_text("train.lr = not_a_number").is_err());
        assert!(from_text("eval.mask_mode = maybe").is_err());
    }

    #[test]
    fn derived_cfgs_share_seed_and_gamma() {
        let mut c = RunConfig::default();
        c.seed = 7;
        c.eval_gamma = 1.2;
        assert_eq!(c.train_cfg().seed, 7);
        assert_eq!(c.eval_cfg().seed, 7);
        assert_eq!(c.train_cfg().gamma, 1.2);
        assert_eq!(c.eval_cfg().gamma, 1.2);
    }
}
