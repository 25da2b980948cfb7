//! Simulated pedestrian detector.
//!
//! Perturbs ground-truth boxes with configurable jitter, misses and false
//! positives so the two-stage pipeline (threshold -> NMS -> re-ID) can be
//! exercised and swept without training a detector.

use crate::error::Result;
use crate::geometry::Box;
use crate::rng::Rng;
use crate::synthdata::Scene;

/// Noise model for the simulated detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNoiseCfg {
    /// Gaussian jitter of center and size, as a fraction of box size.
    pub jitter_sigma: f64,
    /// Probability of dropping each ground-truth box.
    pub miss_rate: f64,
    /// Expected count of false-positive boxes per scene (Poisson).
    pub false_positive_rate: f64,
    /// True-positive score range (uniform).
    pub tp_score_lo: f64,
    pub tp_score_hi: f64,
    /// False-positive score range (uniform).
    pub fp_score_lo: f64,
    pub fp_score_hi: f64,
}

impl Default for DetectorNoiseCfg {
    fn default() -> Self {
        DetectorNoiseCfg {
            jitter_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            tp_score_lo: 0.7,
            tp_score_hi: 1.0,
            fp_score_lo: 0.1,
            fp_score_hi: 0.6,
        }
    }
}

/// Detections for one scene; deterministic in (scene annotations, cfg, seed).
pub fn simulate_detections(scene: &Scene, cfg: &DetectorNoiseCfg, seed: u64) -> Result<Vec<Box>> {
    let mut rng = Rng::new(seed);
    let (w, h) = (scene.image.width as f64, scene.image.height as f64);
    let mut out = Vec::new();

    for ann in &scene.annotations {
        if cfg.miss_rate > 0.0 && rng.unit() < cfg.miss_rate {
            continue;
        }
        let b = &ann.bbox;
        let (bw, bh) = (b.width(), b.height());
        let (mut x1, mut y1, mut x2, mut y2) = (b.x1, b.y1, b.x2, b.y2);
        if cfg.jitter_sigma > 0.0 {
            let dcx = rng.gaussian() * cfg.jitter_sigma * bw;
            let dcy = rng.gaussian() * cfg.jitter_sigma * bh;
            let sw = (1.0 + rng.gaussian() * cfg.jitter_sigma).max(0.3);
            let sh = (1.0 + rng.gaussian() * cfg.jitter_sigma).max(0.3);
            let cx = (b.x1 + b.x2) / 2.0 + dcx;
            let cy = (b.y1 + b.y2) / 2.0 + dcy;
            x1 = cx - bw * sw / 2.0;
            x2 = cx + bw * sw / 2.0;
            y1 = cy - bh * sh / 2.0;
            y2 = cy + bh * sh / 2.0;
        }
        x1 = x1.max(0.0);
        y1 = y1.max(0.0);
        x2 = x2.min(w);
        y2 = y2.min(h);
        if x2 - x1 < 1.0 || y2 - y1 < 1.0 {
            continue; // jittered off the image
        }
        let score = rng.range(cfg.tp_score_lo, cfg.tp_score_hi);
        out.push(Box::new(x1, y1, x2, y2)?.with_score(score));
    }

    let n_fp = rng.poisson(cfg.false_positive_rate);
    for _ in 0..n_fp {
        let fw = rng.range(4.0, w / 2.0);
        let fh = rng.range(4.0, h / 2.0);
        let x1 = rng.range(0.0, w - fw);
        let y1 = rng.range(0.0, h - fh);
        let score = rng.range(cfg.fp_score_lo, cfg.fp_score_hi);
        out.push(Box::new(x1, y1, x1 + fw, y1 + fh)?.with_score(score));
    }

    Ok(out)
}
