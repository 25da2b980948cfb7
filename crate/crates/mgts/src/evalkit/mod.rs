//! Retrieval and detection metrics plus the frozen-model evaluation
//! pipeline: detection AP/recall, person-search mAP, CMC top-K, gallery-size
//! sweeps and SE-weight statistics.
//!
//! Detection AP uses interpolated (monotone-envelope) precision with the
//! strict IoU > thresh rule; search AP uses exact summation with IoU >= 0.5
//! positives. Both are cross-checked against [`ap_oracle`].

pub mod report;

use crate::detectsim::{simulate_detections, DetectorNoiseCfg};
use crate::error::{Error, Result};
use crate::geometry::{iou, nms, Box, ExpandRatio};
use crate::par;
use crate::reidnet::{fnv1a, prepare_input, MaskMode, MgtsModel, ModelInput};
use crate::rng::Rng;
use crate::synthdata::{DatasetSplit, PersonId};

/// Exact average precision over a ranked list of match flags.
/// Denominator is the total positive count, not just the retrieved ones.
pub fn ap_oracle(flags: &[bool], num_positives: usize) -> Result<f64> {
    let hits = flags.iter().filter(|&&f| f).count();
    if hits > num_positives {
        return Err(Error::Contract(format!(
            "{hits} positive flags but only {num_positives} positives exist"
        )));
    }
    if num_positives == 0 {
        return Ok(0.0);
    }
    let mut seen = 0usize;
    let mut sum = 0.0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            seen += 1;
            sum += seen as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / num_positives as f64)
}

/// Area under the monotone-envelope precision-recall curve.
fn interpolated_ap(flags: &[bool], num_positives: usize) -> f64 {
    if num_positives == 0 || flags.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        recall.push(tp as f64 / num_positives as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    let mut envelope = precision.clone();
    for i in (0..envelope.len() - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..recall.len() {
        if recall[i] > prev {
            ap += (recall[i] - prev) * envelope[i];
            prev = recall[i];
        }
    }
    ap
}

/// Detection AP and recall over per-scene detections and ground truths.
/// Detections are ranked globally by score; a detection is a true positive
/// iff its IoU with some still-unmatched ground truth of its scene is
/// strictly above `iou_thresh`.
pub fn detection_ap_recall(
    dets: &[Vec<Box>],
    gts: &[Vec<Box>],
    iou_thresh: f64,
) -> Result<(f64, f64)> {
    if dets.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} detection scenes vs {} gt scenes",
            dets.len(),
            gts.len()
        )));
    }
    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    for (si, ds) in dets.iter().enumerate() {
        for (di, d) in ds.iter().enumerate() {
            let score = d
                .score
                .ok_or_else(|| Error::Contract("detection without a score".into()))?;
            ranked.push((si, di, score));
        }
    }
    ranked.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let total_gt: usize = gts.iter().map(|g| g.len()).sum();
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut flags = Vec::with_capacity(ranked.len());
    for &(si, di, _) in &ranked {
        let d = &dets[si][di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts[si].iter().enumerate() {
            if matched[si][gi] {
                continue;
            }
            let ov = iou(d, g);
            if ov > iou_thresh && best.is_none_or(|(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[si][gi] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    if total_gt == 0 {
        return Ok((0.0, 0.0));
    }
    let tp = flags.iter().filter(|&&f| f).count();
    Ok((
        interpolated_ap(&flags, total_gt),
        tp as f64 / total_gt as f64,
    ))
}

/// One scored gallery detection for a probe.
#[derive(Debug, Clone)]
pub struct GalleryDetection {
    pub scene: usize,
    pub bbox: Box,
    pub similarity: f64,
}

/// Everything needed to score one probe against its gallery subset.
#[derive(Debug, Clone)]
pub struct ProbeCase {
    pub detections: Vec<GalleryDetection>,
    /// Ground-truth instances of the probe identity: (scene, box).
    pub gt: Vec<(usize, Box)>,
}

/// Rank a probe's detections by similarity and flag true matches.
/// A detection matches iff IoU >= 0.5 with a still-unmatched ground truth of
/// the probe identity in the same scene; each ground truth is consumed by at
/// most one detection, greedily in similarity order.
pub fn probe_ranked_flags(case: &ProbeCase) -> Vec<bool> {
    let mut order: Vec<usize> = (0..case.detections.len()).collect();
    order.sort_by(|&a, &b| {
        case.detections[b]
            .similarity
            .partial_cmp(&case.detections[a].similarity)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut matched = vec![false; case.gt.len()];
    let mut flags = Vec::with_capacity(order.len());
    for &di in &order {
        let d = &case.detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, (scene, g)) in case.gt.iter().enumerate() {
            if matched[gi] || *scene != d.scene {
                continue;
            }
            let ov = iou(&d.bbox, g);
            if ov >= 0.5 && best.is_none_or(|(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[gi] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    flags
}

/// Exact-sum AP for one probe; `None` when the gallery holds no instance of
/// the probe identity (defensive, never produced by the generator).
pub fn probe_ap(case: &ProbeCase) -> Result<Option<f64>> {
    if case.gt.is_empty() {
        return Ok(None);
    }
    let flags = probe_ranked_flags(case);
    Ok(Some(ap_oracle(&flags, case.gt.len())?))
}

/// Mean AP over probes plus per-probe APs and ranked flags (for CMC).
pub fn search_map(cases: &[ProbeCase]) -> Result<(f64, Vec<f64>, Vec<Vec<bool>>)> {
    let mut aps = Vec::with_capacity(cases.len());
    let mut all_flags = Vec::with_capacity(cases.len());
    for case in cases {
        if let Some(ap) = probe_ap(case)? {
            aps.push(ap);
            all_flags.push(probe_ranked_flags(case));
        }
    }
    if aps.is_empty() {
        return Err(Error::Contract("no probe has a gallery match".into()));
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok((map, aps, all_flags))
}

/// cmc(K) = fraction of probes with at least one match in the top K.
pub fn cmc_topk(flags_per_probe: &[Vec<bool>], ks: &[usize]) -> Vec<(usize, f64)> {
    let n = flags_per_probe.len();
    ks.iter()
        .map(|&k| {
            let hit = flags_per_probe
                .iter()
                .filter(|f| f.iter().take(k).any(|&m| m))
                .count();
            (k, if n == 0 { 0.0 } else { hit as f64 / n as f64 })
        })
        .collect()
}

/// Per-sample SE-weight summary for a two-stream model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeSample {
    pub avg_f: f64,
    pub avg_o: f64,
    /// F-stream channels among the 20 largest weights overall.
    pub n20f: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeStats {
    pub samples: Vec<SeSample>,
    /// histogram[k] = samples with N20F == k, k in 0..=20.
    pub histogram: Vec<usize>,
}

/// Summarize one SE weight vector; the first half of `w` is the F stream.
pub fn se_sample(w: &[f64]) -> Result<SeSample> {
    if w.len() < 2 || !w.len().is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "SE weight vector length {} is not an even split",
            w.len()
        )));
    }
    let c = w.len() / 2;
    let avg_f = w[..c].iter().sum::<f64>() / c as f64;
    let avg_o = w[c..].iter().sum::<f64>() / c as f64;
    let mut order: Vec<usize> = (0..w.len()).collect();
    // ties at the cutoff resolve to the lower channel index
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
    let top = 20.min(w.len());
    let n20f = order[..top].iter().filter(|&&i| i < c).count();
    Ok(SeSample { avg_f, avg_o, n20f })
}

pub fn se_statistics(weights: &[Vec<f64>]) -> Result<SeStats> {
    let mut samples = Vec::with_capacity(weights.len());
    let mut histogram = vec![0usize; 21];
    for w in weights {
        let s = se_sample(w)?;
        histogram[s.n20f.min(20)] += 1;
        samples.push(s);
    }
    Ok(SeStats { samples, histogram })
}

/// Evaluation configuration for the frozen-model pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCfg {
    /// RoI expansion ratio for descriptor patches.
    pub gamma: f64,
    pub mask_mode: MaskMode,
    /// Detections below this score are dropped before NMS.
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub noise: DetectorNoiseCfg,
    pub cmc_ks: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalCfg {
    fn default() -> Self {
        EvalCfg {
            gamma: 1.3,
            mask_mode: MaskMode::Instance,
            score_thresh: 0.5,
            nms_thresh: 0.45,
            noise: DetectorNoiseCfg::default(),
            cmc_ks: vec![1, 5, 10],
            seed: 0,
        }
    }
}

impl EvalCfg {
    pub fn digest(&self) -> u64 {
        let s = format!(
            "{}|{:?}|{}|{}|{:?}|{:?}|{}",
            self.gamma,
            self.mask_mode,
            self.score_thresh,
            self.nms_thresh,
            self.noise,
            self.cmc_ks,
            self.seed
        );
        fnv1a(s.as_bytes())
    }
}

/// Full evaluation result at one gallery size.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub gallery_size: usize,
    pub detection_ap: f64,
    pub detection_recall: f64,
    pub search_map: f64,
    pub per_probe_ap: Vec<f64>,
    pub cmc: Vec<(usize, f64)>,
    pub config_digest: u64,
}

/// Scored boxes of one scene paired with their descriptors.
type SceneDetections = (Vec<Box>, Vec<Vec<f64>>);

/// Cached per-scene detector output with descriptors, indexed by scene id.
pub struct DetectionCache {
    entries: Vec<Option<SceneDetections>>,
}

/// Run the detector on every test scene, threshold, apply NMS and compute a
/// descriptor for each surviving box.
pub fn build_detection_cache(
    data: &DatasetSplit,
    model: &MgtsModel,
    cfg: &EvalCfg,
) -> Result<DetectionCache> {
    let gamma = ExpandRatio::new(cfg.gamma)?;
    let per_test: Vec<Result<(usize, SceneDetections)>> =
        par::map_indexed(data.test.len(), |ti| {
            let si = data.test[ti];
            let scene = &data.scenes[si];
            let seed = Rng::subseed(cfg.seed, 0xDE7_0000 + si as u64);
            let raw = simulate_detections(scene, &cfg.noise, seed)?;
            let kept: Vec<Box> = raw
                .into_iter()
                .filter(|b| b.score.unwrap_or(0.0) >= cfg.score_thresh)
                .collect();
            let boxes = nms(&kept, cfg.nms_thresh)?;
            let mut out_boxes = Vec::with_capacity(boxes.len());
            let mut descs = Vec::with_capacity(boxes.len());
            for b in boxes {
                let input = prepare_input(
                    &scene.image,
                    &scene.mask,
                    &b,
                    gamma,
                    &model.cfg,
                    cfg.mask_mode,
                )?;
                match model.descriptor(&input) {
                    Ok((x, _)) => {
                        out_boxes.push(b);
                        descs.push(x);
                    }
                    // an all-zero patch has no descriptor; drop the box
                    Err(Error::Degenerate(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok((si, (out_boxes, descs)))
        });
    let mut entries: Vec<Option<SceneDetections>> = vec![None; data.scenes.len()];
    for r in per_test {
        let (si, dets) = r?;
        entries[si] = Some(dets);
    }
    Ok(DetectionCache { entries })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn probe_descriptor(
    data: &DatasetSplit,
    model: &MgtsModel,
    cfg: &EvalCfg,
    probe_idx: usize,
) -> Result<(Vec<f64>, PersonId)> {
    let probe = data.probes[probe_idx];
    let scene = &data.scenes[probe.scene];
    let ann = &scene.annotations[probe.ann];
    let gamma = ExpandRatio::new(cfg.gamma)?;
    let input: ModelInput = prepare_input(
        &scene.image,
        &scene.mask,
        &ann.bbox,
        gamma,
        &model.cfg,
        cfg.mask_mode,
    )?;
    let (x, _) = model.descriptor(&input)?;
    Ok((x, ann.id))
}

/// Build the per-probe case at one gallery size index from cached detections.
fn probe_case(
    data: &DatasetSplit,
    cache: &DetectionCache,
    probe_idx: usize,
    size_index: usize,
    descriptor: &[f64],
    identity: PersonId,
) -> ProbeCase {
    let mut detections = Vec::new();
    let mut gt = Vec::new();
    for &si in &data.galleries[probe_idx][size_index] {
        if let Some((boxes, descs)) = &cache.entries[si] {
            for (b, d) in boxes.iter().zip(descs) {
                detections.push(GalleryDetection {
                    scene: si,
                    bbox: *b,
                    similarity: dot(descriptor, d),
                });
            }
        }
        for ann in &data.scenes[si].annotations {
            if ann.id == identity {
                gt.push((si, ann.bbox));
            }
        }
    }
    ProbeCase { detections, gt }
}

/// Evaluate at one gallery size using a prebuilt detection cache.
pub fn evaluate_with_cache(
    data: &DatasetSplit,
    model: &MgtsModel,
    cache: &DetectionCache,
    size_index: usize,
    cfg: &EvalCfg,
) -> Result<EvalReport> {
    if size_index >= data.cfg.gallery_sizes.len() {
        return Err(Error::Config(format!(
            "gallery size index {} out of range ({} sizes)",
            size_index,
            data.cfg.gallery_sizes.len()
        )));
    }
    // detection metrics over all test scenes
    let mut dets = Vec::with_capacity(data.test.len());
    let mut gts = Vec::with_capacity(data.test.len());
    for &si in &data.test {
        dets.push(cache.entries[si].as_ref().map(|(b, _)| b.clone()).unwrap());
        gts.push(
            data.scenes[si]
                .annotations
                .iter()
                .map(|a| a.bbox)
                .collect::<Vec<_>>(),
        );
    }
    let (detection_ap, detection_recall) = detection_ap_recall(&dets, &gts, 0.5)?;

    let cases: Vec<Result<ProbeCase>> = par::map_indexed(data.probes.len(), |pi| {
        let (x, id) = probe_descriptor(data, model, cfg, pi)?;
        Ok(probe_case(data, cache, pi, size_index, &x, id))
    });
    let cases: Vec<ProbeCase> = cases.into_iter().collect::<Result<_>>()?;
    let (map, per_probe_ap, flags) = search_map(&cases)?;
    let cmc = cmc_topk(&flags, &cfg.cmc_ks);

    Ok(EvalReport {
        gallery_size: data.cfg.gallery_sizes[size_index],
        detection_ap,
        detection_recall,
        search_map: map,
        per_probe_ap,
        cmc,
        config_digest: model.cfg.digest() ^ cfg.digest(),
    })
}

/// Evaluate at a single gallery size.
pub fn evaluate(
    data: &DatasetSplit,
    model: &MgtsModel,
    size_index: usize,
    cfg: &EvalCfg,
) -> Result<EvalReport> {
    let cache = build_detection_cache(data, model, cfg)?;
    evaluate_with_cache(data, model, &cache, size_index, cfg)
}

/// One report per configured gallery size, sharing a single detector pass.
pub fn gallery_sweep(data: &DatasetSplit, model: &MgtsModel, cfg: &EvalCfg) -> Result<Vec<EvalReport>> {
    let cache = build_detection_cache(data, model, cfg)?;
    (0..data.cfg.gallery_sizes.len())
        .map(|i| evaluate_with_cache(data, model, &cache, i, cfg))
        .collect()
}

/// SE-weight statistics over every training annotation. Two-stream only.
pub fn inspect_se(data: &DatasetSplit, model: &MgtsModel, cfg: &EvalCfg) -> Result<SeStats> {
    if !model.cfg.variant.is_two_stream() {
        return Err(Error::Contract(
            "SE statistics need the two-stream variant".into(),
        ));
    }
    let gamma = ExpandRatio::new(cfg.gamma)?;
    let per_scene: Vec<Result<Vec<Vec<f64>>>> = par::map_indexed(data.train.len(), |ti| {
        let si = data.train[ti];
        let scene = &data.scenes[si];
        let mut ws = Vec::new();
        for ann in &scene.annotations {
            let input = prepare_input(
                &scene.image,
                &scene.mask,
                &ann.bbox,
                gamma,
                &model.cfg,
                cfg.mask_mode,
            )?;
            match model.descriptor(&input) {
                Ok((_, w)) => ws.push(w),
                Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(ws)
    });
    let mut weights = Vec::new();
    for r in per_scene {
        weights.extend(r?);
    }
    se_statistics(&weights)
}
