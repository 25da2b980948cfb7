//! Acceptance gate: one test per release criterion, each printing a single
//! pass/fail line. Trend criteria share trained models through a process-wide
//! cache so the whole suite stays within its runtime budget.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use mgts::detectsim::DetectorNoiseCfg;
use mgts::diffcore::{grad_check, Tape, Tensor};
use mgts::evalkit::{
    ap_oracle, cmc_topk, detection_ap_recall, evaluate, gallery_sweep, inspect_se, probe_ap,
    report::write_eval_csv, EvalCfg, GalleryDetection, ProbeCase,
};
use mgts::geometry::{expand_roi, iou, nms, Box, ExpandRatio, Grid};
use mgts::masking::{separate_foreground, InstanceMask};
use mgts::oimloss::{lut_update, oim_loss_and_grad, oim_probs, queue_push, OimState};
use mgts::reidnet::{
    load_checkpoint, prepare_input, save_checkpoint, train, MaskMode, MgtsModel, ModelCfg,
    TrainCfg, Variant,
};
use mgts::rng::Rng;
use mgts::synthdata::{gen_dataset, load_dataset, save_dataset, DatasetCfg, DatasetSplit};

// ---------------------------------------------------------------------------
// shared fixtures

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n:2} ({name}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn dataset(seed: u64) -> Arc<DatasetSplit> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<OnceLock<Arc<DatasetSplit>>>>>> =
        OnceLock::new();
    let cell = {
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
        map.entry(seed).or_default().clone()
    };
    cell.get_or_init(|| Arc::new(gen_dataset(seed, &DatasetCfg::default()).unwrap()))
        .clone()
}

/// Trained model + its first-gallery-size search mAP under the matching eval
/// mask mode, cached per (seed, variant, mask mode).
fn trained_map(seed: u64, variant: Variant, mask_mode: MaskMode) -> f64 {
    trained(seed, variant, mask_mode).1
}

type TrainedEntry = Arc<(MgtsModel, f64)>;

fn trained(seed: u64, variant: Variant, mask_mode: MaskMode) -> TrainedEntry {
    type Key = (u64, &'static str, bool);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<OnceLock<TrainedEntry>>>>> = OnceLock::new();
    let key: Key = (seed, variant.label(), mask_mode == MaskMode::BoxMask);
    let cell = {
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
        map.entry(key).or_default().clone()
    };
    cell.get_or_init(|| {
        let data = dataset(seed);
        let model_cfg = ModelCfg {
            variant,
            ..ModelCfg::default()
        };
        let tcfg = TrainCfg {
            seed,
            mask_mode,
            ..TrainCfg::default()
        };
        let (model, _, _) = train(model_cfg, &data, &tcfg).unwrap();
        let ecfg = EvalCfg {
            seed,
            mask_mode,
            ..EvalCfg::default()
        };
        let rep = evaluate(&data, &model, 0, &ecfg).unwrap();
        Arc::new((model, rep.search_map))
    })
    .clone()
}

const TREND_SEEDS: [u64; 3] = [1, 2, 3];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn avg_map(variant: Variant, mask_mode: MaskMode) -> f64 {
    mean(
        TREND_SEEDS
            .map(|s| trained_map(s, variant, mask_mode)).as_ref(),
    )
}

fn rand_tensor(rng: &mut Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range(lo, hi)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

/// Scalar objective = fixed-weight sum of the op output; returns analytic
/// input gradients from the tape.
fn check_op<F>(inputs: &[Tensor], op: F) -> f64
where
    F: Fn(&mut Tape, &[mgts::diffcore::VarId]) -> mgts::diffcore::VarId,
{
    let weights: Vec<f64> = {
        // deterministic non-uniform seed so every output entry matters
        let mut tape = Tape::new();
        let ids: Vec<_> = inputs.iter().map(|t| tape.leaf(t, false)).collect();
        let out = op(&mut tape, &ids);
        (0..tape.data(out).len())
            .map(|i| 0.3 + 0.1 * (i % 7) as f64)
            .collect()
    };
    grad_check(
        |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let ids: Vec<_> = xs.iter().map(|t| tape.leaf(t, true)).collect();
            let out = op(&mut tape, &ids);
            let loss: f64 = tape
                .data(out)
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum();
            tape.backward_seeded(out, &weights)?;
            Ok((loss, ids.iter().map(|&id| tape.grad(id).unwrap()).collect()))
        },
        inputs,
        1e-5,
    )
    .unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let mut worst_prim = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = Rng::new(seed);
        let a = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
        let c = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        // keep ReLU inputs away from the kink
        let mut off = rand_tensor(&mut rng, vec![3, 4], 0.1, 1.0);
        for (i, v) in off.data_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        let cube = rand_tensor(&mut rng, vec![2, 4, 6], -1.0, 1.0);
        let cube2 = rand_tensor(&mut rng, vec![3, 4, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, vec![2], 0.1, 0.9);
        let bias = rand_tensor(&mut rng, vec![2], -0.5, 0.5);
        let nz = rand_tensor(&mut rng, vec![5], 0.2, 1.0);

        let checks = [
            check_op(&[a.clone(), b.clone()], |t, ids| {
                t.matmul(ids[0], ids[1]).unwrap()
            }),
            check_op(&[off.clone()], |t, ids| t.relu(ids[0])),
            check_op(std::slice::from_ref(&a), |t, ids| t.sigmoid(ids[0])),
            check_op(&[a.clone(), c.clone()], |t, ids| {
                t.add(ids[0], ids[1]).unwrap()
            }),
            check_op(&[a.clone(), c.clone()], |t, ids| {
                t.sub(ids[0], ids[1]).unwrap()
            }),
            check_op(&[a.clone(), c.clone()], |t, ids| {
                t.mul(ids[0], ids[1]).unwrap()
            }),
            check_op(std::slice::from_ref(&cube), |t, ids| {
                t.global_average_pool(ids[0]).unwrap()
            }),
            check_op(std::slice::from_ref(&nz), |t, ids| t.l2_normalize(ids[0]).unwrap()),
            check_op(&[cube.clone(), w.clone()], |t, ids| {
                t.channel_scale(ids[0], ids[1]).unwrap()
            }),
            check_op(&[cube.clone(), bias.clone()], |t, ids| {
                t.channel_bias(ids[0], ids[1]).unwrap()
            }),
            check_op(&[cube.clone(), cube2.clone()], |t, ids| {
                t.concat_channels(ids[0], ids[1]).unwrap()
            }),
            check_op(std::slice::from_ref(&cube), |t, ids| t.avg_pool_2x(ids[0]).unwrap()),
            check_op(std::slice::from_ref(&cube), |t, ids| {
                t.reshape(ids[0], vec![8, 6]).unwrap()
            }),
        ];
        for c in checks {
            worst_prim = worst_prim.max(c);
        }
    }

    // composite: full two-stream forward + instance-matching loss, gradient
    // w.r.t. every parameter
    let mut worst_comp = 0.0f64;
    for seed in 0..10u64 {
        let cfg = ModelCfg {
            variant: Variant::TwoStreamOfe,
            channel_plan: vec![4],
            embed_dim: 4,
            se_reduction: 2,
            input_h: 8,
            input_w: 4,
        };
        let base = MgtsModel::new(cfg.clone(), seed).unwrap();
        let mut rng = Rng::new(Rng::subseed(seed, 77));
        let mut img = Grid::new(3, 16, 16);
        for v in img.data.iter_mut() {
            *v = rng.unit();
        }
        let mut mask = InstanceMask::new(16, 16);
        for y in 5..12 {
            for x in 4..11 {
                mask.set(y, x, 1);
            }
        }
        let bbox = Box::new(4.0, 5.0, 11.0, 12.0).unwrap();
        let input = prepare_input(
            &img,
            &mask,
            &bbox,
            ExpandRatio::new(1.3).unwrap(),
            &cfg,
            MaskMode::Instance,
        )
        .unwrap();
        let mut state = OimState::new(3, 4, 4, 1.0 / 30.0, 0.5).unwrap();
        for t in 1..=3 {
            let row: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            state.set_lut_row(t, row.into_iter().map(|v| v / n).collect());
        }
        queue_push(&mut state, &[0.5, 0.5, 0.5, 0.5]).unwrap();

        let base_params: Vec<Tensor> = base
            .named_params()
            .iter()
            .map(|(_, p)| p.value.clone())
            .collect();
        let err = grad_check(
            |ps: &[Tensor]| {
                let mut model = base.clone();
                for (slot, t) in model.params_mut().into_iter().zip(ps) {
                    slot.value = t.clone();
                    slot.grad = None;
                }
                let pass = model.forward(&input)?;
                let x = pass.descriptor_values();
                let (loss, gx) = oim_loss_and_grad(&x, 2, &state)?;
                model.backward(pass, &gx)?;
                let grads = model
                    .params_mut()
                    .into_iter()
                    .map(|p| {
                        p.grad
                            .take()
                            .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
                    })
                    .collect();
                Ok((loss, grads))
            },
            &base_params,
            1e-5,
        )
        .unwrap();
        worst_comp = worst_comp.max(err);
    }

    let ok = worst_prim < 1e-4 && worst_comp < 1e-3;
    report(
        1,
        "gradient correctness",
        ok,
        &format!("max primitive rel err {worst_prim:.2e} (< 1e-4), composite {worst_comp:.2e} (< 1e-3), 10 seeds each"),
    );
}

// ---------------------------------------------------------------------------
// 2. instance-matching loss exactness

#[test]
fn criterion_02_oim_exactness() {
    let mut rng = Rng::new(2);

    // probabilities sum to 1 over random states
    let mut worst_sum = 0.0f64;
    for _ in 0..50 {
        let dim = 2 + rng.below(6);
        let classes = 2 + rng.below(5);
        let mut state = OimState::new(classes, dim, 8, 0.05 + rng.unit(), 0.5).unwrap();
        for t in 1..=classes {
            state
                .set_lut_row(t, (0..dim).map(|_| rng.range(-1.0, 1.0)).collect());
        }
        for _ in 0..rng.below(12) {
            let u: Vec<f64> = (0..dim).map(|_| rng.range(-1.0, 1.0)).collect();
            queue_push(&mut state, &u).unwrap();
        }
        let x: Vec<f64> = (0..dim).map(|_| rng.range(-1.0, 1.0)).collect();
        let probs = oim_probs(&x, &state).unwrap();
        worst_sum = worst_sum.max((probs.iter().sum::<f64>() - 1.0).abs());
    }

    // orthogonal two-class example at unit temperature: p1 = e/(e+1)
    let mut state = OimState::new(2, 2, 4, 1.0, 0.5).unwrap();
    state.set_lut_row(1, vec![1.0, 0.0]);
    state.set_lut_row(2, vec![0.0, 1.0]);
    let probs = oim_probs(&[1.0, 0.0], &state).unwrap();
    let expect = std::f64::consts::E / (std::f64::consts::E + 1.0);
    let ortho_err = (probs[0] - expect).abs();

    // momentum update for eta in {0, 0.5, 1}
    let mut lut_ok = true;
    for eta in [0.0, 0.5, 1.0] {
        let mut state = OimState::new(1, 3, 2, 1.0, eta).unwrap();
        let v0 = vec![0.2, -0.4, 0.6];
        state.set_lut_row(1, v0.clone());
        let x = [0.9, 0.1, -0.3];
        lut_update(&mut state, &x, 1).unwrap();
        let got = state.lut_row(1);
        let want: Vec<f64> = v0
            .iter()
            .zip(x.iter())
            .map(|(v, xi)| eta * v + (1.0 - eta) * xi)
            .collect();
        lut_ok &= got == want.as_slice();
    }

    // circular queue vs list FIFO over 1000 random pushes
    let mut state = OimState::new(2, 3, 7, 1.0, 0.5).unwrap();
    let mut oracle: Vec<Vec<f64>> = Vec::new();
    let mut queue_ok = true;
    for _ in 0..1000 {
        let u: Vec<f64> = (0..3).map(|_| rng.range(-1.0, 1.0)).collect();
        queue_push(&mut state, &u).unwrap();
        if oracle.len() == 7 {
            oracle.remove(0);
        }
        oracle.push(u);
        let got: Vec<Vec<f64>> = state
            .queue_entries()
            .into_iter()
            .map(|s| s.to_vec())
            .collect();
        queue_ok &= got == oracle;
    }

    let ok = worst_sum <= 1e-12 && ortho_err <= 1e-12 && lut_ok && queue_ok;
    report(
        2,
        "OIM exactness",
        ok,
        &format!(
            "prob-sum err {worst_sum:.2e} (<= 1e-12), e/(e+1) err {ortho_err:.2e} (<= 1e-12), momentum cases {}, 1000-op FIFO {}",
            if lut_ok { "exact" } else { "WRONG" },
            if queue_ok { "exact" } else { "WRONG" }
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. dominant-instance selection

#[test]
fn criterion_03_dominant_instance_oracle() {
    let mut rng = Rng::new(3);
    let mut checked = 0usize;
    let mut fallbacks = 0usize;
    for case in 0..1000 {
        let h = 8 + rng.below(17);
        let w = 8 + rng.below(17);
        let mut img = Grid::new(3, h, w);
        for v in img.data.iter_mut() {
            *v = rng.unit();
        }
        let mut mask = InstanceMask::new(h, w);
        // sparse labels in 0..=3 so ties and empty crops both occur
        let density = if case % 5 == 0 { 0.0 } else { 0.3 };
        for y in 0..h {
            for x in 0..w {
                if rng.unit() < density {
                    mask.set(y, x, 1 + rng.below(3) as u32);
                }
            }
        }
        let x1 = rng.below(w - 4) as f64;
        let y1 = rng.below(h - 4) as f64;
        let bw = 2.0 + rng.below(w - x1 as usize - 2) as f64;
        let bh = 2.0 + rng.below(h - y1 as usize - 2) as f64;
        let b = Box::new(x1, y1, x1 + bw, y1 + bh).unwrap();
        let gamma = ExpandRatio::new(1.0 + rng.unit() * 0.5).unwrap();

        let out = separate_foreground(&b, gamma, &img, &mask).unwrap();

        // brute-force pixel-count oracle over the expanded crop rect
        let expanded = expand_roi(&b, gamma, w, h).unwrap();
        let (rx1, ry1, rx2, ry2) = expanded.pixel_rect(w, h).unwrap();
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for y in ry1..ry2 {
            for x in rx1..rx2 {
                let l = mask.at(y, x);
                if l != 0 {
                    *counts.entry(l).or_default() += 1;
                }
            }
        }
        let expect = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&l, _)| l);

        assert_eq!(
            out.dominant_instance, expect,
            "case {case}: dominant instance differs from pixel-count oracle"
        );
        assert_eq!(out.fallback_used, expect.is_none(), "case {case}");
        if out.fallback_used {
            fallbacks += 1;
        }
        checked += 1;
    }
    let ok = checked == 1000 && fallbacks > 0;
    report(
        3,
        "dominant-instance fidelity",
        ok,
        &format!("{checked}/1000 masks exactly match the brute-force oracle ({fallbacks} empty-crop fallbacks exercised)"),
    );
}

// ---------------------------------------------------------------------------
// 4. metric oracles

/// Independent interpolated-AP oracle: for each achieved recall level, take
/// the best prefix precision at or beyond it.
fn interp_ap_reference(flags: &[bool], p: usize) -> f64 {
    if p == 0 {
        return 0.0;
    }
    let n = flags.len();
    let mut prec = Vec::with_capacity(n);
    let mut rec = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / p as f64);
    }
    let mut ap = 0.0;
    for i in 1..=tp {
        let r = i as f64 / p as f64;
        let best = (0..n)
            .filter(|&t| rec[t] >= r)
            .map(|t| prec[t])
            .fold(0.0, f64::max);
        ap += best / p as f64;
    }
    ap
}

fn rand_box(rng: &mut Rng, span: f64) -> Box {
    let x1 = rng.range(0.0, span);
    let y1 = rng.range(0.0, span);
    Box::new(x1, y1, x1 + rng.range(4.0, 12.0), y1 + rng.range(4.0, 12.0)).unwrap()
}

#[test]
fn criterion_04_metric_oracles() {
    let mut rng = Rng::new(4);
    let mut worst = 0.0f64;

    // search AP + CMC on 200 random probe instances with <= 20 detections
    for _ in 0..200 {
        let num_gt = 1 + rng.below(4);
        let gt: Vec<(usize, Box)> = (0..num_gt)
            .map(|_| (rng.below(5), rand_box(&mut rng, 20.0)))
            .collect();
        let num_det = rng.below(21);
        let detections: Vec<GalleryDetection> = (0..num_det)
            .map(|_| {
                // half the detections hover near a ground truth
                let bbox = if rng.unit() < 0.5 && !gt.is_empty() {
                    let (_, g) = gt[rng.below(gt.len())];
                    Box::new(
                        g.x1 + rng.range(-1.5, 1.5),
                        g.y1 + rng.range(-1.5, 1.5),
                        g.x2 + rng.range(-1.5, 1.5),
                        g.y2 + rng.range(-1.5, 1.5),
                    )
                    .unwrap()
                } else {
                    rand_box(&mut rng, 20.0)
                };
                GalleryDetection {
                    scene: rng.below(5),
                    bbox,
                    similarity: rng.unit(),
                }
            })
            .collect();
        let case = ProbeCase {
            detections,
            gt: gt.clone(),
        };

        // independent ranking + greedy matching oracle
        let mut order: Vec<usize> = (0..case.detections.len()).collect();
        order.sort_by(|&a, &b| {
            case.detections[b]
                .similarity
                .partial_cmp(&case.detections[a].similarity)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut used = vec![false; gt.len()];
        let mut flags = Vec::new();
        for &di in &order {
            let d = &case.detections[di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, (gs, gb)) in gt.iter().enumerate() {
                if used[gi] || *gs != d.scene {
                    continue;
                }
                let ov = iou(&d.bbox, gb);
                if ov >= 0.5 && best.is_none_or(|(_, b)| ov > b) {
                    best = Some((gi, ov));
                }
            }
            if let Some((gi, _)) = best {
                used[gi] = true;
                flags.push(true);
            } else {
                flags.push(false);
            }
        }

        let got = probe_ap(&case).unwrap().unwrap();
        let want = ap_oracle(&flags, gt.len()).unwrap();
        worst = worst.max((got - want).abs());

        // CMC agrees with direct enumeration and is monotone in K
        let ks: Vec<usize> = (1..=20).collect();
        let cmc = cmc_topk(std::slice::from_ref(&flags), &ks);
        let mut prev = 0.0;
        for &(k, v) in &cmc {
            let direct = if flags.iter().take(k).any(|&f| f) {
                1.0
            } else {
                0.0
            };
            worst = worst.max((v - direct).abs());
            assert!(v >= prev, "CMC not monotone in K");
            prev = v;
        }
    }

    // detection AP on 200 random multi-scene instances
    for _ in 0..200 {
        let scenes = 1 + rng.below(4);
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for _ in 0..scenes {
            let g: Vec<Box> = (0..rng.below(4)).map(|_| rand_box(&mut rng, 20.0)).collect();
            let d: Vec<Box> = (0..rng.below(6))
                .map(|_| {
                    let b = if rng.unit() < 0.6 && !g.is_empty() {
                        let gb = g[rng.below(g.len())];
                        Box::new(
                            gb.x1 + rng.range(-1.0, 1.0),
                            gb.y1 + rng.range(-1.0, 1.0),
                            gb.x2 + rng.range(-1.0, 1.0),
                            gb.y2 + rng.range(-1.0, 1.0),
                        )
                        .unwrap()
                    } else {
                        rand_box(&mut rng, 20.0)
                    };
                    b.with_score(rng.unit())
                })
                .collect();
            gts.push(g);
            dets.push(d);
        }
        let (ap, recall) = detection_ap_recall(&dets, &gts, 0.5).unwrap();

        // oracle: global score ranking, greedy best-IoU matching, envelope AP
        let mut ranked: Vec<(usize, usize)> = Vec::new();
        for (si, ds) in dets.iter().enumerate() {
            for di in 0..ds.len() {
                ranked.push((si, di));
            }
        }
        ranked.sort_by(|&(sa, da), &(sb, db)| {
            dets[sb][db]
                .score
                .unwrap()
                .partial_cmp(&dets[sa][da].score.unwrap())
                .unwrap()
                .then(sa.cmp(&sb))
                .then(da.cmp(&db))
        });
        let total_gt: usize = gts.iter().map(|g| g.len()).sum();
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut flags = Vec::new();
        for &(si, di) in &ranked {
            let d = &dets[si][di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts[si].iter().enumerate() {
                if used[si][gi] {
                    continue;
                }
                let ov = iou(d, g);
                if ov > 0.5 && best.is_none_or(|(_, b)| ov > b) {
                    best = Some((gi, ov));
                }
            }
            if let Some((gi, _)) = best {
                used[si][gi] = true;
                flags.push(true);
            } else {
                flags.push(false);
            }
        }
        let want_ap = interp_ap_reference(&flags, total_gt);
        let want_recall = if total_gt == 0 {
            0.0
        } else {
            flags.iter().filter(|&&f| f).count() as f64 / total_gt as f64
        };
        worst = worst.max((ap - want_ap).abs());
        worst = worst.max((recall - want_recall).abs());
    }

    // NMS vs exhaustive greedy oracle on <= 8 boxes
    let mut nms_ok = true;
    for _ in 0..200 {
        let n = 1 + rng.below(8);
        let boxes: Vec<Box> = (0..n)
            .map(|i| rand_box(&mut rng, 12.0).with_score(rng.unit() + i as f64 * 1e-9))
            .collect();
        let thresh = rng.range(0.2, 0.7);
        let got = nms(&boxes, thresh).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            boxes[j]
                .score
                .unwrap()
                .partial_cmp(&boxes[i].score.unwrap())
                .unwrap()
                .then(i.cmp(&j))
        });
        let mut kept: Vec<Box> = Vec::new();
        for &i in &order {
            if kept.iter().all(|k| iou(k, &boxes[i]) <= thresh) {
                kept.push(boxes[i]);
            }
        }
        nms_ok &= got == kept;
    }

    let ok = worst <= 1e-12 && nms_ok;
    report(
        4,
        "metric oracles",
        ok,
        &format!(
            "max |metric - oracle| {worst:.2e} (<= 1e-12) over 200 search + 200 detection instances; NMS {} vs exhaustive oracle; CMC monotone",
            if nms_ok { "exact" } else { "WRONG" }
        ),
    );
}

// ---------------------------------------------------------------------------
// 5-8, 10: trend criteria on the default desk dataset

#[test]
fn criterion_05_visual_component_trend() {
    let ofe = avg_map(Variant::TwoStreamOfe, MaskMode::Instance);
    let oe = avg_map(Variant::SingleOe, MaskMode::Instance);
    let o = avg_map(Variant::SingleO, MaskMode::Instance);
    let b = avg_map(Variant::SingleB, MaskMode::Instance);
    let ok = ofe - oe >= 0.03 && o - b >= 0.03;
    report(
        5,
        "visual component trend",
        ok,
        &format!(
            "3-seed mAP: O+F+E {ofe:.4} vs O+E {oe:.4} (gap {:.1}pp), O {o:.4} vs B {b:.4} (gap {:.1}pp); both >= 3pp",
            100.0 * (ofe - oe),
            100.0 * (o - b)
        ),
    );
}

#[test]
fn criterion_06_weak_mask_trend() {
    let instance = avg_map(Variant::TwoStreamOfe, MaskMode::Instance);
    let boxed = avg_map(Variant::TwoStreamOfe, MaskMode::BoxMask);
    let single = avg_map(Variant::SingleO, MaskMode::Instance);
    let ok = instance >= boxed && boxed >= single;
    report(
        6,
        "weak-mask trend",
        ok,
        &format!("3-seed mAP: instance masks {instance:.4} >= box masks {boxed:.4} >= single-stream O {single:.4}"),
    );
}

#[test]
fn criterion_07_gallery_size_trend() {
    let mut per_size = vec![Vec::new(); 3];
    for &seed in &TREND_SEEDS {
        let entry = trained(seed, Variant::TwoStreamOfe, MaskMode::Instance);
        let data = dataset(seed);
        let ecfg = EvalCfg {
            seed,
            ..EvalCfg::default()
        };
        let reports = gallery_sweep(&data, &entry.0, &ecfg).unwrap();
        assert_eq!(reports.len(), 3);
        for (i, r) in reports.iter().enumerate() {
            per_size[i].push(r.search_map);
        }
    }
    let avgs: Vec<f64> = per_size.iter().map(|v| mean(v)).collect();
    let ok = avgs.windows(2).all(|w| w[0] >= w[1]);
    report(
        7,
        "gallery size trend",
        ok,
        &format!(
            "3-seed mAP across gallery sizes [10, 20, 40]: {:.4} >= {:.4} >= {:.4}",
            avgs[0], avgs[1], avgs[2]
        ),
    );
}

#[test]
fn criterion_08_se_gate_inspection() {
    let seed = 0u64;
    let entry = trained(seed, Variant::TwoStreamOfe, MaskMode::Instance);
    let data = dataset(seed);
    let ecfg = EvalCfg {
        seed,
        ..EvalCfg::default()
    };
    let stats = inspect_se(&data, &entry.0, &ecfg).unwrap();
    let n = stats.samples.len();
    let f_wins = stats
        .samples
        .iter()
        .filter(|s| s.avg_f > s.avg_o)
        .count();
    let n20f_high = stats.samples.iter().filter(|s| s.n20f > 10).count();
    let f_frac = f_wins as f64 / n as f64;
    let h_frac = n20f_high as f64 / n as f64;
    let ok = n > 0 && f_frac >= 0.90 && h_frac >= 0.60;
    report(
        8,
        "SE gate inspection",
        ok,
        &format!(
            "{n} training samples: Avg(F) > Avg(O) on {:.1}% (>= 90%), N20F > 10 on {:.1}% (>= 60%)",
            100.0 * f_frac,
            100.0 * h_frac
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. determinism and round-trips

#[test]
fn criterion_09_determinism_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dcfg = DatasetCfg {
        num_identities: 6,
        num_scenes: 24,
        num_probes: 6,
        gallery_sizes: vec![6],
        ..DatasetCfg::default()
    };
    let data = gen_dataset(9, &dcfg).unwrap();
    let mcfg = ModelCfg {
        channel_plan: vec![4, 8],
        embed_dim: 8,
        input_h: 16,
        input_w: 8,
        ..ModelCfg::default()
    };
    let tcfg = TrainCfg {
        epochs: 2,
        seed: 9,
        ..TrainCfg::default()
    };

    // identical seeds -> byte-identical checkpoints
    let (m1, s1, _) = train(mcfg.clone(), &data, &tcfg).unwrap();
    let (m2, s2, _) = train(mcfg.clone(), &data, &tcfg).unwrap();
    let ck1 = dir.path().join("a.ckpt");
    let ck2 = dir.path().join("b.ckpt");
    save_checkpoint(&ck1, &m1, &s1).unwrap();
    save_checkpoint(&ck2, &m2, &s2).unwrap();
    let ckpt_identical = std::fs::read(&ck1).unwrap() == std::fs::read(&ck2).unwrap();

    // checkpoint save -> load -> save is bit-exact
    let (m3, s3) = load_checkpoint(&ck1, &mcfg).unwrap();
    let ck3 = dir.path().join("c.ckpt");
    save_checkpoint(&ck3, &m3, &s3).unwrap();
    let ckpt_roundtrip = std::fs::read(&ck1).unwrap() == std::fs::read(&ck3).unwrap();

    // identical seeds -> byte-identical eval CSVs
    let ecfg = EvalCfg {
        seed: 9,
        ..EvalCfg::default()
    };
    let csv1 = dir.path().join("a.csv");
    let csv2 = dir.path().join("b.csv");
    write_eval_csv(&csv1, &gallery_sweep(&data, &m1, &ecfg).unwrap()).unwrap();
    write_eval_csv(&csv2, &gallery_sweep(&data, &m2, &ecfg).unwrap()).unwrap();
    let csv_identical = std::fs::read(&csv1).unwrap() == std::fs::read(&csv2).unwrap();

    // dataset save/load round-trip is bit-exact
    let ddir = dir.path().join("dataset");
    save_dataset(&data, &ddir).unwrap();
    let reloaded = load_dataset(&ddir).unwrap();
    let dataset_roundtrip = reloaded == data;

    let ok = ckpt_identical && ckpt_roundtrip && csv_identical && dataset_roundtrip;
    report(
        9,
        "determinism and round-trips",
        ok,
        &format!(
            "checkpoints byte-identical: {ckpt_identical}; checkpoint round-trip bit-exact: {ckpt_roundtrip}; eval CSVs byte-identical: {csv_identical}; dataset round-trip bit-exact: {dataset_roundtrip}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. detector-noise sensitivity

#[test]
fn criterion_10_detector_noise_sensitivity() {
    let mut lines = Vec::new();
    let mut ok = true;
    for &seed in &TREND_SEEDS {
        let entry = trained(seed, Variant::TwoStreamOfe, MaskMode::Instance);
        let data = dataset(seed);
        let clean = entry.1;
        let noisy_cfg = EvalCfg {
            seed,
            noise: DetectorNoiseCfg {
                jitter_sigma: 0.1,
                miss_rate: 0.2,
                ..DetectorNoiseCfg::default()
            },
            ..EvalCfg::default()
        };
        let noisy = evaluate(&data, &entry.0, 0, &noisy_cfg).unwrap().search_map;
        ok &= clean > noisy;
        lines.push(format!("seed {seed}: {clean:.4} > {noisy:.4}"));
    }
    report(
        10,
        "detector-noise sensitivity",
        ok,
        &format!(
            "zero-noise mAP strictly exceeds mAP at jitter 0.1 / miss 0.2 on each seed ({})",
            lines.join("; ")
        ),
    );
}
