//! Command-line workbench: data generation, training, evaluation, ablation
//! tables, gamma and gallery sweeps, SE inspection, and a self-test.
//!
//! Every command is reproducible from (config, seed): outputs are written
//! with deterministic bytes, and the effective merged config is echoed into
//! the output directory as `config.txt`.

use clap::{Parser, Subcommand};
use mgts::config::{self, RunConfig};
use mgts::diffcore::{grad_check, Tape, Tensor};
use mgts::error::{Error, Result};
use mgts::evalkit::{self, report, EvalReport};
use mgts::geometry::{iou, nms, Box};
use mgts::oimloss::{oim_probs, OimState};
use mgts::reidnet::{
    load_checkpoint, save_checkpoint, train, MgtsModel, TrainCfg, Variant,
};
use mgts::rng::Rng;
use mgts::synthdata::{gen_dataset, load_dataset, save_dataset, DatasetCfg, DatasetSplit};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "mgts", version, about = "Mask-guided two-stream person search workbench")]
struct Cli {
    /// Key=value config file; defaults apply for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Checkpoint path (written by train, read by eval/sweeps/inspect-se).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Override the model variant (O, F, B, O+E, B+E, O+F+E).
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Override the gallery size list.
    #[arg(long, global = true, value_delimiter = ',')]
    gallery_sizes: Option<Vec<usize>>,
    /// Gamma values; a single value overrides eval.gamma, a list drives
    /// sweep-gamma.
    #[arg(long, global = true, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset and write it to --out.
    GenData,
    /// Train a model and write a checkpoint plus a loss log.
    Train,
    /// Evaluate a checkpoint at every configured gallery size.
    Eval,
    /// Train and evaluate all six model variants with one seed.
    Ablate,
    /// Train and evaluate one model per gamma value.
    SweepGamma,
    /// Evaluate a checkpoint across gallery sizes and chart the trend.
    SweepGallery,
    /// SE channel-weight statistics of a trained two-stream model.
    InspectSe,
    /// Run fast oracle cross-checks; exits nonzero on any mismatch.
    Selftest,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &cli.variant {
        cfg.model.variant = Variant::parse(v)?;
    }
    if let Some(sizes) = &cli.gallery_sizes {
        cfg.dataset.gallery_sizes = sizes.clone();
    }
    if let Some(gammas) = &cli.gamma {
        if gammas.len() == 1 {
            cfg.eval_gamma = gammas[0];
        } else if !matches!(cli.cmd, Cmd::SweepGamma) {
            return Err(Error::Config(
                "--gamma accepts one value here; lists are for sweep-gamma".into(),
            ));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    config::save(&out.join("config.txt"), cfg)
}

fn checkpoint_path(cli: &Cli) -> PathBuf {
    cli.checkpoint
        .clone()
        .unwrap_or_else(|| cli.out.join("model.ckpt"))
}

fn run(cli: Cli) -> Result<()> {
    if matches!(cli.cmd, Cmd::Selftest) {
        return selftest();
    }
    let cfg = effective_config(&cli)?;
    prepare_out(&cli.out, &cfg)?;
    match cli.cmd {
        Cmd::GenData => gen_data(&cli, &cfg),
        Cmd::Train => cmd_train(&cli, &cfg),
        Cmd::Eval => cmd_eval(&cli, &cfg),
        Cmd::Ablate => cmd_ablate(&cli, &cfg),
        Cmd::SweepGamma => cmd_sweep_gamma(&cli, &cfg),
        Cmd::SweepGallery => cmd_sweep_gallery(&cli, &cfg),
        Cmd::InspectSe => cmd_inspect_se(&cli, &cfg),
        Cmd::Selftest => unreachable!(),
    }
}

fn dataset(cfg: &RunConfig) -> Result<DatasetSplit> {
    gen_dataset(cfg.seed, &cfg.dataset)
}

fn gen_data(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg)?;
    let dir = cli.out.join("dataset");
    save_dataset(&data, &dir)?;
    println!(
        "dataset: {} scenes ({} train / {} test), {} probes -> {}",
        data.scenes.len(),
        data.train.len(),
        data.test.len(),
        data.probes.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg)?;
    let (model, state, log) = train(cfg.model.clone(), &data, &cfg.train_cfg())?;
    let ckpt = checkpoint_path(cli);
    save_checkpoint(&ckpt, &model, &state)?;

    let mut s = String::from("# schema: mgts-train-loss-v1\nepoch,mean_loss\n");
    for (e, l) in log.epoch_mean_loss.iter().enumerate() {
        let _ = writeln!(s, "{e},{l:.6}");
    }
    std::fs::write(cli.out.join("train_loss.csv"), s)?;
    for (e, l) in log.epoch_mean_loss.iter().enumerate() {
        println!("epoch {e}: mean loss {l:.4}");
    }
    if log.skipped > 0 {
        println!("skipped {} degenerate samples", log.skipped);
    }
    println!("checkpoint -> {}", ckpt.display());
    Ok(())
}

fn eval_all_sizes(cfg: &RunConfig, model: &MgtsModel) -> Result<(DatasetSplit, Vec<EvalReport>)> {
    let data = dataset(cfg)?;
    let reports = evalkit::gallery_sweep(&data, model, &cfg.eval_cfg())?;
    Ok((data, reports))
}

fn cmd_eval(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let (model, _) = load_checkpoint(&checkpoint_path(cli), &cfg.model)?;
    let (_, reports) = eval_all_sizes(cfg, &model)?;
    report::write_eval_csv(&cli.out.join("eval.csv"), &reports)?;
    report::write_probe_csv(&cli.out.join("probe_ap.csv"), &reports)?;
    for r in &reports {
        println!(
            "gallery {}: det AP {:.4} recall {:.4} | search mAP {:.4}",
            r.gallery_size, r.detection_ap, r.detection_recall, r.search_map
        );
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg)?;
    let mut s = String::from("# schema: mgts-ablate-v1\nvariant,search_map,cmc_top1\n");
    for variant in Variant::all() {
        let mut mcfg = cfg.model.clone();
        mcfg.variant = variant;
        let (model, _, _) = train(mcfg, &data, &cfg.train_cfg())?;
        let rep = evalkit::evaluate(&data, &model, 0, &cfg.eval_cfg())?;
        let top1 = rep
            .cmc
            .iter()
            .find(|&&(k, _)| k == 1)
            .map(|&(_, v)| v)
            .unwrap_or(0.0);
        let _ = writeln!(s, "{},{:.6},{:.6}", variant.label(), rep.search_map, top1);
        println!(
            "{:>6}: mAP {:.4} top-1 {:.4}",
            variant.label(),
            rep.search_map,
            top1
        );
    }
    std::fs::write(cli.out.join("ablate.csv"), s)?;
    Ok(())
}

fn cmd_sweep_gamma(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let gammas = cli
        .gamma
        .clone()
        .unwrap_or_else(|| vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5]);
    let data = dataset(cfg)?;
    let mut s = String::from("# schema: mgts-gamma-sweep-v1\ngamma,search_map,cmc_top1\n");
    let mut points = Vec::new();
    for &gamma in &gammas {
        let mut run = cfg.clone();
        run.eval_gamma = gamma;
        // masking and cropping depend on gamma at train time as well
        let (model, _, _) = train(run.model.clone(), &data, &run.train_cfg())?;
        let rep = evalkit::evaluate(&data, &model, 0, &run.eval_cfg())?;
        let top1 = rep
            .cmc
            .iter()
            .find(|&&(k, _)| k == 1)
            .map(|&(_, v)| v)
            .unwrap_or(0.0);
        let _ = writeln!(s, "{gamma},{:.6},{:.6}", rep.search_map, top1);
        println!("gamma {gamma}: mAP {:.4} top-1 {top1:.4}", rep.search_map);
        points.push((gamma, rep.search_map));
    }
    std::fs::write(cli.out.join("gamma_sweep.csv"), s)?;
    report::write_line_svg(
        &cli.out.join("gamma_sweep.svg"),
        &points,
        "search mAP vs expansion ratio",
        "gamma",
        "mAP",
    )
}

fn cmd_sweep_gallery(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let (model, _) = load_checkpoint(&checkpoint_path(cli), &cfg.model)?;
    let (_, reports) = eval_all_sizes(cfg, &model)?;
    report::write_eval_csv(&cli.out.join("gallery_sweep.csv"), &reports)?;
    let points: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| (r.gallery_size as f64, r.search_map))
        .collect();
    report::write_line_svg(
        &cli.out.join("gallery_sweep.svg"),
        &points,
        "search mAP vs gallery size",
        "gallery size",
        "mAP",
    )?;
    for r in &reports {
        println!("gallery {}: mAP {:.4}", r.gallery_size, r.search_map);
    }
    Ok(())
}

fn cmd_inspect_se(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let (model, _) = load_checkpoint(&checkpoint_path(cli), &cfg.model)?;
    let data = dataset(cfg)?;
    let stats = evalkit::inspect_se(&data, &model, &cfg.eval_cfg())?;
    report::write_se_csv(&cli.out.join("se_stats.csv"), &stats)?;
    report::write_histogram_svg(
        &cli.out.join("se_histogram.svg"),
        &stats.histogram,
        "F-stream channels among top-20 weights",
    )?;
    let n = stats.samples.len();
    let f_wins = stats
        .samples
        .iter()
        .filter(|s| s.avg_f > s.avg_o)
        .count();
    let f_majority = stats.samples.iter().filter(|s| s.n20f > 10).count();
    println!(
        "{} samples, Avg(F) > Avg(O) on {} ({:.1}%), N20F > 10 on {} ({:.1}%)",
        n,
        f_wins,
        100.0 * f_wins as f64 / n.max(1) as f64,
        f_majority,
        100.0 * f_majority as f64 / n.max(1) as f64
    );
    Ok(())
}

fn check(name: &str, ok: bool) -> Result<()> {
    if ok {
        println!("ok   {name}");
        Ok(())
    } else {
        println!("FAIL {name}");
        Err(Error::Contract(format!("selftest: {name}")))
    }
}

/// Fast cross-checks of the numeric core against independent oracles.
fn selftest() -> Result<()> {
    // autodiff vs central differences on a small composite
    let mut rng = Rng::new(1);
    let f = Tensor::new(vec![2, 3, 4], (0..24).map(|_| rng.range(0.1, 1.0)).collect())?;
    let w = Tensor::new(vec![2], vec![rng.range(0.2, 1.0), rng.range(0.2, 1.0)])?;
    let err = grad_check(
        |ins| {
            let mut tape = Tape::new();
            let f = tape.leaf(&ins[0], true);
            let w = tape.leaf(&ins[1], true);
            let scaled = tape.channel_scale(f, w)?;
            let gap = tape.global_average_pool(scaled)?;
            let act = tape.sigmoid(gap);
            let norm = tape.l2_normalize(act)?;
            let row = tape.reshape(norm, vec![1, 2])?;
            let ones = tape.leaf(&Tensor::new(vec![2, 1], vec![1.0, 1.0])?, false);
            let out = tape.matmul(row, ones)?;
            tape.backward(out)?;
            Ok((
                tape.data(out)[0],
                vec![tape.grad(f).unwrap(), tape.grad(w).unwrap()],
            ))
        },
        &[f, w],
        1e-5,
    )?;
    check("gradients match finite differences", err < 1e-4)?;

    // nms vs brute-force greedy oracle
    let mut all_ok = true;
    for seed in 0..10u64 {
        let mut rng = Rng::new(seed);
        let boxes: Vec<Box> = (0..6)
            .map(|_| {
                let x = rng.range(0.0, 40.0);
                let y = rng.range(0.0, 40.0);
                Box::new(x, y, x + rng.range(5.0, 20.0), y + rng.range(5.0, 20.0))
                    .unwrap()
                    .with_score(rng.unit())
            })
            .collect();
        let kept = nms(&boxes, 0.45)?;
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        order.sort_by(|&a, &b| {
            boxes[b]
                .score
                .partial_cmp(&boxes[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut oracle: Vec<Box> = Vec::new();
        for &i in &order {
            if oracle.iter().all(|k| iou(k, &boxes[i]) <= 0.45) {
                oracle.push(boxes[i]);
            }
        }
        all_ok &= kept == oracle;
    }
    check("nms matches brute-force oracle", all_ok)?;

    // average precision hand cases
    let ap1 = evalkit::ap_oracle(&[true, false, true], 2)?;
    let ap2 = evalkit::ap_oracle(&[false, true], 1)?;
    check(
        "average precision hand cases",
        (ap1 - 5.0 / 6.0).abs() < 1e-15 && ap2 == 0.5,
    )?;

    // softmax-with-temperature two-class case
    let mut state = OimState::new(2, 2, 4, 1.0, 0.5)?;
    state.set_lut_row(1, vec![1.0, 0.0]);
    state.set_lut_row(2, vec![0.0, 1.0]);
    let p = oim_probs(&[1.0, 0.0], &state)?;
    let e = std::f64::consts::E;
    check(
        "instance-matching softmax hand case",
        (p[0] - e / (e + 1.0)).abs() < 1e-12,
    )?;

    // dataset save/load round-trip
    let dcfg = DatasetCfg {
        num_identities: 4,
        num_scenes: 12,
        num_probes: 3,
        gallery_sizes: vec![3],
        ..DatasetCfg::default()
    };
    let data = gen_dataset(5, &dcfg)?;
    let dir = std::env::temp_dir().join(format!("mgts-selftest-{}", std::process::id()));
    let result = (|| -> Result<bool> {
        save_dataset(&data, &dir)?;
        let back = load_dataset(&dir)?;
        Ok(back == data)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    check("dataset round-trip is lossless", result?)?;

    // checkpoint round-trip and corruption detection
    let mcfg = mgts::reidnet::ModelCfg {
        channel_plan: vec![4, 8],
        embed_dim: 8,
        se_reduction: 4,
        input_h: 16,
        input_w: 8,
        ..Default::default()
    };
    let model = MgtsModel::new(mcfg.clone(), 2)?;
    let state = OimState::new(3, 8, 4, 1.0 / 30.0, 0.5)?;
    let ckpt = std::env::temp_dir().join(format!("mgts-selftest-{}.ckpt", std::process::id()));
    let result = (|| -> Result<bool> {
        save_checkpoint(&ckpt, &model, &state)?;
        let (m2, s2) = load_checkpoint(&ckpt, &mcfg)?;
        let same = s2 == state
            && model
                .named_params()
                .iter()
                .zip(m2.named_params())
                .all(|((_, a), (_, b))| a.value == b.value);
        let mut bytes = std::fs::read(&ckpt)?;
        bytes[20] ^= 0xFF;
        std::fs::write(&ckpt, &bytes)?;
        Ok(same && load_checkpoint(&ckpt, &mcfg).is_err())
    })();
    let _ = std::fs::remove_file(&ckpt);
    check("checkpoint round-trip and corruption detection", result?)?;

    // short training run decreases the loss
    let tcfg = TrainCfg {
        epochs: 3,
        ..TrainCfg::default()
    };
    let mcfg = mgts::reidnet::ModelCfg {
        channel_plan: vec![4, 8],
        embed_dim: 8,
        se_reduction: 4,
        input_h: 16,
        input_w: 8,
        ..Default::default()
    };
    let (_, _, log) = train(mcfg, &data, &tcfg)?;
    check(
        "training loss decreases",
        *log.epoch_mean_loss.last().unwrap() < log.epoch_mean_loss[0],
    )?;

    println!("selftest passed");
    Ok(())
}
