//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.txt        MGTSDATA1 header, seed and generator config
//! <dir>/images/scene_NNNNN.ppm   binary PPM (P6, 8-bit)
//! <dir>/masks/scene_NNNNN.pgm    binary PGM (P5, labels as 8-bit values)
//! <dir>/annotations.txt     one line per annotation: scene x1 y1 x2 y2 id|?
//! <dir>/splits.txt          train/test scene index lists
//! <dir>/probes.txt          scene-index annotation-index pairs
//! <dir>/galleries.txt       probe-index size scene-indices...
//! ```
//!
//! Images are quantized to the 1/255 grid at generation time, so save/load
//! round-trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Annotation, DatasetCfg, DatasetSplit, PersonId, Probe, Scene};
use crate::error::{Error, Result};
use crate::geometry::{Box, Grid};
use crate::masking::InstanceMask;

pub const FORMAT_VERSION: &str = "MGTSDATA1";

fn perr(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn write_ppm(path: &Path, img: &Grid) -> Result<()> {
    assert_eq!(img.channels, 3);
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                buf.push((img.at(c, y, x) * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_pnm_header<'a>(
    path: &Path,
    data: &'a [u8],
    magic: &str,
) -> Result<(usize, usize, &'a [u8])> {
    // header: magic, width, height, maxval as whitespace-separated tokens,
    // then a single whitespace byte before the binary payload
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(perr(path, 1, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1; // single whitespace after maxval
    if tokens[0] != magic {
        return Err(perr(path, 1, format!("expected {magic}, got {}", tokens[0])));
    }
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| perr(path, 1, "bad width"))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| perr(path, 1, "bad height"))?;
    if tokens[3] != "255" {
        return Err(perr(path, 1, "only maxval 255 is supported"));
    }
    if pos > data.len() {
        return Err(perr(path, 1, "missing payload"));
    }
    Ok((w, h, &data[pos..]))
}

pub fn read_ppm(path: &Path) -> Result<Grid> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let (w, h, payload) = read_pnm_header(path, &data, "P6")?;
    if payload.len() < 3 * w * h {
        return Err(perr(path, 1, "payload shorter than 3*w*h"));
    }
    let mut img = Grid::new(3, h, w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let b = payload[(y * w + x) * 3 + c];
                img.set(c, y, x, b as f64 / 255.0);
            }
        }
    }
    Ok(img)
}

pub fn write_pgm(path: &Path, mask: &InstanceMask) -> Result<()> {
    if mask.labels.iter().any(|&l| l > 255) {
        return Err(Error::Contract(
            "PGM mask format supports at most 255 instances".into(),
        ));
    }
    let mut buf = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    buf.extend(mask.labels.iter().map(|&l| l as u8));
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<InstanceMask> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let (w, h, payload) = read_pnm_header(path, &data, "P5")?;
    if payload.len() < w * h {
        return Err(perr(path, 1, "payload shorter than w*h"));
    }
    Ok(InstanceMask {
        height: h,
        width: w,
        labels: payload[..w * h].iter().map(|&b| b as u32).collect(),
    })
}

fn scene_name(i: usize) -> String {
    format!("scene_{i:05}")
}

fn cfg_kv(cfg: &DatasetCfg) -> Vec<(String, String)> {
    let sizes: Vec<String> = cfg.gallery_sizes.iter().map(|s| s.to_string()).collect();
    vec![
        ("image_w".into(), cfg.image_w.to_string()),
        ("image_h".into(), cfg.image_h.to_string()),
        ("num_identities".into(), cfg.num_identities.to_string()),
        ("num_scenes".into(), cfg.num_scenes.to_string()),
        ("persons_min".into(), cfg.persons_min.to_string()),
        ("persons_max".into(), cfg.persons_max.to_string()),
        ("unlabeled_frac".into(), cfg.unlabeled_frac.to_string()),
        ("occlusion_prob".into(), cfg.occlusion_prob.to_string()),
        ("noise_level".into(), cfg.noise_level.to_string()),
        ("clutter_max".into(), cfg.clutter_max.to_string()),
        ("train_frac".into(), cfg.train_frac.to_string()),
        ("num_probes".into(), cfg.num_probes.to_string()),
        ("gallery_sizes".into(), sizes.join(",")),
        ("identity_disjoint".into(), cfg.identity_disjoint.to_string()),
    ]
}

fn cfg_from_kv(path: &Path, kv: &[(usize, String, String)]) -> Result<DatasetCfg> {
    let mut cfg = DatasetCfg::default();
    for (line, k, v) in kv {
        let bad = |what: &str| perr(path, *line, format!("bad {what}: {v}"));
        match k.as_str() {
            "image_w" => cfg.image_w = v.parse().map_err(|_| bad("image_w"))?,
            "image_h" => cfg.image_h = v.parse().map_err(|_| bad("image_h"))?,
            "num_identities" => cfg.num_identities = v.parse().map_err(|_| bad("num_identities"))?,
            "num_scenes" => cfg.num_scenes = v.parse().map_err(|_| bad("num_scenes"))?,
            "persons_min" => cfg.persons_min = v.parse().map_err(|_| bad("persons_min"))?,
            "persons_max" => cfg.persons_max = v.parse().map_err(|_| bad("persons_max"))?,
            "unlabeled_frac" => cfg.unlabeled_frac = v.parse().map_err(|_| bad("unlabeled_frac"))?,
            "occlusion_prob" => cfg.occlusion_prob = v.parse().map_err(|_| bad("occlusion_prob"))?,
            "noise_level" => cfg.noise_level = v.parse().map_err(|_| bad("noise_level"))?,
            "clutter_max" => cfg.clutter_max = v.parse().map_err(|_| bad("clutter_max"))?,
            "train_frac" => cfg.train_frac = v.parse().map_err(|_| bad("train_frac"))?,
            "num_probes" => cfg.num_probes = v.parse().map_err(|_| bad("num_probes"))?,
            "gallery_sizes" => {
                cfg.gallery_sizes = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("gallery_sizes"))?;
            }
            "identity_disjoint" => {
                cfg.identity_disjoint = v.parse().map_err(|_| bad("identity_disjoint"))?
            }
            "seed" => {}
            other => {
                return Err(perr(path, *line, format!("unknown manifest key '{other}'")));
            }
        }
    }
    Ok(cfg)
}

/// Write the dataset directory; overwrites existing files.
pub fn save_dataset(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;

    let mut manifest = format!("{FORMAT_VERSION}\nseed={}\n", split.seed);
    for (k, v) in cfg_kv(&split.cfg) {
        manifest.push_str(&format!("{k}={v}\n"));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;

    let mut ann = String::new();
    for (si, scene) in split.scenes.iter().enumerate() {
        write_ppm(
            &dir.join("images").join(format!("{}.ppm", scene_name(si))),
            &scene.image,
        )?;
        write_pgm(
            &dir.join("masks").join(format!("{}.pgm", scene_name(si))),
            &scene.mask,
        )?;
        for a in &scene.annotations {
            let id = match a.id {
                PersonId::Labeled(id) => id.to_string(),
                PersonId::Unlabeled => "?".to_string(),
            };
            ann.push_str(&format!(
                "{} {} {} {} {} {}\n",
                scene_name(si),
                a.bbox.x1,
                a.bbox.y1,
                a.bbox.x2,
                a.bbox.y2,
                id
            ));
        }
    }
    fs::write(dir.join("annotations.txt"), ann)?;

    let fmt_list = |v: &[usize]| {
        v.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    fs::write(
        dir.join("splits.txt"),
        format!(
            "train {}\ntest {}\n",
            fmt_list(&split.train),
            fmt_list(&split.test)
        ),
    )?;

    let mut probes = String::new();
    for p in &split.probes {
        probes.push_str(&format!("{} {}\n", p.scene, p.ann));
    }
    fs::write(dir.join("probes.txt"), probes)?;

    let mut gal = fs::File::create(dir.join("galleries.txt"))?;
    for (pi, subsets) in split.galleries.iter().enumerate() {
        for (gi, subset) in subsets.iter().enumerate() {
            writeln!(
                gal,
                "{} {} {}",
                pi,
                split.cfg.gallery_sizes[gi],
                fmt_list(subset)
            )?;
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

/// Load a dataset directory written by [`save_dataset`] (or by hand).
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let mpath = dir.join("manifest.txt");
    let lines = read_lines(&mpath)?;
    if lines.is_empty() || lines[0].1.trim() != FORMAT_VERSION {
        return Err(perr(&mpath, 1, format!("expected {FORMAT_VERSION} header")));
    }
    let mut kv = Vec::new();
    let mut seed = 0u64;
    for (ln, line) in &lines[1..] {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(&mpath, *ln, "expected key=value"))?;
        if k == "seed" {
            seed = v
                .parse()
                .map_err(|_| perr(&mpath, *ln, "bad seed"))?;
        }
        kv.push((*ln, k.to_string(), v.to_string()));
    }
    let cfg = cfg_from_kv(&mpath, &kv)?;

    // annotations, grouped by scene name
    let apath = dir.join("annotations.txt");
    let mut anns: std::collections::HashMap<String, Vec<Annotation>> =
        std::collections::HashMap::new();
    if apath.exists() {
        for (ln, line) in read_lines(&apath)? {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 {
                return Err(perr(&apath, ln, "expected: scene x1 y1 x2 y2 id"));
            }
            let coords: Vec<f64> = parts[1..5]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(&apath, ln, "bad box coordinate"))?;
            let id = if parts[5] == "?" {
                PersonId::Unlabeled
            } else {
                PersonId::Labeled(
                    parts[5]
                        .parse()
                        .map_err(|_| perr(&apath, ln, "bad identity"))?,
                )
            };
            let bbox = Box::new(coords[0], coords[1], coords[2], coords[3])
                .map_err(|e| perr(&apath, ln, e.to_string()))?;
            anns.entry(parts[0].to_string())
                .or_default()
                .push(Annotation { bbox, id });
        }
    }

    let mut scenes = Vec::with_capacity(cfg.num_scenes);
    for si in 0..cfg.num_scenes {
        let name = scene_name(si);
        let image = read_ppm(&dir.join("images").join(format!("{name}.ppm")))?;
        let mask = read_pgm(&dir.join("masks").join(format!("{name}.pgm")))?;
        scenes.push(Scene {
            image,
            mask,
            annotations: anns.remove(&name).unwrap_or_default(),
        });
    }

    let spath = dir.join("splits.txt");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ln, line) in read_lines(&spath)? {
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap_or("");
        let idx: Vec<usize> = it
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr(&spath, ln, "bad scene index"))?;
        match tag {
            "train" => train = idx,
            "test" => test = idx,
            other => return Err(perr(&spath, ln, format!("unknown split tag '{other}'"))),
        }
    }

    let ppath = dir.join("probes.txt");
    let mut probes = Vec::new();
    if ppath.exists() {
        for (ln, line) in read_lines(&ppath)? {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(perr(&ppath, ln, "expected: scene_index ann_index"));
            }
            let scene = parts[0]
                .parse()
                .map_err(|_| perr(&ppath, ln, "bad scene index"))?;
            let ann = parts[1]
                .parse()
                .map_err(|_| perr(&ppath, ln, "bad annotation index"))?;
            probes.push(Probe { scene, ann });
        }
    }

    let gpath = dir.join("galleries.txt");
    let mut galleries: Vec<Vec<Vec<usize>>> =
        vec![Vec::new(); probes.len()];
    if gpath.exists() {
        for (ln, line) in read_lines(&gpath)? {
            let parts: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(&gpath, ln, "bad index"))?;
            if parts.len() < 3 {
                return Err(perr(&gpath, ln, "expected: probe size scenes..."));
            }
            let pi = parts[0];
            if pi >= galleries.len() {
                return Err(perr(&gpath, ln, format!("probe index {pi} out of range")));
            }
            galleries[pi].push(parts[2..].to_vec());
        }
    }

    Ok(DatasetSplit {
        seed,
        cfg,
        scenes,
        train,
        test,
        probes,
        galleries,
    })
}
