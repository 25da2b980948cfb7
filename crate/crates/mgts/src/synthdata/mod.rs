//! Deterministic synthetic scene generator.
//!
//! Renders identity-colored figures (ellipse body + head) onto a procedural
//! background with colored clutter, producing ground-truth boxes, identity
//! labels and instance masks. (seed, cfg) fully determines every byte of the
//! dataset. Pixel values are quantized to the 1/255 grid at generation time
//! so the on-disk 8-bit format round-trips exactly.

mod io;

pub use io::{load_dataset, save_dataset};

use crate::error::{Error, Result};
use crate::geometry::{Box, Grid};
use crate::masking::{Image, InstanceMask};
use crate::par::map_indexed;
use crate::rng::Rng;

/// Minimum visible pixels a figure must keep for its annotation to exist;
/// placement retries until occlusion leaves at least this many.
const MIN_VISIBLE: usize = 24;
const PLACEMENT_RETRIES: usize = 200;

/// Labeled identity id or the unlabeled marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PersonId {
    Labeled(u32),
    Unlabeled,
}

/// Deterministic appearance vector for a figure: body color, secondary
/// (head) color, size scale.
#[derive(Debug, Clone, Copy)]
pub struct Appearance {
    pub body: [f64; 3],
    pub head: [f64; 3],
    pub scale: f64,
}

fn quant(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

impl Appearance {
    /// Appearance is a pure function of (dataset seed, labeled id).
    pub fn for_identity(dataset_seed: u64, id: u32) -> Appearance {
        let mut rng = Rng::new(Rng::subseed(dataset_seed, 0x1D00_0000 + id as u64));
        Appearance::sample(&mut rng)
    }

    pub fn sample(rng: &mut Rng) -> Appearance {
        Appearance {
            body: [quant(rng.unit()), quant(rng.unit()), quant(rng.unit())],
            head: [quant(rng.unit()), quant(rng.unit()), quant(rng.unit())],
            scale: rng.range(0.85, 1.15),
        }
    }
}

/// A ground-truth person annotation; the box is the tight bounding box of the
/// figure's visible mask pixels, and annotation index i corresponds to mask
/// label i+1.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub bbox: Box,
    pub id: PersonId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub mask: InstanceMask,
    pub annotations: Vec<Annotation>,
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCfg {
    pub image_w: usize,
    pub image_h: usize,
    pub num_identities: usize,
    pub num_scenes: usize,
    pub persons_min: usize,
    pub persons_max: usize,
    pub unlabeled_frac: f64,
    pub occlusion_prob: f64,
    pub noise_level: f64,
    pub clutter_max: usize,
    pub train_frac: f64,
    pub num_probes: usize,
    pub gallery_sizes: Vec<usize>,
    pub identity_disjoint: bool,
}

impl Default for DatasetCfg {
    fn default() -> Self {
        DatasetCfg {
            image_w: 96,
            image_h: 64,
            num_identities: 32,
            num_scenes: 200,
            persons_min: 2,
            persons_max: 4,
            unlabeled_frac: 0.2,
            occlusion_prob: 0.25,
            noise_level: 0.08,
            clutter_max: 16,
            train_frac: 0.5,
            num_probes: 60,
            gallery_sizes: vec![10, 20, 40],
            identity_disjoint: false,
        }
    }
}

impl DatasetCfg {
    pub fn validate(&self) -> Result<()> {
        if self.image_w < 32 || self.image_h < 32 {
            return Err(Error::Config("image must be at least 32x32".into()));
        }
        if self.persons_min > self.persons_max {
            return Err(Error::Config("persons_min > persons_max".into()));
        }
        for p in [self.unlabeled_frac, self.occlusion_prob, self.train_frac] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0,1]")));
            }
        }
        if self.noise_level < 0.0 {
            return Err(Error::Config("noise_level must be >= 0".into()));
        }
        if self.gallery_sizes.is_empty() {
            return Err(Error::Config("gallery_sizes must be non-empty".into()));
        }
        Ok(())
    }
}

/// Probe reference: scene index + annotation index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub scene: usize,
    pub ann: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub seed: u64,
    pub cfg: DatasetCfg,
    pub scenes: Vec<Scene>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub probes: Vec<Probe>,
    /// galleries[probe][size_index] = scene indices (length = gallery_sizes[size_index])
    pub galleries: Vec<Vec<Vec<usize>>>,
}

impl DatasetSplit {
    pub fn annotation(&self, p: Probe) -> &Annotation {
        &self.scenes[p.scene].annotations[p.ann]
    }
}

/// One figure to render.
#[derive(Debug, Clone)]
struct FigureSpec {
    id: PersonId,
    appearance: Appearance,
}

fn draw_ellipse(
    img: &mut Image,
    mask: Option<(&mut InstanceMask, u32)>,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [f64; 3],
) {
    let (h, w) = (img.height, img.width);
    let y0 = ((cy - ry).floor().max(0.0)) as usize;
    let y1 = ((cy + ry).ceil().min(h as f64)) as usize;
    let x0 = ((cx - rx).floor().max(0.0)) as usize;
    let x1 = ((cx + rx).ceil().min(w as f64)) as usize;
    let mut mask = mask;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                for (c, &v) in color.iter().enumerate() {
                    img.set(c, y, x, v);
                }
                if let Some((m, label)) = mask.as_mut() {
                    m.set(y, x, *label);
                }
            }
        }
    }
}

/// Figure footprint used for placement checks; mirrors the body + head
/// ellipses drawn in `render_figure`.
struct Footprint {
    cx: f64,
    cy: f64,
    body_rx: f64,
    body_ry: f64,
    head_cy: f64,
    head_r: f64,
}

impl Footprint {
    fn new(cx: f64, cy: f64, scale: f64) -> Footprint {
        Footprint {
            cx,
            cy,
            body_rx: 5.0 * scale,
            body_ry: 9.0 * scale,
            head_cy: cy - 12.0 * scale,
            head_r: 3.2 * scale,
        }
    }

    fn covers(&self, x: usize, y: usize) -> bool {
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let dx = (px - self.cx) / self.body_rx;
        let dy = (py - self.cy) / self.body_ry;
        if dx * dx + dy * dy <= 1.0 {
            return true;
        }
        let hx = (px - self.cx) / self.head_r;
        let hy = (py - self.head_cy) / self.head_r;
        hx * hx + hy * hy <= 1.0
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.body_rx,
            self.head_cy - self.head_r,
            self.cx + self.body_rx,
            self.cy + self.body_ry,
        )
    }
}

// body then head so the head overdraws the top of the body
fn render_figure_masked(
    img: &mut Image,
    mask: &mut InstanceMask,
    label: u32,
    fp: &Footprint,
    app: &Appearance,
) {
    draw_ellipse(
        img,
        Some((mask, label)),
        fp.cx,
        fp.cy,
        fp.body_rx,
        fp.body_ry,
        app.body,
    );
    draw_ellipse(
        img,
        Some((mask, label)),
        fp.cx,
        fp.head_cy,
        fp.head_r,
        fp.head_r,
        app.head,
    );
}

/// Render one scene from an explicit figure list; deterministic in `seed`.
fn render_scene(seed: u64, cfg: &DatasetCfg, figures: &[FigureSpec]) -> Result<Scene> {
    let mut rng = Rng::new(seed);
    let (h, w) = (cfg.image_h, cfg.image_w);
    let mut img = Grid::new(3, h, w);

    // background: vertical gradient between two colors
    let top = [rng.range(0.1, 0.9), rng.range(0.1, 0.9), rng.range(0.1, 0.9)];
    let bot = [rng.range(0.1, 0.9), rng.range(0.1, 0.9), rng.range(0.1, 0.9)];
    for y in 0..h {
        let t = y as f64 / (h - 1) as f64;
        for x in 0..w {
            for c in 0..3 {
                img.set(c, y, x, top[c] * (1.0 - t) + bot[c] * t);
            }
        }
    }
    // colored clutter blobs, person-like palette but never in the mask
    let n_clutter = if cfg.clutter_max > 0 {
        rng.below(cfg.clutter_max + 1)
    } else {
        0
    };
    for _ in 0..n_clutter {
        let color = [rng.unit(), rng.unit(), rng.unit()];
        let cx = rng.range(0.0, w as f64);
        let cy = rng.range(0.0, h as f64);
        let rx = rng.range(2.0, 9.0);
        let ry = rng.range(2.0, 9.0);
        draw_ellipse(&mut img, None, cx, cy, rx, ry, color);
    }
    // per-pixel noise
    if cfg.noise_level > 0.0 {
        for v in img.data.iter_mut() {
            *v = (*v + cfg.noise_level * (rng.unit() * 2.0 - 1.0)).clamp(0.0, 1.0);
        }
    }

    let mut mask = InstanceMask::new(h, w);
    let mut placed: Vec<Footprint> = Vec::new();
    let mut apps: Vec<Appearance> = Vec::new();

    for fig in figures {
        // per-instance jitter of the shared appearance
        let app = Appearance {
            body: [
                quant(fig.appearance.body[0] + rng.range(-0.06, 0.06)),
                quant(fig.appearance.body[1] + rng.range(-0.06, 0.06)),
                quant(fig.appearance.body[2] + rng.range(-0.06, 0.06)),
            ],
            head: fig.appearance.head,
            scale: fig.appearance.scale * rng.range(0.92, 1.08),
        };
        let allow_overlap = rng.unit() < cfg.occlusion_prob;
        let mut chosen: Option<Footprint> = None;
        for _ in 0..PLACEMENT_RETRIES {
            let scale = app.scale;
            let fp = Footprint::new(
                rng.range(8.0 * scale, w as f64 - 8.0 * scale),
                rng.range(14.0 * scale, h as f64 - 10.0 * scale),
                scale,
            );
            let (x0, y0, x1, y1) = fp.bounds();
            if x0 < 0.0 || y0 < 0.0 || x1 > w as f64 || y1 > h as f64 {
                continue;
            }
            let overlaps = placed.iter().any(|p| {
                let (ax0, ay0, ax1, ay1) = p.bounds();
                x0 < ax1 && ax0 < x1 && y0 < ay1 && ay0 < y1
            });
            if overlaps && !allow_overlap {
                continue;
            }
            if overlaps {
                // occluding is fine as long as every earlier figure keeps
                // enough visible pixels for its annotation
                let ok = (0..placed.len()).all(|i| {
                    let mut visible = 0usize;
                    for y in 0..h {
                        for x in 0..w {
                            if mask.at(y, x) == (i + 1) as u32 && !fp.covers(x, y) {
                                visible += 1;
                            }
                        }
                    }
                    visible >= MIN_VISIBLE
                });
                if !ok {
                    continue;
                }
            }
            chosen = Some(fp);
            break;
        }
        let fp = chosen.ok_or_else(|| {
            Error::Generation(format!(
                "could not place figure after {PLACEMENT_RETRIES} retries"
            ))
        })?;
        let label = (placed.len() + 1) as u32;
        render_figure_masked(&mut img, &mut mask, label, &fp, &app);
        placed.push(fp);
        apps.push(app);
    }

    // quantize to the 8-bit grid so file round-trips are exact
    for v in img.data.iter_mut() {
        *v = quant(*v);
    }

    // tight boxes over visible mask pixels; labels are compact by
    // construction since full occlusion is prevented during placement
    let mut annotations = Vec::with_capacity(figures.len());
    for (i, fig) in figures.iter().enumerate() {
        let label = (i + 1) as u32;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                if mask.at(y, x) == label {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                    count += 1;
                }
            }
        }
        if count < MIN_VISIBLE {
            return Err(Error::Generation(format!(
                "figure {label} lost too many pixels to occlusion"
            )));
        }
        annotations.push(Annotation {
            bbox: Box::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)?,
            id: fig.id,
        });
    }

    Ok(Scene {
        image: img,
        mask,
        annotations,
    })
}

/// Render a standalone scene: figure identities drawn at random from the cfg.
pub fn gen_scene(seed: u64, cfg: &DatasetCfg) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = Rng::new(Rng::subseed(seed, 0xF16));
    let n = cfg.persons_min + rng.below(cfg.persons_max - cfg.persons_min + 1);
    let figures: Vec<FigureSpec> = (0..n)
        .map(|_| {
            if cfg.num_identities > 0 && rng.unit() >= cfg.unlabeled_frac {
                let id = 1 + rng.below(cfg.num_identities) as u32;
                FigureSpec {
                    id: PersonId::Labeled(id),
                    appearance: Appearance::for_identity(seed, id),
                }
            } else {
                FigureSpec {
                    id: PersonId::Unlabeled,
                    appearance: Appearance::sample(&mut rng),
                }
            }
        })
        .collect();
    render_scene(Rng::subseed(seed, 0x5CE4E), cfg, &figures)
}

/// Generate the full train/test split with probes and gallery subsets.
pub fn gen_dataset(seed: u64, cfg: &DatasetCfg) -> Result<DatasetSplit> {
    cfg.validate()?;
    if cfg.num_identities < 2 {
        return Err(Error::Config("need at least 2 labeled identities".into()));
    }
    let n_train = ((cfg.num_scenes as f64) * cfg.train_frac).round() as usize;
    let n_test = cfg.num_scenes - n_train;
    if n_test < 2 || n_train < 1 {
        return Err(Error::Config("train/test split leaves too few scenes".into()));
    }
    let max_gallery = *cfg.gallery_sizes.iter().max().unwrap();
    if max_gallery > n_test - 1 {
        return Err(Error::Config(format!(
            "gallery size {max_gallery} exceeds available test scenes ({})",
            n_test - 1
        )));
    }

    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..cfg.num_scenes).collect();

    // identity pools per side
    let all_ids: Vec<u32> = (1..=cfg.num_identities as u32).collect();
    let (train_ids, test_ids): (Vec<u32>, Vec<u32>) = if cfg.identity_disjoint {
        let half = cfg.num_identities / 2;
        (
            all_ids[..half].to_vec(),
            all_ids[half..].to_vec(),
        )
    } else {
        (all_ids.clone(), all_ids.clone())
    };
    if cfg.identity_disjoint && (train_ids.is_empty() || test_ids.is_empty()) {
        return Err(Error::Config("too few identities for a disjoint split".into()));
    }

    let mut plan_rng = Rng::new(Rng::subseed(seed, 0x9147));
    let mut scene_figs: Vec<Vec<FigureSpec>> = vec![Vec::new(); cfg.num_scenes];

    // force each identity into >= 2 scenes on each side where it may appear
    let force = |ids: &[u32], side: &[usize], rng: &mut Rng, figs: &mut Vec<Vec<FigureSpec>>| {
        for &id in ids {
            let s1 = side[rng.below(side.len())];
            let mut s2 = side[rng.below(side.len())];
            let mut guard = 0;
            while s2 == s1 && guard < 64 {
                s2 = side[rng.below(side.len())];
                guard += 1;
            }
            for s in [s1, s2] {
                figs[s].push(FigureSpec {
                    id: PersonId::Labeled(id),
                    appearance: Appearance::for_identity(seed, id),
                });
            }
        }
    };
    force(&train_ids, &train, &mut plan_rng, &mut scene_figs);
    force(&test_ids, &test, &mut plan_rng, &mut scene_figs);

    // fill remaining slots
    for (si, figs) in scene_figs.iter_mut().enumerate() {
        let target =
            cfg.persons_min + plan_rng.below(cfg.persons_max - cfg.persons_min + 1);
        let pool = if train.contains(&si) { &train_ids } else { &test_ids };
        while figs.len() < target {
            if plan_rng.unit() < cfg.unlabeled_frac {
                figs.push(FigureSpec {
                    id: PersonId::Unlabeled,
                    appearance: Appearance::sample(&mut plan_rng),
                });
            } else {
                let id = pool[plan_rng.below(pool.len())];
                // avoid duplicating the same identity within one scene
                if figs.iter().any(|f| f.id == PersonId::Labeled(id)) {
                    figs.push(FigureSpec {
                        id: PersonId::Unlabeled,
                        appearance: Appearance::sample(&mut plan_rng),
                    });
                } else {
                    figs.push(FigureSpec {
                        id: PersonId::Labeled(id),
                        appearance: Appearance::for_identity(seed, id),
                    });
                }
            }
        }
        // de-dup forced identities that collided in one scene
        let mut seen = std::collections::HashSet::new();
        figs.retain(|f| match f.id {
            PersonId::Labeled(id) => seen.insert(id),
            PersonId::Unlabeled => true,
        });
    }

    // render all scenes; per-scene sub-seeds keep this order-independent
    let rendered: Vec<Result<Scene>> = map_indexed(cfg.num_scenes, |si| {
        render_scene(Rng::subseed(seed, 0x5000 + si as u64), cfg, &scene_figs[si])
    });
    let mut scenes = Vec::with_capacity(cfg.num_scenes);
    for r in rendered {
        scenes.push(r?);
    }

    // probe candidates: labeled annotations in test scenes whose identity
    // appears in at least 2 test scenes
    let mut test_count: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for &si in &test {
        let mut ids_here = std::collections::HashSet::new();
        for a in &scenes[si].annotations {
            if let PersonId::Labeled(id) = a.id {
                ids_here.insert(id);
            }
        }
        for id in ids_here {
            *test_count.entry(id).or_insert(0) += 1;
        }
    }
    let mut candidates: Vec<(u32, Probe)> = Vec::new();
    for &si in &test {
        for (ai, a) in scenes[si].annotations.iter().enumerate() {
            if let PersonId::Labeled(id) = a.id {
                if test_count.get(&id).copied().unwrap_or(0) >= 2 {
                    candidates.push((id, Probe { scene: si, ann: ai }));
                }
            }
        }
    }
    if candidates.len() < cfg.num_probes {
        return Err(Error::Config(format!(
            "requested {} probes but only {} eligible annotations",
            cfg.num_probes,
            candidates.len()
        )));
    }
    // round-robin over identities for diversity
    candidates.sort_by_key(|(id, p)| (*id, p.scene, p.ann));
    let mut by_id: std::collections::BTreeMap<u32, Vec<Probe>> = std::collections::BTreeMap::new();
    for (id, p) in candidates {
        by_id.entry(id).or_default().push(p);
    }
    let mut probes: Vec<Probe> = Vec::new();
    let mut round = 0usize;
    while probes.len() < cfg.num_probes {
        let mut advanced = false;
        for plist in by_id.values() {
            if probes.len() >= cfg.num_probes {
                break;
            }
            if round < plist.len() {
                probes.push(plist[round]);
                advanced = true;
            }
        }
        if !advanced {
            break;
        }
        round += 1;
    }
    if probes.len() < cfg.num_probes {
        return Err(Error::Config("could not assemble enough probes".into()));
    }

    // gallery subsets per probe and size, always containing >= 1 true match
    let mut gal_rng = Rng::new(Rng::subseed(seed, 0x6A77));
    let mut galleries: Vec<Vec<Vec<usize>>> = Vec::with_capacity(probes.len());
    for p in &probes {
        let pid = match scenes[p.scene].annotations[p.ann].id {
            PersonId::Labeled(id) => id,
            PersonId::Unlabeled => unreachable!("probes are labeled by construction"),
        };
        let match_scenes: Vec<usize> = test
            .iter()
            .copied()
            .filter(|&si| {
                si != p.scene
                    && scenes[si]
                        .annotations
                        .iter()
                        .any(|a| a.id == PersonId::Labeled(pid))
            })
            .collect();
        debug_assert!(!match_scenes.is_empty());
        let mut subsets = Vec::with_capacity(cfg.gallery_sizes.len());
        for &size in &cfg.gallery_sizes {
            let anchor = match_scenes[gal_rng.below(match_scenes.len())];
            let mut others: Vec<usize> = test
                .iter()
                .copied()
                .filter(|&si| si != p.scene && si != anchor)
                .collect();
            gal_rng.shuffle(&mut others);
            let mut subset = vec![anchor];
            subset.extend(others.into_iter().take(size - 1));
            subset.sort_unstable();
            subsets.push(subset);
        }
        galleries.push(subsets);
    }

    Ok(DatasetSplit {
        seed,
        cfg: cfg.clone(),
        scenes,
        train,
        test,
        probes,
        galleries,
    })
}
