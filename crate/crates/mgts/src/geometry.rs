//! Boxes, IoU, NMS, RoI expansion, cropping and resizing.
//!
//! Boxes are half-open pixel rectangles [x1, x2) x [y1, y2). All operations
//! here are pure.

use crate::error::{Error, Result};

/// Axis-aligned half-open rectangle with an optional detection score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: Option<f64>,
}

impl Box {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::Contract("box coordinates must be finite".into()));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::Contract(format!(
                "box must have positive extent: ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(Box {
            x1,
            y1,
            x2,
            y2,
            score: None,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Integer pixel rectangle (x1, y1, x2, y2), rounded and clipped to the
    /// image; errors if the result is empty.
    pub fn pixel_rect(&self, img_w: usize, img_h: usize) -> Result<(usize, usize, usize, usize)> {
        let x1 = self.x1.round().max(0.0) as usize;
        let y1 = self.y1.round().max(0.0) as usize;
        let x2 = (self.x2.round() as i64).clamp(0, img_w as i64) as usize;
        let y2 = (self.y2.round() as i64).clamp(0, img_h as i64) as usize;
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::Degenerate(format!(
                "box ({},{},{},{}) empty after rounding/clipping",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok((x1, y1, x2, y2))
    }
}

/// RoI expansion ratio gamma >= 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandRatio(f64);

impl ExpandRatio {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 1.0) {
            return Err(Error::Contract(format!("gamma must be >= 1, got {gamma}")));
        }
        Ok(ExpandRatio(gamma))
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

/// Intersection-over-union; 0 when disjoint.
pub fn iou(a: &Box, b: &Box) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy NMS by descending score. A box is kept iff its IoU with every
/// already-kept box is <= `iou_thresh`. Score ties break by lower input index.
pub fn nms(boxes: &[Box], iou_thresh: f64) -> Result<Vec<Box>> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::Contract(format!(
            "iou_thresh must be in (0,1), got {iou_thresh}"
        )));
    }
    for b in boxes {
        if b.score.is_none() {
            return Err(Error::Contract("nms requires scored boxes".into()));
        }
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
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
        if kept.iter().all(|k| iou(k, &boxes[i]) <= iou_thresh) {
            kept.push(boxes[i]);
        }
    }
    Ok(kept)
}

/// Scale width and height by gamma about the box center, then clip to the
/// image rectangle.
pub fn expand_roi(b: &Box, gamma: ExpandRatio, img_w: usize, img_h: usize) -> Result<Box> {
    let g = gamma.get();
    let cx = (b.x1 + b.x2) / 2.0;
    let cy = (b.y1 + b.y2) / 2.0;
    let hw = b.width() * g / 2.0;
    let hh = b.height() * g / 2.0;
    let x1 = (cx - hw).max(0.0);
    let y1 = (cy - hh).max(0.0);
    let x2 = (cx + hw).min(img_w as f64);
    let y2 = (cy + hh).min(img_h as f64);
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::Degenerate(
            "expanded RoI is empty after clipping".into(),
        ));
    }
    let mut out = Box::new(x1, y1, x2, y2)?;
    out.score = b.score;
    Ok(out)
}

/// Planar multi-channel pixel grid used for crops and patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// channel-major, row-major within channel
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Grid {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

/// Exact pixel copy of the sub-rectangle of `img` covered by `b`.
pub fn crop(img: &Grid, b: &Box) -> Result<Grid> {
    let (x1, y1, x2, y2) = b.pixel_rect(img.width, img.height)?;
    if x2 > img.width || y2 > img.height {
        return Err(Error::Contract("crop box out of bounds".into()));
    }
    let mut out = Grid::new(img.channels, y2 - y1, x2 - x1);
    for c in 0..img.channels {
        for y in y1..y2 {
            for x in x1..x2 {
                out.set(c, y - y1, x - x1, img.at(c, y, x));
            }
        }
    }
    Ok(out)
}

/// Bilinear resize with corner-aligned sampling. Same-size resize is the
/// identity; a single-pixel source axis maps everywhere to index 0.
pub fn resize(patch: &Grid, out_h: usize, out_w: usize) -> Result<Grid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract("resize target must be >= 1x1".into()));
    }
    if patch.height == out_h && patch.width == out_w {
        return Ok(patch.clone());
    }
    let sy = if out_h == 1 || patch.height == 1 {
        0.0
    } else {
        (patch.height - 1) as f64 / (out_h - 1) as f64
    };
    let sx = if out_w == 1 || patch.width == 1 {
        0.0
    } else {
        (patch.width - 1) as f64 / (out_w - 1) as f64
    };
    let mut out = Grid::new(patch.channels, out_h, out_w);
    for c in 0..patch.channels {
        for oy in 0..out_h {
            let fy = oy as f64 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(patch.height - 1);
            let wy = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ox as f64 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(patch.width - 1);
                let wx = fx - x0 as f64;
                let v = patch.at(c, y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + patch.at(c, y0, x1) * (1.0 - wy) * wx
                    + patch.at(c, y1, x0) * wy * (1.0 - wx)
                    + patch.at(c, y1, x1) * wy * wx;
                out.set(c, oy, ox, v);
            }
        }
    }
    Ok(out)
}
