//! Foreground separation inside an expanded RoI.
//!
//! The dominant instance inside the cropped mask is chosen by majority vote
//! over non-background labels (ties go to the smaller label); pixels outside
//! it are zeroed. When the crop holds no instance pixel at all, the box-mask
//! fallback is used so batch pipelines never fail.

use crate::error::{Error, Result};
use crate::geometry::{expand_roi, Box, ExpandRatio, Grid};

/// RGB image with values in [0,1], channel-major.
pub type Image = Grid;

/// Integer instance-label grid; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize) -> Self {
        InstanceMask {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u32) {
        self.labels[y * self.width + x] = v;
    }
}

/// Result of foreground separation: the (possibly masked) crop.
#[derive(Debug, Clone)]
pub struct MaskedPatch {
    pub patch: Grid,
    pub dominant_instance: Option<u32>,
    pub fallback_used: bool,
}

fn crop_rect(img: &Grid, x1: usize, y1: usize, x2: usize, y2: usize) -> Grid {
    let mut out = Grid::new(img.channels, y2 - y1, x2 - x1);
    for c in 0..img.channels {
        for y in y1..y2 {
            for x in x1..x2 {
                out.set(c, y - y1, x - x1, img.at(c, y, x));
            }
        }
    }
    out
}

/// Majority vote over non-background labels within a rect; ties break to the
/// smaller label. None when the rect has no instance pixel.
fn dominant_label(
    mask: &InstanceMask,
    x1: usize,
    y1: usize,
    x2: usize,
    y2: usize,
) -> Option<u32> {
    let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for y in y1..y2 {
        for x in x1..x2 {
            let l = mask.at(y, x);
            if l != 0 {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
    }
    // BTreeMap iterates in ascending label order, so strict > keeps the
    // smallest label on ties.
    let mut best: Option<(u32, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l)
}

/// Expand `b` by gamma, crop image and mask, keep only the dominant instance.
/// Falls back to [`box_mask`] when the crop contains no instance pixel.
pub fn separate_foreground(
    b: &Box,
    gamma: ExpandRatio,
    img: &Image,
    mask: &InstanceMask,
) -> Result<MaskedPatch> {
    if mask.height != img.height || mask.width != img.width {
        return Err(Error::Contract("mask/image shape mismatch".into()));
    }
    let expanded = expand_roi(b, gamma, img.width, img.height)?;
    let (x1, y1, x2, y2) = expanded.pixel_rect(img.width, img.height)?;
    match dominant_label(mask, x1, y1, x2, y2) {
        None => {
            let mut out = box_mask(b, gamma, img)?;
            out.fallback_used = true;
            Ok(out)
        }
        Some(k) => {
            let mut patch = crop_rect(img, x1, y1, x2, y2);
            for y in y1..y2 {
                for x in x1..x2 {
                    if mask.at(y, x) != k {
                        for c in 0..patch.channels {
                            patch.set(c, y - y1, x - x1, 0.0);
                        }
                    }
                }
            }
            Ok(MaskedPatch {
                patch,
                dominant_instance: Some(k),
                fallback_used: false,
            })
        }
    }
}

/// Complement of [`separate_foreground`]: the expanded crop with the dominant
/// instance's pixels zeroed, leaving only background (and other instances).
pub fn background_patch(
    b: &Box,
    gamma: ExpandRatio,
    img: &Image,
    mask: &InstanceMask,
) -> Result<MaskedPatch> {
    if mask.height != img.height || mask.width != img.width {
        return Err(Error::Contract("mask/image shape mismatch".into()));
    }
    let expanded = expand_roi(b, gamma, img.width, img.height)?;
    let (x1, y1, x2, y2) = expanded.pixel_rect(img.width, img.height)?;
    let dominant = dominant_label(mask, x1, y1, x2, y2);
    let mut patch = crop_rect(img, x1, y1, x2, y2);
    if let Some(k) = dominant {
        for y in y1..y2 {
            for x in x1..x2 {
                if mask.at(y, x) == k {
                    for c in 0..patch.channels {
                        patch.set(c, y - y1, x - x1, 0.0);
                    }
                }
            }
        }
    }
    Ok(MaskedPatch {
        patch,
        dominant_instance: dominant,
        fallback_used: false,
    })
}

/// Weak mask: crop the gamma-expanded RoI and zero every pixel outside the
/// original (unexpanded) box.
pub fn box_mask(b: &Box, gamma: ExpandRatio, img: &Image) -> Result<MaskedPatch> {
    let expanded = expand_roi(b, gamma, img.width, img.height)?;
    let (x1, y1, x2, y2) = expanded.pixel_rect(img.width, img.height)?;
    let (bx1, by1, bx2, by2) = b.pixel_rect(img.width, img.height)?;
    let mut patch = crop_rect(img, x1, y1, x2, y2);
    for y in y1..y2 {
        for x in x1..x2 {
            let inside = x >= bx1 && x < bx2 && y >= by1 && y < by2;
            if !inside {
                for c in 0..patch.channels {
                    patch.set(c, y - y1, x - x1, 0.0);
                }
            }
        }
    }
    Ok(MaskedPatch {
        patch,
        dominant_instance: None,
        fallback_used: false,
    })
}

/// Plain expanded crop without any masking (the O-stream input).
pub fn original_patch(b: &Box, gamma: ExpandRatio, img: &Image) -> Result<Grid> {
    let expanded = expand_roi(b, gamma, img.width, img.height)?;
    let (x1, y1, x2, y2) = expanded.pixel_rect(img.width, img.height)?;
    Ok(crop_rect(img, x1, y1, x2, y2))
}
