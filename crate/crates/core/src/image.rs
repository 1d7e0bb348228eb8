//! Row-major image buffers shared by rendering, matching and evaluation.

use crate::error::{Error, Result};

/// Per-pixel 16-bit instance ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

impl LabelImage {
    /// Pixels excluded from supervision.
    pub const UNLABELED: u16 = 65535;
    pub const BACKGROUND: u16 = 0;

    pub fn filled(width: usize, height: usize, id: u16) -> Self {
        LabelImage {
            width,
            height,
            ids: vec![id; width * height],
        }
    }

    pub fn from_ids(width: usize, height: usize, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::mismatch(format!(
                "label image {width}x{height} needs {} ids, got {}",
                width * height,
                ids.len()
            )));
        }
        Ok(LabelImage { width, height, ids })
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.ids[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, id: u16) {
        self.ids[i * self.width + j] = id;
    }

    /// Distinct ids present, ascending.
    pub fn distinct_ids(&self) -> Vec<u16> {
        let mut seen = vec![false; 65536];
        for &id in &self.ids {
            seen[id as usize] = true;
        }
        (0..=u16::MAX).filter(|&id| seen[id as usize]).collect()
    }

    pub fn mask_of(&self, id: u16) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.ids.iter().map(|&v| v == id).collect(),
        }
    }

    pub fn same_dims<T: Dims>(&self, other: &T) -> bool {
        (self.width, self.height) == other.dims()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::mismatch(format!(
                "mask {width}x{height} needs {} pixels, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.bits[i * self.width + j] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

/// 8-bit-per-channel color image stored as linear [0, 1] floats.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn black(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        self.pixels[i * self.width + j]
    }
}

pub trait Dims {
    fn dims(&self) -> (usize, usize);
}

impl Dims for LabelImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for BinaryMask {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for RgbImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

pub(crate) fn ensure_same_dims<A: Dims, B: Dims>(a: &A, b: &B) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(format!(
            "image dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Square-structuring-element morphology on binary masks.
///
/// `outside` is the value assumed beyond the image border.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    box_filter(mask, radius, false, |acc, b| acc || b)
}

pub fn erode(mask: &BinaryMask, radius: usize, outside: bool) -> BinaryMask {
    box_filter(mask, radius, outside, |acc, b| acc && b)
}

/// Dilate then erode, evaluated as if the image extended without bound
/// (the mask is padded by `radius` first), so the result contains the
/// input and shapes near the border do not grow into it.
pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let (pw, ph) = (w + 2 * radius, h + 2 * radius);
    let mut padded = BinaryMask::empty(pw, ph);
    for i in 0..h {
        for j in 0..w {
            padded.bits[(i + radius) * pw + j + radius] = mask.get(i, j);
        }
    }
    let closed = erode(&dilate(&padded, radius), radius, false);
    let mut out = BinaryMask::empty(w, h);
    for i in 0..h {
        for j in 0..w {
            out.bits[i * w + j] = closed.bits[(i + radius) * pw + j + radius];
        }
    }
    out
}

fn box_filter(
    mask: &BinaryMask,
    radius: usize,
    outside: bool,
    combine: impl Fn(bool, bool) -> bool + Copy,
) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let identity = !combine(true, false);
    let r = radius as isize;
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for i in 0..h {
            for j in 0..w {
                let mut acc = identity;
                for d in -r..=r {
                    let (ii, jj) = if horizontal {
                        (i as isize, j as isize + d)
                    } else {
                        (i as isize + d, j as isize)
                    };
                    let v = if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                        outside
                    } else {
                        src[ii as usize * w + jj as usize]
                    };
                    acc = combine(acc, v);
                }
                out[i * w + j] = acc;
            }
        }
        out
    };
    let rows = pass(&mask.bits, true);
    BinaryMask {
        width: w,
        height: h,
        bits: pass(&rows, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: usize, h: usize, i0: usize, j0: usize, size: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for i in i0..i0 + size {
            for j in j0..j0 + size {
                m.set(i, j, true);
            }
        }
        m
    }

    #[test]
    fn closing_fills_single_pixel_hole() {
        let mut m = square(12, 12, 2, 2, 7);
        m.set(5, 5, false);
        let closed = close(&m, 1);
        assert!(closed.get(5, 5));
        assert_eq!(closed, square(12, 12, 2, 2, 7));
    }

    #[test]
    fn closing_is_extensive_at_borders() {
        let m = square(6, 6, 0, 0, 3);
        let closed = close(&m, 2);
        assert_eq!(closed, m);
    }

    #[test]
    fn erosion_shrinks_and_dilation_grows() {
        let m = square(10, 10, 2, 2, 5);
        assert_eq!(erode(&m, 1, false), square(10, 10, 3, 3, 3));
        assert_eq!(dilate(&m, 1), square(10, 10, 1, 1, 7));
    }

    #[test]
    fn distinct_ids_sorted() {
        let img = LabelImage::from_ids(2, 2, vec![7, 0, 7, 65535]).unwrap();
        assert_eq!(img.distinct_ids(), vec![0, 7, 65535]);
    }
}
