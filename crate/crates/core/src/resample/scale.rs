use super::{LabelMap, RgbImage};
use crate::error::{Error, Result};
use crate::propagation::DominationMatrix;

/// Linear reduction factor of the first stage.
pub const DOWNSCALE: usize = 3;

/// Output length of a one-third downscale: `ceil(len / 3)`.
pub fn scaled_dim(len: usize) -> usize {
    len.div_ceil(DOWNSCALE)
}

/// Cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

struct Taps {
    anchor: usize,
    taps: Vec<(usize, f64)>,
}

/// Antialiased bicubic taps for one axis: the kernel is stretched by the
/// scale factor and the weights renormalized to sum to one.
fn cubic_taps(src: usize, dst: usize, factor: f64) -> Vec<Taps> {
    let support = 2.0 * factor;
    let last = (src - 1) as isize;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * factor - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|i| {
                    let w = cubic((i as f64 - center) / factor);
                    (w != 0.0).then(|| (i.clamp(0, last) as usize, w))
                })
                .collect();
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= sum);
            Taps {
                anchor: (center.round() as isize).clamp(0, last) as usize,
                taps,
            }
        })
        .collect()
}

/// `sum(w_i * v_i)` written relative to an anchor sample so that a constant
/// neighborhood reproduces its value exactly.
#[inline]
fn apply(taps: &Taps, get: impl Fn(usize) -> [f64; 3]) -> [f64; 3] {
    let base = get(taps.anchor);
    let mut acc = [0.0; 3];
    for &(i, w) in &taps.taps {
        let v = get(i);
        for c in 0..3 {
            acc[c] += w * (v[c] - base[c]);
        }
    }
    [base[0] + acc[0], base[1] + acc[1], base[2] + acc[2]]
}

/// Shrinks an image to `ceil(w/3) x ceil(h/3)` with antialiased bicubic
/// interpolation, clamp-to-edge borders, and output clamped to `[0, 1]`.
pub fn downscale_bicubic(img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = (img.width(), img.height());
    if w < DOWNSCALE || h < DOWNSCALE {
        return Err(Error::TooSmall { width: w, height: h });
    }
    let (dw, dh) = (scaled_dim(w), scaled_dim(h));
    let factor = DOWNSCALE as f64;
    let xt = cubic_taps(w, dw, factor);
    let yt = cubic_taps(h, dh, factor);
    let src = img.pixels();

    let mut horiz = Vec::with_capacity(dw * h);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        horiz.extend(xt.iter().map(|t| apply(t, |i| row[i])));
    }
    let mut out = Vec::with_capacity(dw * dh);
    for t in &yt {
        for x in 0..dw {
            let p = apply(t, |i| horiz[i * dw + x]);
            out.push(p.map(|c| c.clamp(0.0, 1.0)));
        }
    }
    RgbImage::new(dw, dh, out)
}

/// Nearest-neighbor label downscale; never introduces a class id.
///
/// Destination index `d` samples source `floor((d + 0.5) * src / dst)`.
pub fn downscale_nearest(labels: &LabelMap, target_w: usize, target_h: usize) -> Result<LabelMap> {
    let (w, h) = (labels.width(), labels.height());
    if target_w > w || target_h > h {
        return Err(Error::dim(format!(
            "cannot downscale {w}x{h} labels to {target_w}x{target_h}"
        )));
    }
    if target_w == 0 || target_h == 0 {
        return Err(Error::dim("target dimensions must be positive"));
    }
    // floor((2d + 1) * src / (2 * dst)) in integers avoids rounding at exact block edges.
    let pick = |d: usize, src: usize, dst: usize| ((2 * d + 1) * src / (2 * dst)).min(src - 1);
    let cols: Vec<usize> = (0..target_w).map(|x| pick(x, w, target_w)).collect();
    let src = labels.labels();
    let mut out = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let sy = pick(y, h, target_h);
        out.extend(cols.iter().map(|&sx| src[sy * w + sx]));
    }
    LabelMap::new(target_w, target_h, out, labels.num_classes())
}

fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let factor = dst as f64 / src as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|o| {
            let x = ((o as f64 + 0.5) / factor - 0.5).clamp(0.0, last);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, x - i0 as f64)
        })
        .collect()
}

/// Bilinearly enlarges a row-major grid of domination rows. The result has
/// no clamped rows; callers decide which pixels become labeled.
pub fn upscale_bilinear(
    dom: &DominationMatrix,
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Result<DominationMatrix> {
    if dom.len() != src_w * src_h {
        return Err(Error::dim(format!(
            "{} rows for a {src_w}x{src_h} grid",
            dom.len()
        )));
    }
    if src_w == 0 || src_h == 0 || dst_w < src_w || dst_h < src_h {
        return Err(Error::dim(format!(
            "cannot upscale {src_w}x{src_h} to {dst_w}x{dst_h}"
        )));
    }
    let c = dom.classes();
    let xt = linear_taps(src_w, dst_w);
    let yt = linear_taps(src_h, dst_h);
    let mut data = vec![0.0; dst_w * dst_h * c];
    let mut top = vec![0.0; c];
    let mut bottom = vec![0.0; c];
    for (y, &(y0, y1, ty)) in yt.iter().enumerate() {
        for (x, &(x0, x1, tx)) in xt.iter().enumerate() {
            lerp_into(&mut top, dom.row(y0 * src_w + x0), dom.row(y0 * src_w + x1), tx);
            lerp_into(&mut bottom, dom.row(y1 * src_w + x0), dom.row(y1 * src_w + x1), tx);
            let at = (y * dst_w + x) * c;
            lerp_into(&mut data[at..at + c], &top, &bottom, ty);
        }
    }
    DominationMatrix::from_parts(c, data, vec![false; dst_w * dst_h])
}

/// `a + t * (b - a)`, exact when `a == b`.
#[inline]
fn lerp_into(out: &mut [f64], a: &[f64], b: &[f64], t: f64) {
    for ((o, &a), &b) in out.iter_mut().zip(a).zip(b) {
        *o = a + t * (b - a);
    }
}
