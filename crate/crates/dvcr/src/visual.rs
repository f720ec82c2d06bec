//! Screenshot handling: binary PPM I/O, a deterministic frozen patch
//! featurizer standing in for a pretrained ViT, ROI Align pooling, and the
//! trainable two-layer projection into the encoder's embedding space.
//!
//! The featurizer is intentionally dumb — per-patch channel means, gradient
//! energies, and normalized patch centers. What matters for the pipeline is
//! that it is a *fixed* feature provider (the real system keeps its ViT
//! frozen), cheap, and bit-reproducible, so every downstream artifact can be
//! tested exactly. It sits behind plain functions; a learned provider could
//! produce the same `FeatureGrid` shape.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::document::BBox;
use crate::error::{Error, Result};

/// An 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// RGB triples, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "image {}x{} needs {} bytes, got {}",
                    width,
                    height,
                    width * height * 3,
                    pixels.len()
                ),
            });
        }
        Ok(Image { width, height, pixels })
    }

    pub fn rgb(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    /// Luminance proxy in [0,1]: plain channel mean.
    fn gray(&self, x: usize, y: usize) -> f64 {
        let (r, g, b) = self.rgb(x, y);
        (r as f64 + g as f64 + b as f64) / (3.0 * 255.0)
    }
}

// ---------------------------------------------------------------------------
// PPM (P6)

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::ImageFormat { offset, message: message.into() }
}

fn is_ppm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n')
}

/// Reads one ASCII decimal field, skipping leading whitespace. Returns the
/// value and the offset just past it. Comments are not part of the format.
fn read_int(bytes: &[u8], mut at: usize, what: &str) -> Result<(usize, usize)> {
    while at < bytes.len() && is_ppm_space(bytes[at]) {
        at += 1;
    }
    if at < bytes.len() && bytes[at] == b'#' {
        return Err(fmt_err(at, "comments are not supported"));
    }
    let start = at;
    while at < bytes.len() && bytes[at].is_ascii_digit() {
        at += 1;
    }
    if at == start {
        return Err(fmt_err(at, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..at]).expect("digits are ascii");
    let value: usize = text
        .parse()
        .map_err(|_| fmt_err(start, format!("{what} out of range")))?;
    Ok((value, at))
}

/// Parses a binary PPM (P6) byte buffer. Strict: magic `P6`, three decimal
/// header fields, maxval 255, exactly one whitespace byte before the pixel
/// payload, no comments, no trailing bytes.
pub fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(fmt_err(0, "missing P6 magic"));
    }
    let (width, at) = read_int(bytes, 2, "width")?;
    let (height, at) = read_int(bytes, at, "height")?;
    let (maxval, at) = read_int(bytes, at, "maxval")?;
    if maxval != 255 {
        return Err(fmt_err(at, format!("maxval must be 255, got {maxval}")));
    }
    if at >= bytes.len() || !is_ppm_space(bytes[at]) {
        return Err(fmt_err(at, "expected single whitespace after maxval"));
    }
    let data_start = at + 1;
    let need = width * height * 3;
    let have = bytes.len() - data_start;
    if have < need {
        return Err(fmt_err(
            bytes.len(),
            format!("truncated pixel data: expected {need} bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(fmt_err(data_start + need, format!("{} trailing bytes", have - need)));
    }
    Image::new(width, height, bytes[data_start..].to_vec())
}

/// Encodes as `P6\n{w} {h}\n255\n` + payload — the exact bytes `parse_ppm`
/// round-trips.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_ppm(&bytes)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Patch featurizer

/// Per-patch feature vectors over a screenshot, `[row][col][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "feature grid {rows}x{cols}x{dim} needs {} values, got {}",
                    rows * cols * dim,
                    data.len()
                ),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch {
                context: format!("feature grid contains non-finite value {bad}"),
            });
        }
        Ok(FeatureGrid { rows, cols, dim, data })
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.cols + col) * self.dim;
        &self.data[i..i + self.dim]
    }
}

/// Number of raw statistics the featurizer computes before fitting to `d_v`.
const RAW_FEATURES: usize = 7;

/// Divides the image into `patch`×`patch` tiles (edge tiles truncated) and
/// computes per tile: mean R, mean G, mean B (scaled to [0,1]), horizontal
/// and vertical gradient energy (mean absolute neighboring-pixel luminance
/// difference), and the tile center normalized by image size. The seven
/// statistics are truncated or zero-padded to `d_v`.
pub fn patch_featurize(img: &Image, patch: usize, d_v: usize) -> FeatureGrid {
    assert!(patch >= 1, "patch size must be at least 1");
    assert!(d_v >= 6, "d_v must be at least 6");
    let rows = img.height.div_ceil(patch);
    let cols = img.width.div_ceil(patch);
    let mut data = Vec::with_capacity(rows * cols * d_v);
    for row in 0..rows {
        for col in 0..cols {
            let x0 = col * patch;
            let y0 = row * patch;
            let x1 = (x0 + patch).min(img.width);
            let y1 = (y0 + patch).min(img.height);

            let mut sum = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let (r, g, b) = img.rgb(x, y);
                    sum[0] += r as f64;
                    sum[1] += g as f64;
                    sum[2] += b as f64;
                }
            }
            let count = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = sum.map(|s| s / (count * 255.0));

            let mut hgrad = 0.0;
            let mut hpairs = 0usize;
            for y in y0..y1 {
                for x in x0..x1.saturating_sub(1) {
                    hgrad += (img.gray(x + 1, y) - img.gray(x, y)).abs();
                    hpairs += 1;
                }
            }
            let mut vgrad = 0.0;
            let mut vpairs = 0usize;
            for y in y0..y1.saturating_sub(1) {
                for x in x0..x1 {
                    vgrad += (img.gray(x, y + 1) - img.gray(x, y)).abs();
                    vpairs += 1;
                }
            }
            let hgrad = if hpairs == 0 { 0.0 } else { hgrad / hpairs as f64 };
            let vgrad = if vpairs == 0 { 0.0 } else { vgrad / vpairs as f64 };

            let cx = (x0 + x1) as f64 / 2.0 / img.width as f64;
            let cy = (y0 + y1) as f64 / 2.0 / img.height as f64;

            let raw: [f64; RAW_FEATURES] = [mean[0], mean[1], mean[2], hgrad, vgrad, cx, cy];
            for d in 0..d_v {
                data.push(raw.get(d).copied().unwrap_or(0.0));
            }
        }
    }
    FeatureGrid { rows, cols, dim: d_v, data }
}

// ---------------------------------------------------------------------------
// ROI Align

/// Bilinear lookup at continuous grid coordinates, cell centers at
/// (col + 0.5, row + 0.5), clamp-to-edge beyond the border.
fn bilinear(grid: &FeatureGrid, gx: f64, gy: f64, out: &mut [f64]) {
    let u = gx - 0.5;
    let v = gy - 0.5;
    let c0 = u.floor();
    let r0 = v.floor();
    let fx = u - c0;
    let fy = v - r0;
    let clamp_col = |c: f64| (c.max(0.0) as usize).min(grid.cols - 1);
    let clamp_row = |r: f64| (r.max(0.0) as usize).min(grid.rows - 1);
    let (ca, cb) = (clamp_col(c0), clamp_col(c0 + 1.0));
    let (ra, rb) = (clamp_row(r0), clamp_row(r0 + 1.0));
    let tl = grid.cell(ra, ca);
    let tr = grid.cell(ra, cb);
    let bl = grid.cell(rb, ca);
    let br = grid.cell(rb, cb);
    for d in 0..grid.dim {
        let top = tl[d] * (1.0 - fx) + tr[d] * fx;
        let bot = bl[d] * (1.0 - fx) + br[d] * fx;
        out[d] = top * (1.0 - fy) + bot * fy;
    }
}

/// Pools a pixel-space box from a feature grid. The box is mapped to grid
/// coordinates by dividing by `patch`, split into `oh`×`ow` bins, and each
/// bin averages `sampling`² regularly spaced interior bilinear samples. A
/// zero-area box degenerates to point sampling at its center (the sample
/// positions collapse there); a box fully outside the grid is an error.
pub fn roi_align(
    grid: &FeatureGrid,
    bbox: &BBox,
    patch: usize,
    out: (usize, usize),
    sampling: usize,
) -> Result<Vec<f64>> {
    let (oh, ow) = out;
    assert!(oh >= 1 && ow >= 1, "output resolution must be at least 1x1");
    assert!(sampling >= 1, "sampling must be at least 1");
    assert!(patch >= 1, "patch size must be at least 1");

    let p = patch as f64;
    let gx = bbox.x / p;
    let gy = bbox.y / p;
    let gw = bbox.w / p;
    let gh = bbox.h / p;
    let outside = gx > grid.cols as f64
        || gx + gw < 0.0
        || gy > grid.rows as f64
        || gy + gh < 0.0;
    if outside {
        return Err(Error::BoxOutsideGrid { x: bbox.x, y: bbox.y, w: bbox.w, h: bbox.h });
    }

    let bin_w = gw / ow as f64;
    let bin_h = gh / oh as f64;
    let mut result = Vec::with_capacity(oh * ow * grid.dim);
    let mut sample = vec![0.0; grid.dim];
    for i in 0..oh {
        for j in 0..ow {
            let y_start = gy + i as f64 * bin_h;
            let x_start = gx + j as f64 * bin_w;
            let mut acc = vec![0.0; grid.dim];
            for sy in 0..sampling {
                for sx in 0..sampling {
                    let py = y_start + (sy as f64 + 0.5) * bin_h / sampling as f64;
                    let px = x_start + (sx as f64 + 0.5) * bin_w / sampling as f64;
                    bilinear(grid, px, py, &mut sample);
                    for d in 0..grid.dim {
                        acc[d] += sample[d];
                    }
                }
            }
            let n = (sampling * sampling) as f64;
            result.extend(acc.into_iter().map(|a| a / n));
        }
    }
    Ok(result)
}

/// One pooled vector for the entire screenshot: ROI Align over the full grid
/// extent at 1×1 output. Backs the query's "whole page" visual token.
pub fn whole_image_feature(grid: &FeatureGrid) -> Vec<f64> {
    assert!(grid.rows > 0 && grid.cols > 0, "empty grid");
    let full = BBox::new(0.0, 0.0, grid.cols as f64, grid.rows as f64).expect("finite");
    roi_align(grid, &full, 1, (1, 1), 2).expect("full box intersects grid")
}

// ---------------------------------------------------------------------------
// Projection

/// Two trainable linear layers mapping frozen `d_v` features into the
/// encoder's `d_model` space: `out = relu(feat·W1 + b1)·W2 + b2`.
/// Biases are stored 1×n so every parameter is a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

impl Projection {
    pub fn zeros(d_v: usize, d_h: usize, d_model: usize) -> Self {
        Projection {
            w1: Array2::zeros((d_v, d_h)),
            b1: Array2::zeros((1, d_h)),
            w2: Array2::zeros((d_h, d_model)),
            b2: Array2::zeros((1, d_model)),
        }
    }

    /// Gaussian init (std 0.02) for weights, zero biases.
    pub fn init(rng: &mut impl Rng, d_v: usize, d_h: usize, d_model: usize) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut fill = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || normal.sample(rng))
        };
        let w1 = fill((d_v, d_h));
        let w2 = fill((d_h, d_model));
        Projection {
            w1,
            b1: Array2::zeros((1, d_h)),
            w2,
            b2: Array2::zeros((1, d_model)),
        }
    }

    pub fn d_v(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.w2.ncols()
    }

    fn check(&self, feat: &[f64]) -> Result<()> {
        if feat.len() != self.d_v() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "projection expects d_v={} features, got {}",
                    self.d_v(),
                    feat.len()
                ),
            });
        }
        Ok(())
    }

    pub fn project(&self, feat: &[f64]) -> Result<Array1<f64>> {
        Ok(self.forward_cached(feat)?.0)
    }

    /// Forward pass keeping what backward needs: the input and the
    /// pre-activation hidden layer.
    pub fn forward_cached(&self, feat: &[f64]) -> Result<(Array1<f64>, ProjectionCache)> {
        self.check(feat)?;
        let x = Array2::from_shape_vec((1, feat.len()), feat.to_vec()).expect("shape");
        let pre = x.dot(&self.w1) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = hidden.dot(&self.w2) + &self.b2;
        Ok((
            out.row(0).to_owned(),
            ProjectionCache { input: x, pre },
        ))
    }

    /// Gradients of a scalar loss w.r.t. the parameters, given dL/d_out.
    /// Accumulates into `grads` (same shapes as the parameters).
    pub fn backward(&self, cache: &ProjectionCache, d_out: &Array1<f64>, grads: &mut Projection) {
        let d_out = d_out.view().insert_axis(ndarray::Axis(0));
        let hidden = cache.pre.mapv(|v| v.max(0.0));
        grads.w2 += &hidden.t().dot(&d_out);
        grads.b2 += &d_out;
        let d_hidden = d_out.dot(&self.w2.t());
        let d_pre = &d_hidden * &cache.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        grads.w1 += &cache.input.t().dot(&d_pre);
        grads.b1 += &d_pre;
    }

}

impl crate::nn::ParamSet for Projection {
    fn params(&self) -> Vec<(String, &Array2<f64>)> {
        vec![
            ("proj.w1".to_string(), &self.w1),
            ("proj.b1".to_string(), &self.b1),
            ("proj.w2".to_string(), &self.w2),
            ("proj.b2".to_string(), &self.b2),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        vec![
            ("proj.w1".to_string(), &mut self.w1),
            ("proj.b1".to_string(), &mut self.b1),
            ("proj.w2".to_string(), &mut self.w2),
            ("proj.b2".to_string(), &mut self.b2),
        ]
    }
}

/// Saved activations for one projection forward pass.
#[derive(Debug, Clone)]
pub struct ProjectionCache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn white_2x2() -> Vec<u8> {
        let mut b = b"P6\n2 2\n255\n".to_vec();
        b.extend_from_slice(&[255; 12]);
        b
    }

    #[test]
    fn parses_white_fixture() {
        let img = parse_ppm(&white_2x2()).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![255; 12]);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = parse_ppm(b"P5\n2 2\n255\n----").unwrap_err();
        assert!(matches!(err, Error::ImageFormat { offset: 0, .. }));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = white_2x2();
        bytes.truncate(bytes.len() - 5);
        let err = parse_ppm(&bytes).unwrap_err();
        match err {
            Error::ImageFormat { offset, message } => {
                assert_eq!(offset, 18);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_trailing_bytes_and_bad_maxval() {
        let mut bytes = white_2x2();
        bytes.push(0);
        assert!(matches!(parse_ppm(&bytes), Err(Error::ImageFormat { .. })));
        assert!(matches!(parse_ppm(b"P6\n1 1\n254\nabc"), Err(Error::ImageFormat { .. })));
        assert!(matches!(parse_ppm(b"P6\n# w\n1 1\n255\nabc"), Err(Error::ImageFormat { .. })));
    }

    #[test]
    fn round_trips_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = rng.gen_range(1..12);
            let h = rng.gen_range(1..12);
            let pixels: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
            let img = Image::new(w, h, pixels).unwrap();
            let encoded = encode_ppm(&img);
            assert_eq!(parse_ppm(&encoded).unwrap(), img);
        }
    }

    #[test]
    fn saves_and_loads_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shot.ppm");
        let img = Image::new(3, 2, (0..18).collect()).unwrap();
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
        assert!(matches!(
            load_image(dir.path().join("missing.ppm")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn constant_gray_image_has_uniform_features() {
        let img = Image::new(8, 8, vec![128; 8 * 8 * 3]).unwrap();
        let grid = patch_featurize(&img, 4, 8);
        assert_eq!((grid.rows, grid.cols, grid.dim), (2, 2, 8));
        let first = grid.cell(0, 0);
        assert_abs_diff_eq!(first[0], 128.0 / 255.0);
        assert_eq!(first[3], 0.0);
        assert_eq!(first[4], 0.0);
        for row in 0..2 {
            for col in 0..2 {
                let c = grid.cell(row, col);
                // Everything but the positional channels matches exactly.
                assert_eq!(&c[..5], &first[..5]);
                assert_eq!(c[7], 0.0);
            }
        }
        assert_eq!(grid.cell(1, 1)[5], 0.75);
        assert_eq!(grid.cell(1, 1)[6], 0.75);
    }

    #[test]
    fn half_black_half_white_gradients() {
        // 4x2: columns 0-1 black, 2-3 white; one patch spans the boundary.
        let mut px = Vec::new();
        for _y in 0..2 {
            for x in 0..4 {
                let v = if x < 2 { 0 } else { 255 };
                px.extend_from_slice(&[v, v, v]);
            }
        }
        let img = Image::new(4, 2, px).unwrap();
        let grid = patch_featurize(&img, 4, 8);
        assert_eq!((grid.rows, grid.cols), (1, 1));
        let f = grid.cell(0, 0);
        // Six horizontal pairs, exactly two cross the boundary with |Δ| = 1.
        assert_abs_diff_eq!(f[3], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(f[4], 0.0);
        assert_abs_diff_eq!(f[0], 0.5);
    }

    #[test]
    fn featurize_is_deterministic_and_pads() {
        let img = Image::new(5, 3, (0..45).collect()).unwrap();
        let a = patch_featurize(&img, 2, 8);
        let b = patch_featurize(&img, 2, 8);
        assert_eq!(a, b);
        // Edge patches use the truncated pixel set: 3 cols for width 5.
        assert_eq!((a.rows, a.cols), (2, 3));
        let wide = patch_featurize(&img, 2, 10);
        assert_eq!(&wide.cell(0, 0)[7..], &[0.0, 0.0, 0.0]);
        let narrow = patch_featurize(&img, 2, 6);
        assert_eq!(narrow.cell(1, 2), &a.cell(1, 2)[..6]);
    }

    fn grid_from(rows: usize, cols: usize, values: &[f64]) -> FeatureGrid {
        FeatureGrid::new(rows, cols, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn roi_align_midpoint_fixture() {
        let grid = grid_from(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let out = roi_align(&grid, &b, 1, (1, 1), 1).unwrap();
        assert_eq!(out, vec![2.5]);
    }

    #[test]
    fn roi_align_constant_grid_returns_constant() {
        let grid = FeatureGrid::new(3, 4, 2, vec![7.25; 24]).unwrap();
        let b = BBox::new(0.3, 0.9, 2.1, 1.7).unwrap();
        for sampling in 1..4 {
            let out = roi_align(&grid, &b, 1, (2, 3), sampling).unwrap();
            assert_eq!(out.len(), 2 * 3 * 2);
            assert!(out.iter().all(|&v| v == 7.25));
        }
    }

    #[test]
    fn roi_align_sample_on_cell_center_is_identity() {
        let grid = grid_from(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        // Box [0,1]x[0,1]: single sample at (0.5, 0.5), the center of cell (0,0).
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(roi_align(&grid, &b, 1, (1, 1), 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn roi_align_zero_area_is_point_sample() {
        let grid = grid_from(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let point = BBox::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let out = roi_align(&grid, &point, 1, (1, 1), 3).unwrap();
        assert_eq!(out, vec![2.5]);
        // Zero width, positive height: still fine, x collapses to the line.
        let line = BBox::new(0.5, 0.0, 0.0, 2.0).unwrap();
        let out = roi_align(&grid, &line, 1, (1, 1), 1).unwrap();
        assert_eq!(out, vec![2.0]); // midpoint of column 0: (1+3)/2
    }

    #[test]
    fn roi_align_rejects_fully_outside_box() {
        let grid = grid_from(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = BBox::new(5.0, 5.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            roi_align(&grid, &b, 1, (1, 1), 2),
            Err(Error::BoxOutsideGrid { .. })
        ));
        // Touching the border still counts as intersecting (clamped samples).
        let touch = BBox::new(2.0, 0.0, 1.0, 1.0).unwrap();
        assert!(roi_align(&grid, &touch, 1, (1, 1), 2).is_ok());
    }

    /// Independent ROI Align: explicit scalar loops, its own bilinear.
    pub(crate) fn roi_align_oracle(
        grid: &FeatureGrid,
        bbox: &BBox,
        patch: usize,
        out: (usize, usize),
        sampling: usize,
    ) -> Vec<f64> {
        let lookup = |gx: f64, gy: f64, d: usize| -> f64 {
            let u = gx - 0.5;
            let v = gy - 0.5;
            let c0 = u.floor() as i64;
            let r0 = v.floor() as i64;
            let fx = u - c0 as f64;
            let fy = v - r0 as f64;
            let cc = |c: i64| c.clamp(0, grid.cols as i64 - 1) as usize;
            let cr = |r: i64| r.clamp(0, grid.rows as i64 - 1) as usize;
            let val = |r: usize, c: usize| grid.cell(r, c)[d];
            let top = val(cr(r0), cc(c0)) * (1.0 - fx) + val(cr(r0), cc(c0 + 1)) * fx;
            let bot = val(cr(r0 + 1), cc(c0)) * (1.0 - fx) + val(cr(r0 + 1), cc(c0 + 1)) * fx;
            top * (1.0 - fy) + bot * fy
        };
        let p = patch as f64;
        let (oh, ow) = out;
        let mut result = Vec::new();
        for i in 0..oh {
            for j in 0..ow {
                for d in 0..grid.dim {
                    let mut acc = 0.0;
                    for sy in 0..sampling {
                        for sx in 0..sampling {
                            let gy = bbox.y / p
                                + (i as f64) * (bbox.h / p) / oh as f64
                                + (sy as f64 + 0.5) * (bbox.h / p) / (oh * sampling) as f64;
                            let gx = bbox.x / p
                                + (j as f64) * (bbox.w / p) / ow as f64
                                + (sx as f64 + 0.5) * (bbox.w / p) / (ow * sampling) as f64;
                            acc += lookup(gx, gy, d);
                        }
                    }
                    result.push(acc / (sampling * sampling) as f64);
                }
            }
        }
        result
    }

    pub(crate) fn random_case(
        rng: &mut ChaCha8Rng,
    ) -> (FeatureGrid, BBox, usize, (usize, usize), usize) {
        let rows = rng.gen_range(1..8);
        let cols = rng.gen_range(1..8);
        let dim = rng.gen_range(1..4);
        let data: Vec<f64> = (0..rows * cols * dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let grid = FeatureGrid::new(rows, cols, dim, data).unwrap();
        let patch = rng.gen_range(1..5usize);
        let (pw, ph) = (cols * patch, rows * patch);
        let w = rng.gen_range(0.0..pw as f64);
        let h = rng.gen_range(0.0..ph as f64);
        // Keep at least half the box over the image so it always intersects,
        // while still exercising the clamped border path.
        let x = rng.gen_range(-w / 2.0..(pw as f64 - 0.5));
        let y = rng.gen_range(-h / 2.0..(ph as f64 - 0.5));
        let bbox = BBox::new(x, y, w, h).unwrap();
        let out = (rng.gen_range(1..4), rng.gen_range(1..4));
        let sampling = rng.gen_range(1..4);
        (grid, bbox, patch, out, sampling)
    }

    #[test]
    fn roi_align_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..500 {
            let (grid, bbox, patch, out, sampling) = random_case(&mut rng);
            let got = roi_align(&grid, &bbox, patch, out, sampling).unwrap();
            let want = roi_align_oracle(&grid, &bbox, patch, out, sampling);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-9, "got {g}, oracle {w}");
            }
        }
    }

    #[test]
    fn roi_align_translation_consistency() {
        // Same content shifted one cell right+down in a larger grid, box
        // shifted by one patch: identical pooled output for interior boxes.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let rows = 4;
            let cols = 4;
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let base = grid_from(rows, cols, &data);
            let mut shifted_data = vec![0.0; (rows + 1) * (cols + 1)];
            for r in 0..rows {
                for c in 0..cols {
                    shifted_data[(r + 1) * (cols + 1) + (c + 1)] = data[r * cols + c];
                }
            }
            let shifted = grid_from(rows + 1, cols + 1, &shifted_data);
            let patch = 2usize;
            // Interior box: at least one cell away from every border so
            // clamped samples never reach differing edge content.
            let b = BBox::new(
                patch as f64 * rng.gen_range(1.0..2.0),
                patch as f64 * rng.gen_range(1.0..2.0),
                patch as f64 * rng.gen_range(0.1..0.9),
                patch as f64 * rng.gen_range(0.1..0.9),
            )
            .unwrap();
            let moved =
                BBox::new(b.x + patch as f64, b.y + patch as f64, b.w, b.h).unwrap();
            let a = roi_align(&base, &b, patch, (2, 2), 2).unwrap();
            let c = roi_align(&shifted, &moved, patch, (2, 2), 2).unwrap();
            for (x, y) in a.iter().zip(&c) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn whole_image_feature_cases() {
        let constant = FeatureGrid::new(3, 5, 2, vec![1.5; 30]).unwrap();
        assert_eq!(whole_image_feature(&constant), vec![1.5, 1.5]);
        let grid = grid_from(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let full = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(
            whole_image_feature(&grid),
            roi_align(&grid, &full, 1, (1, 1), 2).unwrap()
        );
        // Bilinear mean of the sample cross equals the grid mean here.
        assert_abs_diff_eq!(whole_image_feature(&grid)[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn project_zero_weights_gives_zero() {
        let p = Projection::zeros(4, 3, 5);
        let out = p.project(&[1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out.to_vec(), vec![0.0; 5]);
    }

    #[test]
    fn project_identity_weights_is_relu() {
        let mut p = Projection::zeros(3, 3, 3);
        p.w1 = Array2::eye(3);
        p.w2 = Array2::eye(3);
        let out = p.project(&[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(out.to_vec(), vec![0.5, 0.0, 2.0]);
    }

    #[test]
    fn project_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Projection::init(&mut rng, 8, 32, 64);
        let feat: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = p.project(&feat).unwrap();

        // Straight-line reimplementation: nested loops, no ndarray.
        let mut hidden = vec![0.0; 32];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut acc = p.b1[[0, j]];
            for (i, f) in feat.iter().enumerate() {
                acc += f * p.w1[[i, j]];
            }
            *h = acc.max(0.0);
        }
        let mut want = vec![0.0; 64];
        for (k, w) in want.iter_mut().enumerate() {
            let mut acc = p.b2[[0, k]];
            for (j, h) in hidden.iter().enumerate() {
                acc += h * p.w2[[j, k]];
            }
            *w = acc;
        }
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
        assert!(matches!(p.project(&[0.0; 3]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn project_scales_on_active_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = Projection::init(&mut rng, 4, 6, 5);
        // Zero biases and an input kept positive pre-activation: doubling the
        // input doubles the output only if all activations stay on the same
        // side, so force positivity through |W1|.
        p.b1.fill(0.0);
        p.b2.fill(0.0);
        p.w1.mapv_inplace(f64::abs);
        let feat = [0.3, 0.7, 0.2, 0.9];
        let doubled: Vec<f64> = feat.iter().map(|v| v * 2.0).collect();
        let a = p.project(&feat).unwrap();
        let b = p.project(&doubled).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(2.0 * x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut p = Projection::init(&mut rng, 5, 7, 4);
        let feat: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Loss = sum of outputs, so dL/d_out = ones.
        let (_, cache) = p.forward_cached(&feat).unwrap();
        let mut grads = Projection::zeros(5, 7, 4);
        p.backward(&cache, &Array1::ones(4), &mut grads);
        let outcome = crate::nn::finite_difference_check(
            &mut p,
            &grads,
            |p| p.project(&feat).unwrap().sum(),
            1e-5,
        );
        assert!(
            outcome.max_rel_err < 1e-6,
            "worst {} rel err {}",
            outcome.worst,
            outcome.max_rel_err
        );
    }
}
