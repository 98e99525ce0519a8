//! Counterfactual benchmark images: mean colours of masked artefacts, RGB
//! distance categorisation, mean-shift recolouring, synthetic squares and
//! smoothed intensity scaling.
//!
//! Every per-pixel pipeline rounds once at the end (half away from zero) and
//! clamps to `[0, 255]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Mean skin-lesion colour of the ISIC training set.
pub const ISIC_LESION_RGB: Rgb = [176.0, 116.0, 77.0];
/// Mean colour of black colour-chart artefacts (the worst-detected colour).
pub const BLACK_ARTEFACT_RGB: Rgb = [66.0, 61.0, 60.0];
/// Similar/dissimilar cut-off for ISIC colour charts.
pub const COLOUR_CHART_THRESHOLD: f64 = 90.0;
/// Similar/dissimilar cut-off for MVTec ink artefacts.
pub const INK_THRESHOLD: f64 = 42.0;
pub const DEFAULT_SQUARE_AREA: f64 = 0.01;
pub const DEFAULT_SMOOTHING: Smoothing = Smoothing {
    kernel: 7,
    sigma: 0.75,
};
/// Heart-region intensity factor used for the chest X-ray counterfactuals.
pub const HEART_INTENSITY_FACTOR: f64 = 1.0 / 3.0;

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length is an invariant");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Boolean pixel mask paired with an [`ImageBuffer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBuffer {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl MaskBuffer {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} mask entries for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Single-channel PNG; any value >= 128 is inside the mask.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(
            w as usize,
            h as usize,
            img.into_raw().into_iter().map(|v| v >= 128).collect(),
        )
    }

    /// Writes 0/255 single-channel PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length is an invariant");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    fn check_pairs(&self, img: &ImageBuffer) -> Result<()> {
        if self.width != img.width || self.height != img.height {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{} but image is {}x{}",
                self.width, self.height, img.width, img.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbStats {
    pub mean: Rgb,
    pub pixel_count: usize,
}

/// Per-channel dataset statistics used for synthetic squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Rgb,
    pub std: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub kernel: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Similar,
    Dissimilar,
}

impl Similarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Similarity::Similar => "similar",
            Similarity::Dissimilar => "dissimilar",
        }
    }
}

fn round_clamp(v: f64) -> (u8, bool) {
    let r = v.round();
    if r < 0.0 {
        (0, true)
    } else if r > 255.0 {
        (255, true)
    } else {
        (r as u8, false)
    }
}

/// Per-channel mean over the masked pixels.
pub fn mean_rgb(img: &ImageBuffer, mask: &MaskBuffer) -> Result<RgbStats> {
    mask.check_pairs(img)?;
    let mut sum = [0u64; 3];
    let mut count = 0usize;
    for (px, &inside) in img.data.chunks_exact(3).zip(&mask.data) {
        if inside {
            for ch in 0..3 {
                sum[ch] += px[ch] as u64;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(RgbStats {
        mean: sum.map(|s| s as f64 / count as f64),
        pixel_count: count,
    })
}

/// Euclidean distance in RGB space.
pub fn rgb_distance(a: Rgb, b: Rgb) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `Similar` iff the distance is strictly below `threshold`.
pub fn categorize(artefact: Rgb, roi: Rgb, threshold: f64) -> Similarity {
    if rgb_distance(artefact, roi) < threshold {
        Similarity::Similar
    } else {
        Similarity::Dissimilar
    }
}

/// Shifts each channel of the masked region so its mean becomes `target`,
/// keeping per-pixel deviations. Returns the recoloured image and the share
/// of masked channel values that had to be clamped.
pub fn recolor_mean_shift(
    img: &ImageBuffer,
    mask: &MaskBuffer,
    target: Rgb,
) -> Result<(ImageBuffer, f64)> {
    let stats = mean_rgb(img, mask)?;
    let shift = [0, 1, 2].map(|c| target[c] - stats.mean[c]);
    let mut out = img.clone();
    let mut clamped = 0usize;
    for (px, &inside) in out.data.chunks_exact_mut(3).zip(&mask.data) {
        if !inside {
            continue;
        }
        for ch in 0..3 {
            let (v, hit) = round_clamp(px[ch] as f64 + shift[ch]);
            px[ch] = v;
            clamped += hit as usize;
        }
    }
    Ok((out, clamped as f64 / (3 * stats.pixel_count) as f64))
}

/// Side length of a square covering `area_fraction` of the shorter side squared.
pub fn square_side(width: usize, height: usize, area_fraction: f64) -> usize {
    let side = (area_fraction.sqrt() * width.min(height) as f64).round() as usize;
    side.max(1)
}

/// Paints an axis-aligned square filled with `mean + intensity_sigma * std`
/// at a seeded uniformly random position fully inside the image.
pub fn inject_square(
    img: &ImageBuffer,
    area_fraction: f64,
    intensity_sigma: f64,
    stats: &ChannelStats,
    rng_seed: u64,
) -> Result<(ImageBuffer, MaskBuffer)> {
    if !(area_fraction > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "area fraction {area_fraction} must be positive"
        )));
    }
    let side = square_side(img.width, img.height, area_fraction);
    if area_fraction >= 1.0 || side > img.width.min(img.height) {
        return Err(Error::SquareTooLarge {
            side,
            width: img.width,
            height: img.height,
        });
    }
    let fill = [0, 1, 2].map(|c| round_clamp(stats.mean[c] + intensity_sigma * stats.std[c]).0);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let x0 = rng.random_range(0..=img.width - side);
    let y0 = rng.random_range(0..=img.height - side);

    let mut out = img.clone();
    let mut mask = MaskBuffer::empty(img.width, img.height);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            out.set_pixel(x, y, fill);
            mask.set(x, y, true);
        }
    }
    Ok((out, mask))
}

/// Normalised 1-D Gaussian kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) {
        return Err(Error::EvenKernel(size));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma {sigma} must be positive"
        )));
    }
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Mirror index into `[0, n)` with edge repetition (`dcba|abcd|dcba`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur of a 0/1 mask.
pub fn soft_mask(mask: &MaskBuffer, smooth: Smoothing) -> Result<Vec<f64>> {
    let k = gaussian_kernel(smooth.kernel, smooth.sigma)?;
    let (w, h) = (mask.width, mask.height);
    let r = (smooth.kernel / 2) as isize;
    let src: Vec<f64> = mask
        .data
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, wt)| wt * src[y * w + reflect(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, wt)| wt * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    Ok(out)
}

/// Scales intensities inside a smoothed mask: `m·factor·p + (1 - m)·p`.
pub fn scale_region_intensity(
    img: &ImageBuffer,
    mask: &MaskBuffer,
    factor: f64,
    smooth: Smoothing,
) -> Result<ImageBuffer> {
    mask.check_pairs(img)?;
    if !(factor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "factor {factor} must be non-negative"
        )));
    }
    let soft = soft_mask(mask, smooth)?;
    let mut out = img.clone();
    for (px, &m) in out.data.chunks_exact_mut(3).zip(&soft) {
        for v in px.iter_mut() {
            let p = *v as f64;
            *v = round_clamp(m * factor * p + (1.0 - m) * p).0;
        }
    }
    Ok(out)
}

/// One row of the artefact annotation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub colour_tag: String,
    pub category: Similarity,
    /// Full-precision mean RGB, space separated.
    pub rgb_mean: String,
    pub distance: f64,
}

impl AnnotationRecord {
    pub fn new(sample_id: &str, colour_tag: &str, mean: Rgb, roi: Rgb, threshold: f64) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            colour_tag: colour_tag.to_string(),
            category: categorize(mean, roi, threshold),
            rgb_mean: format!("{} {} {}", mean[0], mean[1], mean[2]),
            distance: rgb_distance(mean, roi),
        }
    }

    pub fn mean(&self) -> Result<Rgb> {
        let parts: Vec<f64> = self
            .rgb_mean
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidParameter(format!("bad rgb_mean '{}'", self.rgb_mean)))?;
        <[f64; 3]>::try_from(parts).map_err(|_| {
            Error::InvalidParameter(format!("rgb_mean '{}' needs 3 values", self.rgb_mean))
        })
    }
}

pub fn write_annotations(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mean_examples() {
        let img = ImageBuffer::filled(4, 3, [10, 20, 30]);
        let mut mask = MaskBuffer::empty(4, 3);
        mask.set(1, 1, true);
        assert_eq!(mean_rgb(&img, &mask).unwrap().mean, [10.0, 20.0, 30.0]);

        let mut img = ImageBuffer::filled(2, 1, [0, 0, 0]);
        img.set_pixel(1, 0, [100, 50, 10]);
        let s = mean_rgb(&img, &MaskBuffer::full(2, 1)).unwrap();
        assert_eq!(s.mean, [50.0, 25.0, 5.0]);
        assert_eq!(s.pixel_count, 2);

        assert!(matches!(
            mean_rgb(&img, &MaskBuffer::empty(2, 1)),
            Err(Error::EmptyMask)
        ));
        assert!(matches!(
            mean_rgb(&img, &MaskBuffer::full(1, 2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn chart_distances() {
        assert_abs_diff_eq!(
            rgb_distance([222.0, 52.0, 57.0], ISIC_LESION_RGB),
            6612f64.sqrt()
        );
        assert!((rgb_distance([222.0, 52.0, 57.0], ISIC_LESION_RGB) - 81.3).abs() < 0.05);
        assert!((rgb_distance([207.0, 123.0, 48.0], ISIC_LESION_RGB) - 43.0).abs() < 0.05);
        assert!((rgb_distance([65.0, 52.0, 57.0], ISIC_LESION_RGB) - 129.7).abs() < 0.05);
        assert_eq!(rgb_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn chart_categories() {
        let t = COLOUR_CHART_THRESHOLD;
        assert_eq!(
            categorize([222.0, 52.0, 57.0], ISIC_LESION_RGB, t),
            Similarity::Similar
        );
        assert_eq!(
            categorize([65.0, 52.0, 57.0], ISIC_LESION_RGB, t),
            Similarity::Dissimilar
        );
        assert_eq!(
            categorize([3.0, 4.0, 0.0], [0.0, 0.0, 0.0], 5.0),
            Similarity::Dissimilar
        );
    }

    #[test]
    fn recolor_two_pixels() {
        let mut img = ImageBuffer::filled(3, 1, [200, 200, 200]);
        img.set_pixel(0, 0, [10, 10, 10]);
        img.set_pixel(1, 0, [30, 30, 30]);
        let mut mask = MaskBuffer::empty(3, 1);
        mask.set(0, 0, true);
        mask.set(1, 0, true);
        let (out, clamp) = recolor_mean_shift(&img, &mask, [120.0, 120.0, 120.0]).unwrap();
        assert_eq!(out.pixel(0, 0), [110, 110, 110]);
        assert_eq!(out.pixel(1, 0), [130, 130, 130]);
        assert_eq!(out.pixel(2, 0), [200, 200, 200]);
        assert_eq!(clamp, 0.0);

        let (same, _) = recolor_mean_shift(&img, &mask, [20.0, 20.0, 20.0]).unwrap();
        assert_eq!(same, img);

        let (_, clamp) = recolor_mean_shift(&img, &mask, [250.0, 20.0, 20.0]).unwrap();
        assert_abs_diff_eq!(clamp, 1.0 / 6.0);
        assert!(matches!(
            recolor_mean_shift(&img, &MaskBuffer::empty(3, 1), [0.0; 3]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn square_geometry() {
        assert_eq!(square_side(224, 224, 0.01), 22);
        let img = ImageBuffer::filled(224, 224, [0, 0, 0]);
        let stats = ChannelStats {
            mean: [128.0, 100.0, 90.0],
            std: [20.0, 10.0, 5.0],
        };
        let (a, ma) = inject_square(&img, 0.01, 0.0, &stats, 7).unwrap();
        let (b, mb) = inject_square(&img, 0.01, 0.0, &stats, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(ma.count(), 22 * 22);
        let (x, y) = (0..224 * 224)
            .map(|i| (i % 224, i / 224))
            .find(|&(x, y)| ma.get(x, y))
            .unwrap();
        assert_eq!(a.pixel(x, y), [128, 100, 90]);

        let (c, _) = inject_square(&img, 0.01, 2.0, &stats, 7).unwrap();
        assert_eq!(c.pixel(x, y), [168, 120, 100]);
        assert!(matches!(
            inject_square(&img, 1.0, 0.0, &stats, 7),
            Err(Error::SquareTooLarge { .. })
        ));
        assert!(matches!(
            inject_square(&img, 0.0, 0.0, &stats, 7),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn kernel_properties() {
        let k = gaussian_kernel(7, 0.75).unwrap();
        assert_eq!(k.len(), 7);
        assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[0], k[6]);
        assert!(matches!(
            gaussian_kernel(6, 0.75),
            Err(Error::EvenKernel(6))
        ));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn scaling_identity_and_interior() {
        let mut img = ImageBuffer::filled(32, 32, [90, 150, 201]);
        img.set_pixel(3, 3, [7, 8, 9]);
        let mut mask = MaskBuffer::empty(32, 32);
        for y in 4..28 {
            for x in 4..28 {
                mask.set(x, y, true);
            }
        }
        assert_eq!(
            scale_region_intensity(&img, &mask, 1.0, DEFAULT_SMOOTHING).unwrap(),
            img
        );
        assert_eq!(
            scale_region_intensity(&img, &MaskBuffer::empty(32, 32), 0.2, DEFAULT_SMOOTHING)
                .unwrap(),
            img
        );
        let out =
            scale_region_intensity(&img, &mask, HEART_INTENSITY_FACTOR, DEFAULT_SMOOTHING).unwrap();
        assert_eq!(out.pixel(16, 16), [30, 50, 67]);
        assert_eq!(out.pixel(0, 0), [90, 150, 201]);
        assert!(matches!(
            scale_region_intensity(
                &img,
                &mask,
                0.5,
                Smoothing {
                    kernel: 4,
                    sigma: 1.0
                }
            ),
            Err(Error::EvenKernel(4))
        ));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageBuffer::filled(5, 4, [1, 2, 3]);
        img.set_pixel(4, 3, [250, 0, 128]);
        img.save_png(dir.path().join("a.png")).unwrap();
        assert_eq!(
            ImageBuffer::load_png(dir.path().join("a.png")).unwrap(),
            img
        );
        let mut mask = MaskBuffer::empty(5, 4);
        mask.set(2, 1, true);
        mask.save_png(dir.path().join("m.png")).unwrap();
        assert_eq!(
            MaskBuffer::load_png(dir.path().join("m.png")).unwrap(),
            mask
        );
    }

    #[test]
    fn annotation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.csv");
        let recs = vec![
            AnnotationRecord::new(
                "img1",
                "red",
                [222.0, 52.0, 57.0],
                ISIC_LESION_RGB,
                COLOUR_CHART_THRESHOLD,
            ),
            AnnotationRecord::new(
                "img2",
                "blue",
                [65.25, 52.0, 57.0],
                ISIC_LESION_RGB,
                COLOUR_CHART_THRESHOLD,
            ),
        ];
        write_annotations(&path, &recs).unwrap();
        let back = read_annotations(&path).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[1].mean().unwrap(), [65.25, 52.0, 57.0]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,colour_tag,category,rgb_mean,distance\n"));
        assert!(text.contains(",similar,"));
    }
}
