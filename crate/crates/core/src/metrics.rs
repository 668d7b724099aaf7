//! Image-quality metrics: PSNR, windowed SSIM and the gradient-difference
//! sharpness score. All arithmetic is carried out in `f64`.

use std::fmt;

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Value reported when the error term is exactly zero.
pub const DB_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same<T: Scalar>(op: &'static str, a: &Frame<T>, b: &Frame<T>) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::shape(
            op,
            format!(
                "{}x{}x{} vs {}x{}x{}",
                a.height, a.width, a.channels, b.height, b.width, b.channels
            ),
        ));
    }
    Ok(())
}

fn db(max_value: f64, err: f64) -> f64 {
    if err == 0.0 {
        DB_CAP
    } else {
        (10.0 * (max_value * max_value / err).log10()).min(DB_CAP)
    }
}

/// `10 log10(max^2 / MSE)`, capped at [`DB_CAP`].
pub fn psnr<T: Scalar>(pred: &Frame<T>, gt: &Frame<T>, max_value: f64) -> Result<f64> {
    check_same("psnr", pred, gt)?;
    let n = pred.pixels.len() as f64;
    let mse = pred
        .pixels
        .iter()
        .zip(&gt.pixels)
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(db(max_value, mse))
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - c;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &c)| c * plane[y * w + x + t])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &c)| c * rows[(y + t) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all valid window positions and channels.
pub fn ssim<T: Scalar>(pred: &Frame<T>, gt: &Frame<T>, max_value: f64) -> Result<f64> {
    check_same("ssim", pred, gt)?;
    let (h, w) = (pred.height, pred.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("{h}x{w} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * max_value).powi(2);
    let c2 = (SSIM_K2 * max_value).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..pred.channels {
        let x: Vec<f64> = pred
            .pixels
            .iter()
            .skip(ch)
            .step_by(pred.channels)
            .map(|v| v.as_f64())
            .collect();
        let y: Vec<f64> = gt
            .pixels
            .iter()
            .skip(ch)
            .step_by(gt.channels)
            .map(|v| v.as_f64())
            .collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let sxx = filter_valid(&xx, h, w, &taps);
        let syy = filter_valid(&yy, h, w, &taps);
        let sxy = filter_valid(&xy, h, w, &taps);
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            total +=
                ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `|d/di| + |d/dj|` per pixel using forward differences (zero on the last row/column).
fn gradient_magnitude<T: Scalar>(f: &Frame<T>) -> Vec<f64> {
    let (h, w, c) = (f.height, f.width, f.channels);
    let mut out = vec![0.0; f.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = f.get(y, x, ch).as_f64();
                let di = if y + 1 < h {
                    f.get(y + 1, x, ch).as_f64() - v
                } else {
                    0.0
                };
                let dj = if x + 1 < w {
                    f.get(y, x + 1, ch).as_f64() - v
                } else {
                    0.0
                };
                out[(y * w + x) * c + ch] = di.abs() + dj.abs();
            }
        }
    }
    out
}

/// `10 log10(max^2 / G)` with `G` the mean absolute difference of gradient
/// magnitudes; capped at [`DB_CAP`].
pub fn sharpdiff<T: Scalar>(pred: &Frame<T>, gt: &Frame<T>, max_value: f64) -> Result<f64> {
    check_same("sharpdiff", pred, gt)?;
    if pred.height < 2 || pred.width < 2 {
        return Err(Error::shape(
            "sharpdiff",
            format!("{}x{} frame has no gradients", pred.height, pred.width),
        ));
    }
    let gp = gradient_magnitude(pred);
    let gg = gradient_magnitude(gt);
    let g = gp.iter().zip(&gg).map(|(a, b)| (a - b).abs()).sum::<f64>() / gp.len() as f64;
    Ok(db(max_value, g))
}

/// Per-frame scores of one predicted sequence. `ssim` is empty when the
/// frames are smaller than its window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub sharpdiff: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricReport {
    pub fn frames(&self) -> usize {
        self.psnr.len()
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    pub fn mean_sharpdiff(&self) -> f64 {
        mean(&self.sharpdiff)
    }

    /// Concatenates the frames of several reports, so means weight every frame equally.
    pub fn merge(reports: &[MetricReport]) -> MetricReport {
        let mut out = MetricReport::default();
        for r in reports {
            out.psnr.extend_from_slice(&r.psnr);
            out.ssim.extend_from_slice(&r.ssim);
            out.sharpdiff.extend_from_slice(&r.sharpdiff);
        }
        out
    }

    pub const TSV_HEADER: &'static str = "frame\tpsnr\tssim\tsharpdiff";

    /// Header plus one line per frame and a final `mean` line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(Self::TSV_HEADER);
        s.push('\n');
        for i in 0..self.frames() {
            let ssim = self
                .ssim
                .get(i)
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            s.push_str(&format!(
                "{}\t{:.6}\t{ssim}\t{:.6}\n",
                i + 1,
                self.psnr[i],
                self.sharpdiff[i]
            ));
        }
        s.push_str(&format!(
            "mean\t{:.6}\t{:.6}\t{:.6}\n",
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_sharpdiff()
        ));
        s
    }

    /// Flat `key=value` lines with the means and frame count.
    pub fn to_key_value(&self) -> String {
        format!(
            "frames={}\npsnr={}\nssim={}\nsharpdiff={}\n",
            self.frames(),
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_sharpdiff()
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "psnr={:.4} ssim={:.4} sharpdiff={:.4} frames={}",
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_sharpdiff(),
            self.frames()
        )
    }
}

/// Which pixels the metrics see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorMode {
    /// Channel mean rescaled from `[-1, 1]` to `[0, 1]`, scored with max 1.
    #[default]
    Luminance,
    /// Raw `[-1, 1]` channels, scored with max 2.
    Full,
}

/// Scores `pred` against `gt` frame by frame. SSIM is skipped (empty) for
/// frames smaller than its window.
pub fn evaluate_sequence<T: Scalar>(
    pred: &[Frame<T>],
    gt: &[Frame<T>],
    max_value: f64,
) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "sequence lengths differ: {} predicted vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    let mut report = MetricReport::default();
    for (p, g) in pred.iter().zip(gt) {
        report.psnr.push(psnr(p, g, max_value)?);
        if p.height >= SSIM_WINDOW && p.width >= SSIM_WINDOW {
            report.ssim.push(ssim(p, g, max_value)?);
        }
        report.sharpdiff.push(sharpdiff(p, g, max_value)?);
    }
    Ok(report)
}

/// [`evaluate_sequence`] on `[-1, 1]` frames under the given colour handling.
pub fn evaluate_frames<T: Scalar>(
    pred: &[Frame<T>],
    gt: &[Frame<T>],
    mode: ColorMode,
) -> Result<MetricReport> {
    match mode {
        ColorMode::Full => evaluate_sequence(pred, gt, 2.0),
        ColorMode::Luminance => {
            let prep = |fs: &[Frame<T>]| -> Vec<Frame<f64>> {
                fs.iter()
                    .map(|f| f.luminance().cast::<f64>().map(|v| (v + 1.0) / 2.0))
                    .collect()
            };
            evaluate_sequence(&prep(pred), &prep(gt), 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, v: &[f64]) -> Frame<f64> {
        Frame::new(h, w, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = frame(2, 2, &[0.0, 10.0, 20.0, 30.0]);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), DB_CAP);
        let b = a.map(|v| v + 255.0);
        assert!(psnr(&a, &b, 255.0).unwrap().abs() < 1e-12);
        let c = a.map(|v| v + 10.0);
        assert!((psnr(&a, &c, 255.0).unwrap() - 28.130803608679106).abs() < 1e-9);
        assert!(psnr(&a, &frame(1, 4, &[0.0; 4]), 255.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let x = Frame::new(
            12,
            12,
            1,
            (0..144).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
        )
        .unwrap();
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
        let gray = Frame::filled(12, 12, 1, 0.5);
        assert_eq!(ssim(&gray, &gray, 1.0).unwrap(), 1.0);
        assert!(ssim(&x, &gray, 1.0).unwrap() < 1.0);
        let small = Frame::filled(10, 12, 1, 0.5);
        assert!(ssim(&small, &small, 1.0).is_err());
    }

    #[test]
    fn gaussian_taps_normalised_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    #[test]
    fn sharpdiff_examples() {
        let gt = frame(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let pred = frame(2, 2, &[0.0; 4]);
        // gradient magnitudes [[1,0],[1,0]] vs zeros: G = 0.5
        let expected = 10.0 * 2.0f64.log10();
        assert!((sharpdiff(&pred, &gt, 1.0).unwrap() - expected).abs() < 1e-12);
        assert_eq!(sharpdiff(&gt, &gt, 1.0).unwrap(), DB_CAP);
        let shifted = gt.map(|v| v + 0.25);
        assert_eq!(sharpdiff(&shifted, &gt, 1.0).unwrap(), DB_CAP);
        assert!(sharpdiff(&frame(1, 2, &[0.0, 1.0]), &frame(1, 2, &[0.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn sequence_means() {
        let gt = vec![frame(2, 2, &[0.0; 4]), frame(2, 2, &[0.0; 4])];
        let pred = vec![frame(2, 2, &[0.0; 4]), frame(2, 2, &[0.1; 4])];
        let r = evaluate_sequence(&pred, &gt, 1.0).unwrap();
        assert_eq!(r.frames(), 2);
        assert!(r.ssim.is_empty());
        assert!((r.mean_psnr() - (100.0 + 20.0) / 2.0).abs() < 1e-9);
        assert!(evaluate_sequence(&pred[..1], &gt, 1.0).is_err());
        let one = evaluate_sequence(&pred[1..], &gt[1..], 1.0).unwrap();
        assert_eq!(one.mean_psnr(), one.psnr[0]);
        assert_eq!(r.to_tsv().lines().count(), 4);
        assert!(r.to_key_value().contains("frames=2"));
    }

    #[test]
    fn perfect_luminance_scores() {
        let f = Frame::<f32>::new(
            12,
            12,
            3,
            (0..432).map(|i| ((i % 7) as f32 / 3.5) - 1.0).collect(),
        )
        .unwrap();
        let r = evaluate_frames(
            std::slice::from_ref(&f),
            std::slice::from_ref(&f),
            ColorMode::Luminance,
        )
        .unwrap();
        assert_eq!(
            (r.mean_psnr(), r.mean_ssim(), r.mean_sharpdiff()),
            (100.0, 1.0, 100.0)
        );
    }
}
