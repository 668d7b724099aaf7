//! Held-out evaluation, the cross-fade baseline, multi-modal sampling and
//! discriminator scoring.

use std::fmt::Write as _;

use crate::dataset::{Clip, Frame};
use crate::error::{Error, Result};
use crate::losses::{Discriminator, ParamMode};
use crate::metrics::{evaluate_frames, ColorMode, MetricReport};
use crate::model::{
    frames_to_tensor, sample_noise, sequences_to_tensor, tensor_to_sequences, Bipn, NOISE_DIM,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamStore, Tensor};

/// `frame_i = (1 - w_i) start + w_i end` with `w_i = i / (l + 1)`, `i = 1..=l`.
pub fn baseline_crossfade<T: Scalar>(
    start: &Frame<T>,
    end: &Frame<T>,
    l: usize,
) -> Result<Vec<Frame<T>>> {
    if !start.same_dims(end) {
        return Err(Error::shape(
            "crossfade",
            "start and end frames differ in size".to_string(),
        ));
    }
    Ok((1..=l)
        .map(|i| {
            let w = T::of(i as f64 / (l + 1) as f64);
            let pixels = start
                .pixels
                .iter()
                .zip(&end.pixels)
                .map(|(&a, &b)| (T::one() - w) * a + w * b)
                .collect();
            Frame { pixels, ..*start }
        })
        .collect())
}

/// `(start, targets, end)` borrowed from a clip.
pub type Window<'a, T> = (&'a Frame<T>, &'a [Frame<T>], &'a Frame<T>);

/// `(start, l targets, end)` taken from the first `l + 2` frames of a clip.
pub fn clip_window<T: Scalar>(clip: &Clip<T>, l: usize) -> Result<Window<'_, T>> {
    if clip.frames.len() < l + 2 {
        return Err(Error::Dataset(format!(
            "clip of {} frames is too short for {l} intermediate frames",
            clip.frames.len()
        )));
    }
    Ok((&clip.frames[0], &clip.frames[1..=l], &clip.frames[l + 1]))
}

/// Trained generator used for inference.
#[derive(Debug, Clone)]
pub struct Generator<'a, T> {
    pub model: &'a Bipn,
    pub params: &'a ParamStore<T>,
}

impl<T: Scalar> Generator<'_, T> {
    /// Finest-scale predictions for a batch of endpoint pairs. Noise-conditioned
    /// models need one noise seed per pair.
    pub fn predict(
        &self,
        starts: &[&Frame<T>],
        ends: &[&Frame<T>],
        noise_seeds: Option<&[u64]>,
    ) -> Result<Vec<Vec<Frame<T>>>> {
        if starts.len() != ends.len() {
            return Err(Error::InvalidArgument(
                "unequal numbers of start and end frames".into(),
            ));
        }
        let mut g = Graph::inference();
        let st = g.constant(frames_to_tensor(starts)?);
        let ed = g.constant(frames_to_tensor(ends)?);
        let noise = match (self.model.config().noise_enabled(), noise_seeds) {
            (true, Some(seeds)) => {
                if seeds.len() != starts.len() {
                    return Err(Error::InvalidArgument(
                        "one noise seed per sample is required".into(),
                    ));
                }
                Some(g.constant(noise_batch(seeds)))
            }
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "noise-conditioned model needs noise seeds".into(),
                ))
            }
            (false, _) => None,
        };
        let preds = self.model.forward(&mut g, self.params, st, ed, noise)?;
        let last = *preds.last().expect("at least one scale");
        tensor_to_sequences(g.value(last), self.model.config().channels)
    }
}

/// `[N, 100]` noise block, row `i` drawn from `seeds[i]`.
pub fn noise_batch<T: Scalar>(seeds: &[u64]) -> Tensor<T> {
    let mut data = Vec::with_capacity(seeds.len() * NOISE_DIM);
    for &s in seeds {
        data.extend_from_slice(sample_noise::<T>(s).data());
    }
    Tensor::new(&[seeds.len(), NOISE_DIM], data).expect("noise rows have NOISE_DIM values")
}

/// Metrics of every evaluated clip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub per_clip: Vec<MetricReport>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.per_clip.iter().map(MetricReport::mean_psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.per_clip.iter().map(MetricReport::mean_ssim))
    }

    pub fn mean_sharpdiff(&self) -> f64 {
        mean(self.per_clip.iter().map(MetricReport::mean_sharpdiff))
    }

    pub const TSV_HEADER: &'static str = "clip\tpsnr\tssim\tsharpdiff";

    /// One line per clip, then the mean over clips.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for (i, r) in self.per_clip.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i}\t{:.6}\t{:.6}\t{:.6}",
                r.mean_psnr(),
                r.mean_ssim(),
                r.mean_sharpdiff()
            );
        }
        let _ = writeln!(
            s,
            "mean\t{:.6}\t{:.6}\t{:.6}",
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_sharpdiff()
        );
        s
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "clips={}\npsnr={}\nssim={}\nsharpdiff={}\n",
            self.per_clip.len(),
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_sharpdiff()
        )
    }

    /// Two-line table: `model  PSNR  SSIM`.
    pub fn summary_table(&self, model_name: &str) -> String {
        format!(
            "{:<24}{:>10}{:>10}\n{:<24}{:>10.2}{:>10.3}\n",
            "model",
            "PSNR",
            "SSIM",
            model_name,
            self.mean_psnr(),
            self.mean_ssim()
        )
    }
}

/// Scores `predict` on every clip. `predict` receives batches of at most
/// `batch_size` clips and returns `l` frames per clip.
pub fn evaluate_clips<T, F>(
    clips: &[Clip<T>],
    l: usize,
    batch_size: usize,
    mode: ColorMode,
    mut predict: F,
) -> Result<EvalReport>
where
    T: Scalar,
    F: FnMut(&[&Clip<T>]) -> Result<Vec<Vec<Frame<T>>>>,
{
    if clips.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let mut report = EvalReport::default();
    for chunk in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&Clip<T>> = chunk.iter().collect();
        let preds = predict(&refs)?;
        if preds.len() != chunk.len() {
            return Err(Error::InvalidArgument(
                "predictor returned the wrong number of sequences".into(),
            ));
        }
        for (clip, pred) in chunk.iter().zip(&preds) {
            let (_, targets, _) = clip_window(clip, l)?;
            report.per_clip.push(evaluate_frames(pred, targets, mode)?);
        }
    }
    Ok(report)
}

/// Evaluates a trained generator; noise-conditioned models use each clip's
/// seed as its noise seed.
pub fn evaluate_generator<T: Scalar>(
    gen: &Generator<'_, T>,
    clips: &[Clip<T>],
    batch_size: usize,
    mode: ColorMode,
) -> Result<EvalReport> {
    let cfg = gen.model.config();
    if let Some(c) = clips.first() {
        let f = &c.frames[0];
        if f.height != cfg.resolution || f.width != cfg.resolution || f.channels != cfg.channels {
            return Err(Error::shape(
                "evaluate",
                format!(
                    "clips are {}x{}x{}, model expects {r}x{r}x{}",
                    f.height,
                    f.width,
                    f.channels,
                    cfg.channels,
                    r = cfg.resolution
                ),
            ));
        }
    }
    let l = cfg.frames;
    evaluate_clips(clips, l, batch_size, mode, |batch| {
        let windows = batch
            .iter()
            .map(|c| clip_window(c, l))
            .collect::<Result<Vec<_>>>()?;
        let starts: Vec<&Frame<T>> = windows.iter().map(|w| w.0).collect();
        let ends: Vec<&Frame<T>> = windows.iter().map(|w| w.2).collect();
        let seeds: Vec<u64> = batch.iter().map(|c| c.seed).collect();
        gen.predict(&starts, &ends, Some(&seeds))
    })
}

pub fn evaluate_crossfade<T: Scalar>(
    clips: &[Clip<T>],
    l: usize,
    mode: ColorMode,
) -> Result<EvalReport> {
    evaluate_clips(clips, l, 64, mode, |batch| {
        batch
            .iter()
            .map(|c| {
                let (s, _, e) = clip_window(c, l)?;
                baseline_crossfade(s, e, l)
            })
            .collect()
    })
}

/// Predictions for several noise seeds and their pairwise mean absolute differences.
#[derive(Debug, Clone)]
pub struct MultimodalSamples<T> {
    pub predictions: Vec<Vec<Frame<T>>>,
    /// `(i, j, mean |p_i - p_j|)` for every `i < j`.
    pub pairwise: Vec<(usize, usize, f64)>,
}

impl<T> MultimodalSamples<T> {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("i\tj\tmean_abs_diff\n");
        for (i, j, d) in &self.pairwise {
            let _ = writeln!(s, "{i}\t{j}\t{d:.6e}");
        }
        s
    }
}

pub fn mean_abs_difference<T: Scalar>(a: &[Frame<T>], b: &[Frame<T>]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (fa, fb) in a.iter().zip(b) {
        for (x, y) in fa.pixels.iter().zip(&fb.pixels) {
            sum += (x.as_f64() - y.as_f64()).abs();
            n += 1;
        }
    }
    sum / n as f64
}

/// One prediction per noise seed for the endpoint pair `(start, end)`.
pub fn sample_multimodal<T: Scalar>(
    gen: &Generator<'_, T>,
    start: &Frame<T>,
    end: &Frame<T>,
    seeds: &[u64],
) -> Result<MultimodalSamples<T>> {
    if !gen.model.config().noise_enabled() {
        return Err(Error::Config(
            "model was trained without noise; sampling needs noise=true".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one noise seed is required".into(),
        ));
    }
    let starts = vec![start; seeds.len()];
    let ends = vec![end; seeds.len()];
    let predictions = gen.predict(&starts, &ends, Some(seeds))?;
    let mut pairwise = Vec::new();
    for i in 0..predictions.len() {
        for j in i + 1..predictions.len() {
            pairwise.push((i, j, mean_abs_difference(&predictions[i], &predictions[j])));
        }
    }
    Ok(MultimodalSamples {
        predictions,
        pairwise,
    })
}

/// Finest-scale discriminator probability for each sequence.
pub fn discriminator_scores<T: Scalar>(
    disc: &Discriminator,
    params: &ParamStore<T>,
    sequences: &[&[Frame<T>]],
) -> Result<Vec<f64>> {
    let block = sequences_to_tensor(sequences)?;
    let k = disc.scales();
    let mut g = Graph::inference();
    let x = g.constant(block);
    let p = disc.forward(&mut g, params, k, x, ParamMode::Frozen)?;
    Ok(g.value(p).data().iter().map(|v| v.as_f64()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_clip, ClipConfig};

    #[test]
    fn crossfade_weights() {
        let a = Frame::<f64>::filled(2, 2, 1, -1.0);
        let b = Frame::<f64>::filled(2, 2, 1, 1.0);
        let mid = baseline_crossfade(&a, &b, 1).unwrap();
        assert_eq!(mid[0].pixels, vec![0.0; 4]);
        let three = baseline_crossfade(&a, &b, 3).unwrap();
        let vals: Vec<f64> = three.iter().map(|f| f.pixels[0]).collect();
        assert_eq!(vals, vec![-0.5, 0.0, 0.5]);
        let same = baseline_crossfade(&a, &a, 4).unwrap();
        assert!(same.iter().all(|f| f == &a));
    }

    #[test]
    fn oracle_predictor_is_perfect_and_means_match() {
        let cfg = ClipConfig {
            frames: 5,
            height: 16,
            width: 16,
            size_range: (2, 4),
            n_shapes: 1,
            ..ClipConfig::default()
        };
        let clips: Vec<Clip<f64>> = (0..3).map(|s| gen_clip(s, &cfg).unwrap()).collect();
        let r = evaluate_clips(&clips, 3, 2, ColorMode::Luminance, |batch| {
            Ok(batch.iter().map(|c| c.frames[1..4].to_vec()).collect())
        })
        .unwrap();
        assert_eq!((r.mean_psnr(), r.mean_ssim()), (100.0, 1.0));

        let fade = evaluate_crossfade(&clips, 3, ColorMode::Luminance).unwrap();
        let manual = fade.per_clip.iter().map(|c| c.mean_psnr()).sum::<f64>() / 3.0;
        assert!((fade.mean_psnr() - manual).abs() < 1e-12);
        assert!(evaluate_crossfade::<f64>(&[], 3, ColorMode::Luminance).is_err());
    }
}
