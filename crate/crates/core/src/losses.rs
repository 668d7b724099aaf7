//! Joint objective: reconstruction, feature-space and adversarial terms summed
//! over scales, plus the spatio-temporal discriminators that drive the
//! adversarial term.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::BipnConfig;
use crate::scalar::Scalar;
use crate::tensor::{he_bound, resize_tensor, Conv2dOptions, Graph, ParamStore, Tensor, Var};

/// Fixed mapping from frames to feature maps used by the feature loss.
///
/// `extract` receives `[M, c, h, w]` frames and must not create trainable nodes.
pub trait FeatureExtractor<T: Scalar> {
    /// Smallest side the extractor accepts; smaller frames are upsampled first.
    fn min_size(&self) -> usize {
        1
    }

    fn extract(&self, g: &mut Graph<T>, frames: Var) -> Result<Var>;
}

/// Degenerate extractor returning its input; reduces the feature loss to the
/// reconstruction loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn extract(&self, _g: &mut Graph<T>, frames: Var) -> Result<Var> {
        Ok(frames)
    }
}

/// Seeded random 3-layer conv network (16/32/64 channels, stride 2) standing
/// in for a pretrained feature network. He-scaled weights keep feature
/// distances on the same order as pixel distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvExtractor<T> {
    params: ParamStore<T>,
}

pub const EXTRACTOR_WIDTHS: [usize; 3] = [16, 32, 64];

impl<T: Scalar> ConvExtractor<T> {
    pub fn new(channels: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut c_in = channels;
        for (i, &w) in EXTRACTOR_WIDTHS.iter().enumerate() {
            let shape = [w, c_in, 3, 3];
            params.insert_uniform(
                &format!("extractor/conv{}/kernel", i + 1),
                &shape,
                he_bound(&shape),
                seed,
            )?;
            params.insert_zeros(&format!("extractor/conv{}/bias", i + 1), &[w])?;
            c_in = w;
        }
        Ok(Self { params })
    }

    pub fn from_params(params: ParamStore<T>) -> Result<Self> {
        for i in 1..=3 {
            for part in ["kernel", "bias"] {
                let name = format!("extractor/conv{i}/{part}");
                if !params.contains(&name) {
                    return Err(Error::UnknownParameter(name));
                }
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }
}

impl<T: Scalar> FeatureExtractor<T> for ConvExtractor<T> {
    fn min_size(&self) -> usize {
        8
    }

    fn extract(&self, g: &mut Graph<T>, frames: Var) -> Result<Var> {
        let mut x = frames;
        for i in 1..=3 {
            let k = g.frozen(&self.params, &format!("extractor/conv{i}/kernel"))?;
            let b = g.frozen(&self.params, &format!("extractor/conv{i}/bias"))?;
            let y = g.conv2d_with(x, k, Some(b), Conv2dOptions::new(2, 1))?;
            x = g.relu(y);
        }
        Ok(x)
    }
}

/// How discriminator parameters enter a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    Frozen,
}

fn load<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    mode: ParamMode,
) -> Result<Var> {
    match mode {
        ParamMode::Trainable => g.param(store, name),
        ParamMode::Frozen => g.frozen(store, name),
    }
}

/// Per-scale spatio-temporal classifiers `D_k`: three conv3d+ReLU stages
/// (temporal stride 1, spatial stride 2) then a linear layer and a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    frames: usize,
    channels: usize,
    resolutions: Vec<usize>,
    widths: Vec<[usize; 3]>,
}

pub const DISC_WIDTHS: [usize; 3] = [16, 32, 64];

fn halve_side(n: usize) -> usize {
    n.div_ceil(2)
}

impl Discriminator {
    pub fn new(model: &BipnConfig, widths: [usize; 3]) -> Result<Self> {
        model.validate()?;
        if widths.contains(&0) {
            return Err(Error::Config(
                "discriminator widths must be positive".into(),
            ));
        }
        let resolutions = (1..=model.scales)
            .map(|k| model.scale_resolution(k))
            .collect();
        let widths = (1..=model.scales)
            .map(|k| widths.map(|w| (w >> (model.scales - k)).max(w.min(8))))
            .collect();
        Ok(Self {
            frames: model.frames,
            channels: model.channels,
            resolutions,
            widths,
        })
    }

    pub fn scales(&self) -> usize {
        self.resolutions.len()
    }

    fn fc_inputs(&self, k: usize) -> usize {
        let side = halve_side(halve_side(halve_side(self.resolutions[k - 1])));
        self.widths[k - 1][2] * self.frames * side * side
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for k in 1..=self.scales() {
            let mut c_in = self.channels;
            for (i, &w) in self.widths[k - 1].iter().enumerate() {
                store.insert_glorot(
                    &format!("disc{k}/conv{}/kernel", i + 1),
                    &[w, c_in, 3, 3, 3],
                    seed,
                )?;
                store.insert_zeros(&format!("disc{k}/conv{}/bias", i + 1), &[w])?;
                c_in = w;
            }
            store.insert_glorot(&format!("disc{k}/fc/weight"), &[1, self.fc_inputs(k)], seed)?;
            store.insert_zeros(&format!("disc{k}/fc/bias"), &[1])?;
        }
        Ok(store)
    }

    /// Probability that each `[N, l*c, r, r]` sequence of the batch is real, shape `[N, 1]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        k: usize,
        sequence: Var,
        mode: ParamMode,
    ) -> Result<Var> {
        if k == 0 || k > self.scales() {
            return Err(Error::InvalidArgument(format!(
                "no discriminator for scale {k}"
            )));
        }
        let shape = g.shape(sequence).to_vec();
        let r = self.resolutions[k - 1];
        if shape.len() != 4
            || shape[1] != self.frames * self.channels
            || shape[2] != r
            || shape[3] != r
        {
            return Err(Error::shape(
                "discriminator",
                format!(
                    "expected [N, {}, {r}, {r}] for scale {k}, got {shape:?}",
                    self.frames * self.channels
                ),
            ));
        }
        let mut x = g.frames_to_volume(sequence, self.frames)?;
        for i in 1..=3 {
            let kern = load(g, params, &format!("disc{k}/conv{i}/kernel"), mode)?;
            let bias = load(g, params, &format!("disc{k}/conv{i}/bias"), mode)?;
            let y = g.conv3d(x, kern, Some(bias), [1, 2, 2], [1, 1, 1])?;
            x = g.relu(y);
        }
        let flat = g.reshape(x, &[shape[0], self.fc_inputs(k)])?;
        let w = load(g, params, &format!("disc{k}/fc/weight"), mode)?;
        let b = load(g, params, &format!("disc{k}/fc/bias"), mode)?;
        let logit = g.fully_connected(flat, w, Some(b))?;
        Ok(g.sigmoid(logit))
    }
}

/// Ground-truth blocks resized to every scale of the pyramid, coarsest first.
pub fn scale_targets<T: Scalar>(finest: &Tensor<T>, model: &BipnConfig) -> Result<Vec<Tensor<T>>> {
    (1..=model.scales)
        .map(|k| {
            let r = model.scale_resolution(k);
            resize_tensor(finest, r, r)
        })
        .collect()
}

fn sum_terms<T: Scalar>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let mut iter = terms.iter().copied();
    let first = iter
        .next()
        .ok_or_else(|| Error::InvalidArgument("loss over zero scales".into()))?;
    iter.try_fold(first, |acc, t| g.add(acc, t))
}

/// A loss summed over scales together with its per-scale terms.
#[derive(Debug, Clone)]
pub struct ScaledLoss {
    pub total: Var,
    pub per_scale: Vec<Var>,
}

impl ScaledLoss {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> Vec<f64> {
        self.per_scale
            .iter()
            .map(|&v| g.scalar(v).as_f64())
            .collect()
    }
}

fn check_pairs<T: Scalar>(
    g: &Graph<T>,
    op: &'static str,
    preds: &[Var],
    targets: &[Var],
) -> Result<()> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::shape(
            op,
            format!("{} predictions vs {} targets", preds.len(), targets.len()),
        ));
    }
    for (k, (&p, &t)) in preds.iter().zip(targets).enumerate() {
        if g.shape(p) != g.shape(t) {
            return Err(Error::shape(
                op,
                format!(
                    "scale {}: prediction {:?} vs target {:?}",
                    k + 1,
                    g.shape(p),
                    g.shape(t)
                ),
            ));
        }
    }
    Ok(())
}

/// Sum over scales of the mean squared pixel error.
pub fn rec_loss<T: Scalar>(g: &mut Graph<T>, preds: &[Var], targets: &[Var]) -> Result<ScaledLoss> {
    check_pairs(g, "rec_loss", preds, targets)?;
    let per_scale = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| g.mse(p, t))
        .collect::<Result<Vec<_>>>()?;
    let total = sum_terms(g, &per_scale)?;
    Ok(ScaledLoss { total, per_scale })
}

/// Sum over scales of the mean squared distance between per-frame features.
pub fn feat_loss<T: Scalar>(
    g: &mut Graph<T>,
    preds: &[Var],
    targets: &[Var],
    extractor: &dyn FeatureExtractor<T>,
    channels: usize,
) -> Result<ScaledLoss> {
    check_pairs(g, "feat_loss", preds, targets)?;
    let mut per_scale = Vec::with_capacity(preds.len());
    for (&p, &t) in preds.iter().zip(targets) {
        let fp = frame_features(g, p, extractor, channels)?;
        let ft = frame_features(g, t, extractor, channels)?;
        per_scale.push(g.mse(fp, ft)?);
    }
    let total = sum_terms(g, &per_scale)?;
    Ok(ScaledLoss { total, per_scale })
}

fn frame_features<T: Scalar>(
    g: &mut Graph<T>,
    block: Var,
    extractor: &dyn FeatureExtractor<T>,
    channels: usize,
) -> Result<Var> {
    let s = g.shape(block).to_vec();
    if s.len() != 4 || !s[1].is_multiple_of(channels) {
        return Err(Error::shape(
            "feat_loss",
            format!("{s:?} is not a block of {channels}-channel frames"),
        ));
    }
    let frames = g.reshape(block, &[s[0] * s[1] / channels, channels, s[2], s[3]])?;
    let min = extractor.min_size();
    let frames = if s[2] < min || s[3] < min {
        g.resize_bilinear(frames, s[2].max(min), s[3].max(min))?
    } else {
        frames
    };
    extractor.extract(g, frames)
}

/// Generator adversarial loss: `sum_k bce(D_k(prediction), 1)`.
pub fn adv_gen_loss<T: Scalar>(g: &mut Graph<T>, fake_probs: &[Var]) -> Result<ScaledLoss> {
    let per_scale: Vec<Var> = fake_probs.iter().map(|&p| g.bce(p, T::one())).collect();
    let total = sum_terms(g, &per_scale)?;
    Ok(ScaledLoss { total, per_scale })
}

/// Discriminator loss: `sum_k bce(D_k(real), 1) + bce(D_k(fake), 0)`.
pub fn disc_loss<T: Scalar>(
    g: &mut Graph<T>,
    real_probs: &[Var],
    fake_probs: &[Var],
) -> Result<ScaledLoss> {
    if real_probs.len() != fake_probs.len() {
        return Err(Error::shape(
            "disc_loss",
            format!(
                "{} real vs {} fake scales",
                real_probs.len(),
                fake_probs.len()
            ),
        ));
    }
    let mut per_scale = Vec::with_capacity(real_probs.len());
    for (&r, &f) in real_probs.iter().zip(fake_probs) {
        let lr = g.bce(r, T::one());
        let lf = g.bce(f, T::zero());
        per_scale.push(g.add(lr, lf)?);
    }
    let total = sum_terms(g, &per_scale)?;
    Ok(ScaledLoss { total, per_scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// `L_rec + L_feat + L_adv`.
    Deterministic,
    /// `L_feat + L_adv`; the reconstruction term would pull every noise sample
    /// towards the same mean prediction.
    Multimodal,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Deterministic => "deterministic",
            LossMode::Multimodal => "multimodal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "deterministic" => Some(LossMode::Deterministic),
            "multimodal" => Some(LossMode::Multimodal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub feat: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            feat: 1.0,
            adv: 1.0,
        }
    }
}

/// Per-scale and total loss values of one iteration. A term that was not
/// evaluated (zero weight, or reconstruction in multi-modal mode) is `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub iteration: u64,
    pub rec: Option<Vec<f64>>,
    pub feat: Option<Vec<f64>>,
    pub adv: Option<Vec<f64>>,
    /// Weighted objective actually minimised.
    pub total: f64,
    pub disc: Option<f64>,
}

fn opt_sum(v: &Option<Vec<f64>>) -> Option<f64> {
    v.as_ref().map(|x| x.iter().sum())
}

impl LossReport {
    pub fn rec_total(&self) -> Option<f64> {
        opt_sum(&self.rec)
    }

    pub fn feat_total(&self) -> Option<f64> {
        opt_sum(&self.feat)
    }

    pub fn adv_total(&self) -> Option<f64> {
        opt_sum(&self.adv)
    }

    /// Unweighted generator loss of scale `k` alone (1-based).
    pub fn scale_total(&self, k: usize) -> f64 {
        [&self.rec, &self.feat, &self.adv]
            .iter()
            .filter_map(|t| t.as_ref().map(|v| v[k - 1]))
            .sum()
    }

    /// Name and value of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(&'static str, f64)> {
        let named = [
            ("L_rec", &self.rec),
            ("L_feat", &self.feat),
            ("L_adv", &self.adv),
        ];
        for (name, term) in named {
            if let Some(v) = term
                .as_ref()
                .and_then(|v| v.iter().find(|x| !x.is_finite()))
            {
                return Some((name, *v));
            }
        }
        if !self.total.is_finite() {
            return Some(("L", self.total));
        }
        match self.disc {
            Some(d) if !d.is_finite() => Some(("L_D", d)),
            _ => None,
        }
    }

    pub const TSV_HEADER: &'static str = "iteration\tL_rec\tL_feat\tL_adv\tL\tL_D";
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6e}"))
}

impl fmt::Display for LossReport {
    /// One tab-separated log line: iteration, L_rec, L_feat, L_adv, L, L_D.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.iteration,
            cell(self.rec_total()),
            cell(self.feat_total()),
            cell(self.adv_total()),
            cell(Some(self.total)),
            cell(self.disc)
        )
    }
}

/// Everything the generator objective needs besides the graph.
pub struct JointLoss<'a, T: Scalar> {
    pub extractor: &'a dyn FeatureExtractor<T>,
    pub discriminator: &'a Discriminator,
    pub disc_params: &'a ParamStore<T>,
    pub mode: LossMode,
    pub weights: LossWeights,
    pub channels: usize,
}

impl<T: Scalar> JointLoss<'_, T> {
    /// Weighted generator objective. Discriminator parameters enter as
    /// constants, so backward never reaches them.
    pub fn evaluate(
        &self,
        g: &mut Graph<T>,
        preds: &[Var],
        targets: &[Var],
    ) -> Result<(Var, LossReport)> {
        check_pairs(g, "joint_loss", preds, targets)?;
        let mut report = LossReport::default();
        let mut weighted = Vec::new();
        if self.mode == LossMode::Deterministic && self.weights.rec != 0.0 {
            let l = rec_loss(g, preds, targets)?;
            report.rec = Some(l.values(g));
            weighted.push(g.scale(l.total, T::of(self.weights.rec)));
        }
        if self.weights.feat != 0.0 {
            let l = feat_loss(g, preds, targets, self.extractor, self.channels)?;
            report.feat = Some(l.values(g));
            weighted.push(g.scale(l.total, T::of(self.weights.feat)));
        }
        if self.weights.adv != 0.0 {
            let probs = preds
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    self.discriminator
                        .forward(g, self.disc_params, i + 1, p, ParamMode::Frozen)
                })
                .collect::<Result<Vec<_>>>()?;
            let l = adv_gen_loss(g, &probs)?;
            report.adv = Some(l.values(g));
            weighted.push(g.scale(l.total, T::of(self.weights.adv)));
        }
        let total = if weighted.is_empty() {
            g.constant(Tensor::scalar(T::zero()))
        } else {
            sum_terms(g, &weighted)?
        };
        report.total = g.scalar(total).as_f64();
        Ok((total, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BipnConfig;

    fn scalar_var(g: &mut Graph<f64>, v: f64) -> Var {
        g.constant(Tensor::from_f64(&[1, 1], &[v]).unwrap())
    }

    #[test]
    fn rec_loss_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64));
        let l = rec_loss(&mut g, &[p], &[p]).unwrap();
        assert_eq!(g.scalar(l.total), 0.0);

        let a = g.constant(Tensor::full(&[1, 1, 1, 1], 0.5));
        let b = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let l = rec_loss(&mut g, &[a], &[b]).unwrap();
        assert_eq!(g.scalar(l.total), 0.25);

        // per-scale MSEs 0.1 and 0.2 sum to 0.3
        let p1 = g.constant(Tensor::full(&[1, 1, 2, 2], 0.1f64.sqrt()));
        let p2 = g.constant(Tensor::full(&[1, 1, 4, 4], 0.2f64.sqrt()));
        let t1 = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let t2 = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let l = rec_loss(&mut g, &[p1, p2], &[t1, t2]).unwrap();
        assert!((g.scalar(l.total) - 0.3).abs() < 1e-12);
        assert!(rec_loss(&mut g, &[p1], &[t2]).is_err());
    }

    #[test]
    fn identity_feature_loss_equals_rec_loss() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::from_fn(&[2, 6, 5, 5], |i| (i as f64 * 0.3).sin()));
        let t = g.constant(Tensor::from_fn(&[2, 6, 5, 5], |i| (i as f64 * 0.7).cos()));
        let r = rec_loss(&mut g, &[p], &[t]).unwrap();
        let f = feat_loss(&mut g, &[p], &[t], &IdentityExtractor, 3).unwrap();
        assert_eq!(g.scalar(r.total).to_bits(), g.scalar(f.total).to_bits());
    }

    #[test]
    fn conv_feature_loss_shrinks_with_perturbation() {
        let ex = ConvExtractor::<f64>::new(1, 11).unwrap();
        let base = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64 * 0.9).sin());
        let mut last = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let mut g = Graph::<f64>::new();
            let t = g.constant(base.clone());
            let p = g.constant(base.map(|v| v + eps * v.cos()));
            let l = feat_loss(&mut g, &[p], &[t], &ex, 1).unwrap();
            let v = g.scalar(l.total);
            assert!(v > 0.0 && v < last, "eps={eps} loss={v}");
            last = v;
        }
        let mut g = Graph::<f64>::new();
        let t = g.constant(base.clone());
        let l = feat_loss(&mut g, &[t], &[t], &ex, 1).unwrap();
        assert_eq!(g.scalar(l.total), 0.0);
    }

    #[test]
    fn adversarial_examples() {
        let mut g = Graph::<f64>::new();
        let halves: Vec<Var> = (0..4).map(|_| scalar_var(&mut g, 0.5)).collect();
        let l = adv_gen_loss(&mut g, &halves[..1]).unwrap();
        assert!((g.scalar(l.total) - std::f64::consts::LN_2).abs() < 1e-12);
        let l = adv_gen_loss(&mut g, &halves).unwrap();
        assert!((g.scalar(l.total) - 2.772588722239781).abs() < 1e-12);
        let one = scalar_var(&mut g, 1.0);
        let l = adv_gen_loss(&mut g, &[one]).unwrap();
        assert!(g.scalar(l.total) < 1e-6);

        let real = scalar_var(&mut g, 0.8);
        let fake = scalar_var(&mut g, 0.3);
        let l = disc_loss(&mut g, &[real], &[fake]).unwrap();
        assert!((g.scalar(l.total) - 0.579818495252942).abs() < 1e-12);
        let l = disc_loss(&mut g, &halves[..1], &halves[1..2]).unwrap();
        assert!((g.scalar(l.total) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let zero = scalar_var(&mut g, 0.0);
        let l = disc_loss(&mut g, &[one], &[zero]).unwrap();
        assert!(g.scalar(l.total) < 1e-6);
    }

    #[test]
    fn adv_loss_decreases_with_probability() {
        let mut last = f64::INFINITY;
        for i in 1..20 {
            let mut g = Graph::<f64>::new();
            let p = scalar_var(&mut g, i as f64 / 20.0);
            let l = adv_gen_loss(&mut g, &[p]).unwrap();
            assert!(g.scalar(l.total) < last);
            last = g.scalar(l.total);
        }
    }

    fn model_cfg(scales: usize, frames: usize, res: usize) -> BipnConfig {
        BipnConfig {
            scales,
            frames,
            resolution: res,
            channels: 1,
            enc_channels: [4, 4, 4],
            dec_channels: [4, 4, 4],
            noise_dim: None,
        }
    }

    #[test]
    fn discriminator_range_and_zero_weights() {
        let cfg = model_cfg(4, 3, 16);
        let d = Discriminator::new(&cfg, [4, 4, 4]).unwrap();
        let params = d.init_params::<f64>(5).unwrap();
        let mut zero = params.clone();
        for name in params.names().map(String::from).collect::<Vec<_>>() {
            let shape = zero.value(&name).unwrap().shape().to_vec();
            zero.entry_mut(&name).unwrap().value = Tensor::zeros(&shape);
        }
        for k in 1..=4 {
            let r = cfg.scale_resolution(k);
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::from_fn(&[2, 3, r, r], |i| (i as f64).sin() * 3.0));
            let p = d
                .forward(&mut g, &params, k, x, ParamMode::Trainable)
                .unwrap();
            assert_eq!(g.shape(p), &[2, 1]);
            assert!(g.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0));
            let again = d
                .forward(&mut g, &params, k, x, ParamMode::Trainable)
                .unwrap();
            assert_eq!(g.value(p), g.value(again));
            let z = d.forward(&mut g, &zero, k, x, ParamMode::Frozen).unwrap();
            assert!(g.value(z).data().iter().all(|&v| v == 0.5));
        }
        let mut g = Graph::<f64>::new();
        let bad = g.constant(Tensor::zeros(&[1, 2, 16, 16]));
        assert!(d
            .forward(&mut g, &params, 4, bad, ParamMode::Frozen)
            .is_err());
    }

    #[test]
    fn joint_loss_modes() {
        let cfg = model_cfg(1, 2, 8);
        let d = Discriminator::new(&cfg, [4, 4, 4]).unwrap();
        let dp = d.init_params::<f64>(1).unwrap();
        let mut g = Graph::<f64>::new();
        let p = g.variable(Tensor::from_fn(&[1, 2, 8, 8], |i| {
            (i as f64 * 0.2).sin() * 0.5
        }));
        let t = g.constant(Tensor::zeros(&[1, 2, 8, 8]));
        let mut j = JointLoss {
            extractor: &IdentityExtractor,
            discriminator: &d,
            disc_params: &dp,
            mode: LossMode::Deterministic,
            weights: LossWeights::default(),
            channels: 1,
        };
        let (l, rep) = j.evaluate(&mut g, &[p], &[t]).unwrap();
        let sum = rep.rec_total().unwrap() + rep.feat_total().unwrap() + rep.adv_total().unwrap();
        assert!((rep.total - sum).abs() < 1e-12);
        assert_eq!(g.scalar(l), rep.total);

        j.mode = LossMode::Multimodal;
        let (_, rep) = j.evaluate(&mut g, &[p], &[t]).unwrap();
        assert!(rep.rec.is_none());
        assert!((rep.total - rep.feat_total().unwrap() - rep.adv_total().unwrap()).abs() < 1e-12);
        assert!(rep.to_string().split('\t').nth(1) == Some("NA"));
    }

    #[test]
    fn report_sums_and_tsv() {
        let rep = LossReport {
            iteration: 3,
            rec: Some(vec![0.1, 0.2]),
            feat: Some(vec![0.05, 0.05]),
            adv: Some(vec![0.3, 0.3]),
            total: 1.0,
            disc: Some(1.4),
        };
        assert!((rep.rec_total().unwrap() - 0.3).abs() < 1e-15);
        assert!((rep.scale_total(2) - 0.55).abs() < 1e-15);
        let line = rep.to_string();
        assert_eq!(line.split('\t').count(), 6);
        assert!(line.starts_with("3\t"));
        assert!(rep.first_non_finite().is_none());
    }
}
