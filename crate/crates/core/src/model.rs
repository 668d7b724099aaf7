//! The bidirectional encoder-decoder and its coarse-to-fine pyramid.
//!
//! Each scale owns a forward encoder (start frame), a reverse encoder
//! (channel-reversed end frame) and one decoder that emits all `l`
//! intermediate frames at once as an `[N, l*c, r, r]` block. Frame `i` of the
//! block occupies channels `i*c..(i+1)*c` and corresponds to `x_{i+2}` in
//! forward time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    conv_output_size, Conv2dOptions, Deconv2dOptions, Graph, ParamStore, Tensor, Var,
};

/// Length of the noise vector of the multi-modal variant.
pub const NOISE_DIM: usize = 100;

const ENC_KERNELS: [usize; 3] = [5, 3, 3];
const DEC_KERNELS: [usize; 4] = [3, 3, 3, 5];
/// Narrowest layer of a coarse scale.
const MIN_WIDTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct BipnConfig {
    /// 1 (single-scale) or 4 (coarse-to-fine pyramid).
    pub scales: usize,
    /// Number of intermediate frames `l`.
    pub frames: usize,
    /// Finest-scale frame side `s`.
    pub resolution: usize,
    pub channels: usize,
    /// Encoder widths at the finest scale.
    pub enc_channels: [usize; 3],
    /// Widths of the first three decoder stages at the finest scale; the
    /// last stage always emits `frames * channels`.
    pub dec_channels: [usize; 3],
    /// Length of the noise vector when the multi-modal variant is enabled.
    pub noise_dim: Option<usize>,
}

impl Default for BipnConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            frames: 14,
            resolution: 64,
            channels: 1,
            enc_channels: [32, 64, 128],
            dec_channels: [128, 64, 32],
            noise_dim: None,
        }
    }
}

impl BipnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.scales != 1 && self.scales != 4 {
            return fail(format!("scales must be 1 or 4, got {}", self.scales));
        }
        if self.frames == 0 {
            return fail("at least one intermediate frame is required".into());
        }
        if self.channels == 0 || self.resolution == 0 {
            return fail("channels and resolution must be positive".into());
        }
        if self.scales == 4 && !self.resolution.is_multiple_of(8) {
            return fail(format!(
                "resolution {} is not divisible by 8",
                self.resolution
            ));
        }
        if self.enc_channels.contains(&0) || self.dec_channels.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        if let Some(d) = self.noise_dim {
            if d != NOISE_DIM {
                return fail(format!("noise vector length must be {NOISE_DIM}, got {d}"));
            }
        }
        Ok(())
    }

    pub fn noise_enabled(&self) -> bool {
        self.noise_dim.is_some()
    }

    /// Resolution of scale `k` (1-based, coarsest first).
    pub fn scale_resolution(&self, k: usize) -> usize {
        self.resolution >> (self.scales - k)
    }
}

/// `(forward, reverse)` auxiliary frame counts: first `ceil(l/2)` frames go
/// to the start-frame side, the remaining `floor(l/2)` to the end-frame side.
pub fn aux_split(frames: usize) -> (usize, usize) {
    (frames.div_ceil(2), frames / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    fn prefix(self) -> &'static str {
        match self {
            Direction::Forward => "fwd_enc",
            Direction::Reverse => "rev_enc",
        }
    }
}

/// Resolved layer geometry of one scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleLayout {
    pub index: usize,
    pub resolution: usize,
    pub enc: [usize; 3],
    pub dec: [usize; 3],
    pub fwd_in: usize,
    pub rev_in: usize,
    /// Spatial side entering each encoder stage, then the latent side.
    pub sizes: [usize; 4],
    /// Encoder stage strides; a side of 1 is not halved further.
    pub strides: [usize; 3],
}

impl ScaleLayout {
    pub fn latent_size(&self) -> usize {
        self.sizes[3]
    }

    /// Side of the map the noise projection is concatenated to.
    pub fn noise_map_size(&self) -> usize {
        self.sizes[2]
    }

    fn prefix(&self) -> String {
        format!("scale{}", self.index)
    }
}

fn scaled_width(width: usize, halvings: usize) -> usize {
    (width >> halvings).max(MIN_WIDTH.min(width))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bipn {
    config: BipnConfig,
    layouts: Vec<ScaleLayout>,
}

/// Latent representation of one scale: `z = concat(z_f, z_r)`.
#[derive(Debug, Clone, Copy)]
pub struct LatentRep {
    pub z_f: Var,
    pub z_r: Var,
    pub z: Var,
}

impl Bipn {
    pub fn new(config: BipnConfig) -> Result<Self> {
        config.validate()?;
        let (fwd_aux, rev_aux) = aux_split(config.frames);
        let mut layouts = Vec::with_capacity(config.scales);
        for k in 1..=config.scales {
            let halvings = config.scales - k;
            let resolution = config.scale_resolution(k);
            let mut sizes = [resolution, 0, 0, 0];
            let mut strides = [1; 3];
            for i in 0..3 {
                strides[i] = if sizes[i] > 1 { 2 } else { 1 };
                sizes[i + 1] =
                    conv_output_size(sizes[i], ENC_KERNELS[i], strides[i], ENC_KERNELS[i] / 2)
                        .expect("padded kernels always fit");
            }
            let has_aux = k > 1;
            layouts.push(ScaleLayout {
                index: k,
                resolution,
                enc: config.enc_channels.map(|w| scaled_width(w, halvings)),
                dec: config.dec_channels.map(|w| scaled_width(w, halvings)),
                fwd_in: config.channels * (1 + if has_aux { fwd_aux } else { 0 }),
                rev_in: config.channels * (1 + if has_aux { rev_aux } else { 0 }),
                sizes,
                strides,
            });
        }
        Ok(Self { config, layouts })
    }

    pub fn config(&self) -> &BipnConfig {
        &self.config
    }

    pub fn layouts(&self) -> &[ScaleLayout] {
        &self.layouts
    }

    pub fn layout(&self, k: usize) -> &ScaleLayout {
        &self.layouts[k - 1]
    }

    fn out_channels(&self) -> usize {
        self.config.frames * self.config.channels
    }

    /// Glorot-initialised weights and zero biases for every scale.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for lay in &self.layouts {
            let p = lay.prefix();
            for dir in [Direction::Forward, Direction::Reverse] {
                let enc = format!("{p}/{}", dir.prefix());
                let mut c_in = match dir {
                    Direction::Forward => lay.fwd_in,
                    Direction::Reverse => lay.rev_in,
                };
                for (i, (&w, &k)) in lay.enc.iter().zip(&ENC_KERNELS).enumerate() {
                    if i == 2 && self.config.noise_enabled() {
                        c_in += 1;
                    }
                    store.insert_glorot(
                        &format!("{enc}/conv{}/kernel", i + 1),
                        &[w, c_in, k, k],
                        seed,
                    )?;
                    store.insert_zeros(&format!("{enc}/conv{}/bias", i + 1), &[w])?;
                    c_in = w;
                }
                if let Some(dim) = self.config.noise_dim {
                    let m = lay.noise_map_size() * lay.noise_map_size();
                    store.insert_glorot(&format!("{enc}/noise_fc/weight"), &[m, dim], seed)?;
                    store.insert_zeros(&format!("{enc}/noise_fc/bias"), &[m])?;
                }
            }
            let widths = [
                2 * lay.enc[2],
                lay.dec[0],
                lay.dec[1],
                lay.dec[2],
                self.out_channels(),
            ];
            for (i, &k) in DEC_KERNELS.iter().enumerate() {
                store.insert_glorot(
                    &format!("{p}/dec/deconv{}/kernel", i + 1),
                    &[widths[i], widths[i + 1], k, k],
                    seed,
                )?;
                store.insert_zeros(&format!("{p}/dec/deconv{}/bias", i + 1), &[widths[i + 1]])?;
            }
        }
        Ok(store)
    }

    fn check_spatial<T: Scalar>(
        &self,
        g: &Graph<T>,
        v: Var,
        lay: &ScaleLayout,
        what: &str,
    ) -> Result<()> {
        let s = g.shape(v);
        if s.len() != 4 || s[2] != lay.resolution || s[3] != lay.resolution {
            return Err(Error::shape(
                "bipn",
                format!(
                    "{what} {s:?} does not match scale {} resolution {}",
                    lay.index, lay.resolution
                ),
            ));
        }
        Ok(())
    }

    /// One encoder: three strided conv+ReLU stages, with the projected noise
    /// map joined before the third stage. The reverse direction reverses the
    /// frame's channels before the auxiliary frames are attached.
    #[allow(clippy::too_many_arguments)]
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        k: usize,
        direction: Direction,
        frame: Var,
        aux: Option<Var>,
        noise: Option<Var>,
    ) -> Result<Var> {
        let lay = self.layout(k);
        self.check_spatial(g, frame, lay, "frame")?;
        let frame = match direction {
            Direction::Forward => frame,
            Direction::Reverse => reverse_channels(g, frame)?,
        };
        let mut x = match aux {
            Some(a) => {
                self.check_spatial(g, a, lay, "auxiliary block")?;
                g.concat_channels(frame, a)?
            }
            None => frame,
        };
        let prefix = format!("{}/{}", lay.prefix(), direction.prefix());
        for (i, &ksize) in ENC_KERNELS.iter().enumerate() {
            if i == 2 {
                match (self.config.noise_enabled(), noise) {
                    (true, Some(z)) => {
                        let w = g.param(params, &format!("{prefix}/noise_fc/weight"))?;
                        let b = g.param(params, &format!("{prefix}/noise_fc/bias"))?;
                        let proj = g.fully_connected(z, w, Some(b))?;
                        let n = g.shape(x)[0];
                        let side = lay.noise_map_size();
                        let map = g.reshape(proj, &[n, 1, side, side])?;
                        x = g.concat_channels(x, map)?;
                    }
                    (true, None) => {
                        return Err(Error::InvalidArgument(
                            "noise-conditioned model needs a noise vector".into(),
                        ))
                    }
                    (false, Some(_)) => {
                        return Err(Error::InvalidArgument(
                            "model was built without a noise input".into(),
                        ))
                    }
                    (false, None) => {}
                }
            }
            let kern = g.param(params, &format!("{prefix}/conv{}/kernel", i + 1))?;
            let bias = g.param(params, &format!("{prefix}/conv{}/bias", i + 1))?;
            let opts = Conv2dOptions::new(lay.strides[i], ksize / 2);
            let y = g.conv2d_with(x, kern, Some(bias), opts)?;
            x = g.relu(y);
        }
        Ok(x)
    }

    /// Four transposed-convolution stages mirroring the encoder, ReLU between
    /// stages and tanh on the output.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        k: usize,
        z: Var,
    ) -> Result<Var> {
        let lay = self.layout(k);
        let prefix = format!("{}/dec", lay.prefix());
        let mut x = z;
        for (i, &ksize) in DEC_KERNELS.iter().enumerate() {
            let kern = g.param(params, &format!("{prefix}/deconv{}/kernel", i + 1))?;
            let bias = g.param(params, &format!("{prefix}/deconv{}/bias", i + 1))?;
            let opts = if i < 3 {
                // undo encoder stage 2 - i
                let stage = 2 - i;
                let stride = lay.strides[stage];
                let (from, to) = (g.shape(x)[2], lay.sizes[stage]);
                let pad = ksize / 2;
                let base = (from - 1) * stride + ksize - 2 * pad;
                Deconv2dOptions {
                    stride: [stride; 2],
                    padding: [pad; 2],
                    output_padding: [to - base; 2],
                }
            } else {
                Deconv2dOptions::new(1, ksize / 2)
            };
            let y = g.deconv2d_with(x, kern, Some(bias), opts)?;
            x = if i < 3 { g.relu(y) } else { g.tanh(y) };
        }
        Ok(x)
    }

    /// Encoders and latent of one scale.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_pair<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        k: usize,
        start: Var,
        end: Var,
        noise: Option<Var>,
        aux: Option<(Var, Var)>,
    ) -> Result<LatentRep> {
        if g.shape(start) != g.shape(end) {
            return Err(Error::shape(
                "bipn",
                format!(
                    "start {:?} and end {:?} differ",
                    g.shape(start),
                    g.shape(end)
                ),
            ));
        }
        let (fa, ra) = match aux {
            Some((f, r)) => (Some(f), (!g.value(r).is_empty()).then_some(r)),
            None => (None, None),
        };
        let z_f = self.encode(g, params, k, Direction::Forward, start, fa, noise)?;
        let z_r = self.encode(g, params, k, Direction::Reverse, end, ra, noise)?;
        let z = g.concat_channels(z_f, z_r)?;
        Ok(LatentRep { z_f, z_r, z })
    }

    /// Single-scale prediction `decode(concat(enc_f(start+aux_f), enc_r(end+aux_r)))`.
    #[allow(clippy::too_many_arguments)]
    pub fn bipn_forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        k: usize,
        start: Var,
        end: Var,
        noise: Option<Var>,
        aux: Option<(Var, Var)>,
    ) -> Result<Var> {
        let latent = self.encode_pair(g, params, k, start, end, noise, aux)?;
        self.decode(g, params, k, latent.z)
    }

    /// Coarse-to-fine prediction from finest-scale `[N,c,s,s]` start/end
    /// frames. Returns one `[N, l*c, r_k, r_k]` block per scale, coarsest
    /// first; the last one is the final prediction.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        start: Var,
        end: Var,
        noise: Option<Var>,
    ) -> Result<Vec<Var>> {
        let top = self.layouts.last().expect("at least one scale");
        self.check_spatial(g, start, top, "start frame")?;
        let c = self.config.channels;
        let (fwd_aux, rev_aux) = aux_split(self.config.frames);
        let mut preds: Vec<Var> = Vec::with_capacity(self.layouts.len());
        for lay in &self.layouts {
            let r = lay.resolution;
            let x_st = g.resize_bilinear(start, r, r)?;
            let x_ed = g.resize_bilinear(end, r, r)?;
            let aux = match preds.last() {
                Some(&prev) => {
                    let up = g.resize_bilinear(prev, r, r)?;
                    let f = g.slice(up, 1, 0, fwd_aux * c)?;
                    let b = g.slice(up, 1, fwd_aux * c, rev_aux * c)?;
                    Some((f, b))
                }
                None => None,
            };
            preds.push(self.bipn_forward(g, params, lay.index, x_st, x_ed, noise, aux)?);
        }
        Ok(preds)
    }
}

/// Reverses the channel axis of a batched `[N, C, ...]` node.
pub fn reverse_channels<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let c = g.shape(x)[1];
    if c == 1 {
        return Ok(x);
    }
    let parts = (0..c)
        .rev()
        .map(|ch| g.slice(x, 1, ch, 1))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&parts, 1)
}

/// 100 independent standard-normal values, a pure function of `seed`.
pub fn sample_noise<T: Scalar>(seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[NOISE_DIM], |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::of(v)
    })
}

/// Stacks per-sample frames into an `[N, c, h, w]` tensor.
pub fn frames_to_tensor<T: Scalar>(frames: &[&Frame<T>]) -> Result<Tensor<T>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames".into()))?;
    let mut data = Vec::with_capacity(frames.len() * first.pixels.len());
    for f in frames {
        if !f.same_dims(first) {
            return Err(Error::shape(
                "frames",
                "frames of one batch differ in size".to_string(),
            ));
        }
        data.extend(f.to_chw());
    }
    Tensor::new(
        &[frames.len(), first.channels, first.height, first.width],
        data,
    )
}

/// Stacks per-sample frame sequences into an `[N, l*c, h, w]` block.
pub fn sequences_to_tensor<T: Scalar>(seqs: &[&[Frame<T>]]) -> Result<Tensor<T>> {
    let first = seqs
        .first()
        .and_then(|s| s.first())
        .ok_or_else(|| Error::InvalidArgument("no frames".into()))?;
    let l = seqs[0].len();
    let mut data = Vec::new();
    for seq in seqs {
        if seq.len() != l {
            return Err(Error::shape(
                "frames",
                format!("sequences of {} and {l} frames", seq.len()),
            ));
        }
        for f in seq.iter() {
            if !f.same_dims(first) {
                return Err(Error::shape(
                    "frames",
                    "frames of one batch differ in size".to_string(),
                ));
            }
            data.extend(f.to_chw());
        }
    }
    Tensor::new(
        &[seqs.len(), l * first.channels, first.height, first.width],
        data,
    )
}

/// Splits an `[N, l*c, h, w]` block back into per-sample frame lists.
pub fn tensor_to_sequences<T: Scalar>(
    block: &Tensor<T>,
    channels: usize,
) -> Result<Vec<Vec<Frame<T>>>> {
    let s = block.shape();
    if s.len() != 4 || channels == 0 || !s[1].is_multiple_of(channels) {
        return Err(Error::shape(
            "frames",
            format!("{s:?} is not a block of {channels}-channel frames"),
        ));
    }
    let (n, l, h, w) = (s[0], s[1] / channels, s[2], s[3]);
    let per = channels * h * w;
    (0..n)
        .map(|i| {
            (0..l)
                .map(|f| {
                    let start = (i * l + f) * per;
                    Frame::from_chw(h, w, channels, &block.data()[start..start + per])
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(scales: usize, frames: usize, resolution: usize, noise: bool) -> Bipn {
        Bipn::new(BipnConfig {
            scales,
            frames,
            resolution,
            channels: 1,
            enc_channels: [4, 4, 4],
            dec_channels: [4, 4, 4],
            noise_dim: noise.then_some(NOISE_DIM),
        })
        .unwrap()
    }

    fn inputs(g: &mut Graph<f64>, n: usize, c: usize, s: usize) -> (Var, Var) {
        let a = g.constant(Tensor::from_fn(&[n, c, s, s], |i| (i as f64 * 0.37).sin()));
        let b = g.constant(Tensor::from_fn(&[n, c, s, s], |i| (i as f64 * 0.11).cos()));
        (a, b)
    }

    #[test]
    fn encoder_latent_sizes() {
        let m = tiny(1, 2, 64, false);
        assert_eq!(m.layout(1).latent_size(), 8);
        let m = tiny(1, 2, 32, false);
        assert_eq!(m.layout(1).latent_size(), 4);
        let m = tiny(4, 2, 32, false);
        let sides: Vec<_> = m
            .layouts()
            .iter()
            .map(|l| (l.resolution, l.latent_size()))
            .collect();
        assert_eq!(sides, vec![(4, 1), (8, 1), (16, 2), (32, 4)]);
    }

    #[test]
    fn decoder_restores_resolution() {
        for (scales, s) in [(1, 64), (1, 32), (1, 8), (4, 32), (4, 64)] {
            let m = tiny(scales, 3, s, false);
            let params = m.init_params::<f64>(1).unwrap();
            let mut g = Graph::inference();
            let (a, b) = inputs(&mut g, 2, 1, s);
            let preds = m.forward(&mut g, &params, a, b, None).unwrap();
            for (lay, p) in m.layouts().iter().zip(&preds) {
                assert_eq!(g.shape(*p), &[2, 3, lay.resolution, lay.resolution]);
                assert!(g.value(*p).data().iter().all(|v| v.abs() < 1.0));
            }
        }
    }

    #[test]
    fn noise_adds_one_stage_three_channel() {
        let plain = tiny(1, 1, 16, false).init_params::<f64>(0).unwrap();
        let noisy = tiny(1, 1, 16, true).init_params::<f64>(0).unwrap();
        let k = "scale1/fwd_enc/conv3/kernel";
        let (a, b) = (
            plain.value(k).unwrap().shape(),
            noisy.value(k).unwrap().shape(),
        );
        assert_eq!(a[1] + 1, b[1]);
        assert_eq!(a[0], b[0]);
        assert_eq!(
            noisy
                .value("scale1/rev_enc/noise_fc/weight")
                .unwrap()
                .shape(),
            &[16, NOISE_DIM]
        );
    }

    #[test]
    fn output_channels_are_frames_times_channels() {
        let m = Bipn::new(BipnConfig {
            scales: 1,
            frames: 1,
            resolution: 16,
            channels: 3,
            enc_channels: [4, 4, 4],
            dec_channels: [4, 4, 4],
            noise_dim: None,
        })
        .unwrap();
        let p = m.init_params::<f32>(0).unwrap();
        assert_eq!(p.value("scale1/dec/deconv4/kernel").unwrap().shape()[1], 3);
    }

    #[test]
    fn swapping_endpoints_changes_output() {
        let m = tiny(1, 2, 16, false);
        let params = m.init_params::<f64>(3).unwrap();
        let mut g = Graph::inference();
        let (a, b) = inputs(&mut g, 1, 1, 16);
        let p = m.forward(&mut g, &params, a, b, None).unwrap()[0];
        let q = m.forward(&mut g, &params, b, a, None).unwrap()[0];
        assert!(g.value(p).max_abs_diff(g.value(q)) > 1e-6);
        let again = m.forward(&mut g, &params, a, b, None).unwrap()[0];
        assert_eq!(g.value(p), g.value(again));
    }

    #[test]
    fn aux_split_rule() {
        assert_eq!(aux_split(1), (1, 0));
        assert_eq!(aux_split(3), (2, 1));
        assert_eq!(aux_split(14), (7, 7));
    }

    #[test]
    fn noise_is_seeded_standard_normal() {
        assert_eq!(sample_noise::<f64>(4), sample_noise::<f64>(4));
        assert_ne!(sample_noise::<f64>(4), sample_noise::<f64>(5));
        assert_eq!(sample_noise::<f32>(0).len(), 100);
    }

    #[test]
    fn config_validation() {
        let mut c = BipnConfig {
            resolution: 60,
            ..BipnConfig::default()
        };
        assert!(Bipn::new(c.clone()).is_err());
        c.scales = 1;
        assert!(Bipn::new(c.clone()).is_ok());
        c.scales = 2;
        assert!(Bipn::new(c.clone()).is_err());
        c.scales = 1;
        c.noise_dim = Some(10);
        assert!(Bipn::new(c).is_err());
    }

    #[test]
    fn wrong_resolution_rejected() {
        let m = tiny(1, 1, 16, false);
        let params = m.init_params::<f64>(0).unwrap();
        let mut g = Graph::inference();
        let (a, b) = inputs(&mut g, 1, 1, 8);
        assert!(m.forward(&mut g, &params, a, b, None).is_err());
    }

    #[test]
    fn block_roundtrip() {
        let frames: Vec<Frame<f64>> = (0..3)
            .map(|i| Frame::new(2, 2, 2, (0..8).map(|j| (i * 8 + j) as f64).collect()).unwrap())
            .collect();
        let block = sequences_to_tensor(&[&frames[..]]).unwrap();
        assert_eq!(block.shape(), &[1, 6, 2, 2]);
        assert_eq!(tensor_to_sequences(&block, 2).unwrap()[0], frames);
    }
}
