//! Image network `D_θ`: a five-level encoder–decoder with skip connections.
//!
//! Layout for `base` feature channels and `C` image channels:
//!
//! * encoder level 1: two conv blocks `C → base → base`;
//! * encoder level ℓ = 2..5: stride-2 conv block (downsample), two conv blocks,
//!   and a non-local block at levels 3, 4 and 5;
//! * decoder level 5: two conv blocks on the encoder level-5 output;
//! * decoder level ℓ = 4..1: bilinear 2× upsample, concatenate the encoder level-ℓ
//!   features, conv block `2·base → base`, conv block `base → base`;
//! * head: 1×1 conv `base → C` followed by a sigmoid.
//!
//! A conv block is 3×3 conv → per-channel normalization (learned scale/shift) →
//! LeakyReLU. Inputs whose sides are not multiples of `2^(levels−1)` are
//! reflect-padded on the bottom/right and the output is cropped back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{sigmoid, upsample_bilinear, upsample_bilinear_backward, ConvBlockCache, ConvCache};
use crate::nn::nonlocal::NonLocalCache;
use crate::nn::{Activation, Conv2d, ConvBlock, FeatureMap, NonLocalBlock, ParamSet};
use crate::rng;
use crate::tensor::ImageTensor;

pub const DEFAULT_BASE_CHANNELS: usize = 128;
pub const DEFAULT_LEVELS: usize = 5;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;
/// Encoder levels (1-based) that carry a non-local block.
pub const NON_LOCAL_LEVELS: [usize; 3] = [3, 4, 5];

/// Output values are kept strictly inside `(0, 1)`.
const OUTPUT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    /// Negative-side slope of the block activation; `0` gives a plain ReLU.
    pub leaky_slope: f64,
}

impl DenoiserConfig {
    pub fn new(channels: usize, base_channels: usize) -> Self {
        Self {
            channels,
            base_channels,
            levels: DEFAULT_LEVELS,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::validation(format!(
                "denoiser handles 1 or 3 channels, got {}",
                self.channels
            )));
        }
        if self.base_channels < 8 {
            return Err(Error::validation(format!(
                "base channel count must be at least 8, got {}",
                self.base_channels
            )));
        }
        if !(1..=8).contains(&self.levels) {
            return Err(Error::validation(format!(
                "level count must be in 1..=8, got {}",
                self.levels
            )));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::validation("leaky slope must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Spatial multiple required by the downsampling chain.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    down: Option<ConvBlock>,
    first: ConvBlock,
    second: ConvBlock,
    non_local: Option<NonLocalBlock>,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    first: ConvBlock,
    second: ConvBlock,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamSet,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    head: Conv2d,
}

#[derive(Debug, Clone)]
struct EncoderCache {
    down: Option<ConvBlockCache>,
    first: ConvBlockCache,
    second: ConvBlockCache,
    non_local: Option<NonLocalCache>,
    out_channels: usize,
    height: usize,
    width: usize,
}

#[derive(Debug, Clone)]
struct DecoderCache {
    first: ConvBlockCache,
    second: ConvBlockCache,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct DenoiserCache {
    encoder: Vec<EncoderCache>,
    decoder: Vec<DecoderCache>,
    head: ConvCache,
    /// Sigmoid output on the padded grid.
    output: FeatureMap,
    input_height: usize,
    input_width: usize,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed);
        let mut params = ParamSet::new();
        let act = Activation::LeakyRelu(config.leaky_slope);
        let base = config.base_channels;
        let mut encoder = Vec::with_capacity(config.levels);
        for level in 1..=config.levels {
            let name = format!("e{level}");
            let down = (level > 1)
                .then(|| ConvBlock::new(&mut params, &format!("{name}.down"), base, base, 2, act, &mut rng));
            let in_ch = if level == 1 { config.channels } else { base };
            let first = ConvBlock::new(&mut params, &format!("{name}.block1"), in_ch, base, 1, act, &mut rng);
            let second = ConvBlock::new(&mut params, &format!("{name}.block2"), base, base, 1, act, &mut rng);
            let non_local = NON_LOCAL_LEVELS
                .contains(&level)
                .then(|| NonLocalBlock::new(&mut params, &format!("{name}.nonlocal"), base, &mut rng));
            encoder.push(EncoderLevel {
                down,
                first,
                second,
                non_local,
            });
        }
        // decoder[i] serves level i + 1
        let mut decoder = Vec::with_capacity(config.levels);
        for level in 1..=config.levels {
            let name = format!("d{level}");
            let in_ch = if level == config.levels { base } else { 2 * base };
            decoder.push(DecoderLevel {
                first: ConvBlock::new(&mut params, &format!("{name}.block1"), in_ch, base, 1, act, &mut rng),
                second: ConvBlock::new(&mut params, &format!("{name}.block2"), base, base, 1, act, &mut rng),
            });
        }
        let head = Conv2d::new(&mut params, "head", base, config.channels, 1, 1, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    /// Input channel count of each encoder level's first conv.
    pub fn encoder_input_channels(&self) -> Vec<usize> {
        self.encoder.iter().map(|l| l.first.conv.in_channels).collect()
    }

    fn pad_input(&self, input: &ImageTensor) -> Result<FeatureMap> {
        let m = self.config.size_multiple();
        let (h, w) = (input.height(), input.width());
        if h < m || w < m {
            return Err(Error::validation(format!(
                "denoiser input must be at least {m}x{m}, got {h}x{w}"
            )));
        }
        if input.channels() != self.config.channels {
            return Err(Error::dimension(format!(
                "denoiser expects {} channels, got {}",
                self.config.channels,
                input.channels()
            )));
        }
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        if (ph, pw) == (h, w) {
            return Ok(FeatureMap::new(input.channels(), h, w, input.data().to_vec()));
        }
        // reflect without edge repeat; pad < m <= side so one fold suffices
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
        let mut data = Vec::with_capacity(input.channels() * ph * pw);
        for c in 0..input.channels() {
            for y in 0..ph {
                for x in 0..pw {
                    data.push(input.get(c, reflect(y, h), reflect(x, w)));
                }
            }
        }
        Ok(FeatureMap::new(input.channels(), ph, pw, data))
    }

    pub fn forward(&self, input: &ImageTensor) -> Result<(ImageTensor, DenoiserCache)> {
        let ps = &self.params;
        let mut x = self.pad_input(input)?;
        let mut enc_out = Vec::with_capacity(self.config.levels);
        let mut enc_cache = Vec::with_capacity(self.config.levels);
        for level in &self.encoder {
            let down = level.down.as_ref().map(|b| {
                let (y, c) = b.forward(ps, &x);
                x = y;
                c
            });
            let (y, first) = level.first.forward(ps, &x);
            let (mut y, second) = level.second.forward(ps, &y);
            let non_local = match &level.non_local {
                Some(nl) => {
                    let (z, c) = nl.forward(ps, &y)?;
                    y = z;
                    Some(c)
                }
                None => None,
            };
            enc_cache.push(EncoderCache {
                down,
                first,
                second,
                non_local,
                out_channels: y.channels,
                height: y.height,
                width: y.width,
            });
            enc_out.push(y.clone());
            x = y;
        }

        let top = self.config.levels - 1;
        let mut dec_cache: Vec<Option<DecoderCache>> = vec![None; self.config.levels];
        let mut h = enc_out[top].clone();
        for i in (0..self.config.levels).rev() {
            let inp = if i == top {
                h
            } else {
                FeatureMap::concat(&upsample_bilinear(&h), &enc_out[i])
            };
            let (y, first) = self.decoder[i].first.forward(ps, &inp);
            let (y, second) = self.decoder[i].second.forward(ps, &y);
            dec_cache[i] = Some(DecoderCache { first, second });
            h = y;
        }

        let (mut logits, head) = self.head.forward(ps, &h);
        logits
            .data
            .iter_mut()
            .for_each(|v| *v = sigmoid(*v).clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN));
        let output = logits;
        let image = crop(&output, input.height(), input.width());
        Ok((
            image,
            DenoiserCache {
                encoder: enc_cache,
                decoder: dec_cache.into_iter().map(|c| c.expect("decoder cache")).collect(),
                head,
                output,
                input_height: input.height(),
                input_width: input.width(),
            },
        ))
    }

    pub fn denoise(&self, input: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.forward(input)?.0)
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂output` on the cropped output grid.
    pub fn backward(&mut self, cache: &DenoiserCache, grad_output: &ImageTensor) {
        let out = &cache.output;
        let (oh, ow) = (cache.input_height, cache.input_width);
        let mut g = FeatureMap::zeros_like(out);
        for c in 0..out.channels {
            for y in 0..oh {
                for x in 0..ow {
                    let i = (c * out.height + y) * out.width + x;
                    let s = out.data[i];
                    g.data[i] = grad_output.get(c, y, x) * s * (1.0 - s);
                }
            }
        }
        let ps = &mut self.params;
        let mut g = self
            .head
            .backward(ps, &cache.head, &g, true)
            .expect("input gradient requested");

        let levels = self.config.levels;
        let top = levels - 1;
        let mut enc_grad: Vec<Option<FeatureMap>> = vec![None; levels];
        for (i, slot) in enc_grad.iter_mut().enumerate() {
            let dc = &cache.decoder[i];
            let dl = &self.decoder[i];
            let gs = dl.second.backward(ps, &dc.second, &g, true).expect("grad");
            let gin = dl.first.backward(ps, &dc.first, &gs, true).expect("grad");
            if i == top {
                *slot = Some(gin);
                break;
            }
            let (g_up, g_skip) = gin.split(self.config.base_channels);
            *slot = Some(g_skip);
            let ec = &cache.encoder[i + 1];
            g = upsample_bilinear_backward(&g_up, ec.height, ec.width);
        }

        let mut carry: Option<FeatureMap> = None;
        for i in (0..levels).rev() {
            let ec = &cache.encoder[i];
            let el = &self.encoder[i];
            let mut g = enc_grad[i].take().unwrap_or_else(|| {
                FeatureMap::zeros(ec.out_channels, ec.height, ec.width)
            });
            if let Some(c) = carry.take() {
                g.add_assign(&c);
            }
            if let (Some(nl), Some(nc)) = (&el.non_local, &ec.non_local) {
                g = nl.backward(ps, nc, &g);
            }
            let g2 = el.second.backward(ps, &ec.second, &g, true).expect("grad");
            let need_input = i > 0;
            let g1 = el.first.backward(ps, &ec.first, &g2, need_input);
            if let (Some(down), Some(dc), Some(g1)) = (&el.down, &ec.down, g1) {
                carry = down.backward(ps, dc, &g1, true);
            }
        }
    }
}

fn crop(map: &FeatureMap, height: usize, width: usize) -> ImageTensor {
    let mut data = Vec::with_capacity(map.channels * height * width);
    for c in 0..map.channels {
        for y in 0..height {
            let start = (c * map.height + y) * map.width;
            data.extend_from_slice(&map.data[start..start + width]);
        }
    }
    ImageTensor::from_parts(height, width, map.channels, data)
}
