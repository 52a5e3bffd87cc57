//! The 3D convolutional UNet noise predictor.
//!
//! Structure for channel blocks `[b0, .., b_{L-1}]`:
//!
//! ```text
//! conv_in (C -> b0, 3³)
//! L-1 down stages:  res(b_i -> b_i), strided conv (b_i -> b_{i+1}, /2)
//! mid:              res(b_{L-1} -> b_{L-1})
//! L-1 up stages:    x2 upsample (b_{i+1}), concat skip_i, res(-> b_i)
//! head:             group norm, SiLU, conv (b0 -> 1, 3³)
//! ```
//!
//! Each residual block is GN → SiLU → conv → (+ time bias) → GN → SiLU →
//! conv with an identity (or 1x1 conv) skip. Timestep conditioning is a
//! sinusoidal embedding through a two-layer MLP, projected per block to a
//! per-channel bias. Parameters live in one flat f64 vector with a
//! deterministic layout; `param_entries` documents every slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    silu, silu_backward, silu_vec, silu_vec_backward, upsample_nearest,
    upsample_nearest_backward, Conv3d, ConvT3d, GnCache, GroupNorm, Linear,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpMode {
    /// Transposed convolution, kernel 2, stride 2.
    Transposed,
    /// Nearest-neighbor upsampling followed by a 3³ convolution.
    NearestConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    /// 1 (unconditional) or 3 (inpainting: noised grid, mask, known context).
    pub in_channels: usize,
    pub channel_blocks: Vec<usize>,
    /// Convolutions per residual block; only 2 is implemented.
    pub convs_per_block: usize,
    pub up_mode: UpMode,
    pub time_embed_dim: usize,
    /// Group-norm groups; layers with fewer channels use min(groups, c).
    pub norm_groups: usize,
}

impl UNetConfig {
    /// Desk-scale defaults for 16x32x32 blocks.
    pub fn desk(in_channels: usize) -> Self {
        UNetConfig {
            in_channels,
            channel_blocks: vec![8, 16, 32, 32],
            convs_per_block: 2,
            up_mode: UpMode::NearestConv,
            time_embed_dim: 32,
            norm_groups: 4,
        }
    }

    pub fn levels(&self) -> usize {
        self.channel_blocks.len()
    }

    /// Every spatial input dim must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.levels() - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.levels() < 2 {
            return Err(Error::invalid("need ≥ 2 levels in channel_blocks"));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::invalid("in_channels must be 1 or 3"));
        }
        if self.convs_per_block != 2 {
            return Err(Error::invalid("only convs_per_block = 2 is supported"));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::invalid("time_embed_dim must be even and ≥ 2"));
        }
        if self.norm_groups == 0 {
            return Err(Error::invalid("norm_groups must be ≥ 1"));
        }
        if self.channel_blocks.iter().any(|&b| b == 0) {
            return Err(Error::invalid("channel widths must be positive"));
        }
        Ok(())
    }
}

/// One named slot in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    UniformFan(usize),
    One,
    Zero,
}

#[derive(Default)]
struct Layout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl Layout {
    fn alloc(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let offset = self.len;
        self.len += shape.iter().product::<usize>();
        self.entries.push(ParamEntry {
            name,
            offset,
            shape: shape.to_vec(),
            init,
        });
        offset
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, stride: usize) -> Conv3d {
        let fan = cin * k * k * k;
        let w_off = self.alloc(format!("{name}.w"), &[cout, cin, k, k, k], Init::UniformFan(fan));
        let b_off = self.alloc(format!("{name}.b"), &[cout], Init::UniformFan(fan));
        Conv3d {
            cin,
            cout,
            k,
            stride,
            w_off,
            b_off,
        }
    }

    fn conv_t(&mut self, name: &str, cin: usize, cout: usize) -> ConvT3d {
        let fan = cin * 8;
        let w_off = self.alloc(format!("{name}.w"), &[cin, cout, 2, 2, 2], Init::UniformFan(fan));
        let b_off = self.alloc(format!("{name}.b"), &[cout], Init::UniformFan(fan));
        ConvT3d {
            cin,
            cout,
            w_off,
            b_off,
        }
    }

    fn group_norm(&mut self, name: &str, channels: usize, cfg_groups: usize) -> Result<GroupNorm> {
        let groups = cfg_groups.min(channels);
        if channels % groups != 0 {
            return Err(Error::invalid(format!(
                "{name}: {channels} channels not divisible into {groups} norm groups"
            )));
        }
        let g_off = self.alloc(format!("{name}.g"), &[channels], Init::One);
        let b_off = self.alloc(format!("{name}.b"), &[channels], Init::Zero);
        Ok(GroupNorm {
            channels,
            groups,
            g_off,
            b_off,
        })
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize) -> Linear {
        let w_off = self.alloc(format!("{name}.w"), &[cout, cin], Init::UniformFan(cin));
        let b_off = self.alloc(format!("{name}.b"), &[cout], Init::UniformFan(cin));
        Linear {
            cin,
            cout,
            w_off,
            b_off,
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv3d,
    tproj: Linear,
    gn2: GroupNorm,
    conv2: Conv3d,
    skip: Option<Conv3d>,
}

pub struct ResCache {
    x: Tensor,
    a1: Tensor,
    gn1c: GnCache,
    b: Tensor,
    a2: Tensor,
    gn2c: GnCache,
    e: Tensor,
}

impl ResBlock {
    fn build(layout: &mut Layout, name: &str, cin: usize, cout: usize, cfg: &UNetConfig) -> Result<Self> {
        let gn1 = layout.group_norm(&format!("{name}.gn1"), cin, cfg.norm_groups)?;
        let conv1 = layout.conv(&format!("{name}.conv1"), cout, cin, 3, 1);
        let tproj = layout.linear(&format!("{name}.tproj"), cfg.time_embed_dim, cout);
        let gn2 = layout.group_norm(&format!("{name}.gn2"), cout, cfg.norm_groups)?;
        let conv2 = layout.conv(&format!("{name}.conv2"), cout, cout, 3, 1);
        let skip = if cin != cout {
            Some(layout.conv(&format!("{name}.skip"), cout, cin, 1, 1))
        } else {
            None
        };
        Ok(ResBlock {
            gn1,
            conv1,
            tproj,
            gn2,
            conv2,
            skip,
        })
    }

    fn forward(&self, p: &[f64], x: &Tensor, st: &[f64]) -> (Tensor, ResCache) {
        let n = x.shape[0];
        let (a1, gn1c) = self.gn1.forward(p, x);
        let b = silu(&a1);
        let mut c = self.conv1.forward(p, &b);
        let tb = self.tproj.forward(p, st, n);
        let sp = c.spatial();
        for ni in 0..n {
            for co in 0..self.conv1.cout {
                let bias = tb[ni * self.conv1.cout + co];
                let base = c.plane(ni, co);
                for v in &mut c.data[base..base + sp] {
                    *v += bias;
                }
            }
        }
        let (a2, gn2c) = self.gn2.forward(p, &c);
        let e = silu(&a2);
        let mut out = self.conv2.forward(p, &e);
        match &self.skip {
            Some(sk) => out.add_assign(&sk.forward(p, x)),
            None => out.add_assign(x),
        }
        (
            out,
            ResCache {
                x: x.clone(),
                a1,
                gn1c,
                b,
                a2,
                gn2c,
                e,
            },
        )
    }

    /// Inference-only forward; no activation stash.
    fn forward_lean(&self, p: &[f64], x: &Tensor, st: &[f64]) -> Tensor {
        let n = x.shape[0];
        let (a1, _) = self.gn1.forward(p, x);
        let b = silu(&a1);
        drop(a1);
        let mut c = self.conv1.forward(p, &b);
        drop(b);
        let tb = self.tproj.forward(p, st, n);
        let sp = c.spatial();
        for ni in 0..n {
            for co in 0..self.conv1.cout {
                let bias = tb[ni * self.conv1.cout + co];
                let base = c.plane(ni, co);
                for v in &mut c.data[base..base + sp] {
                    *v += bias;
                }
            }
        }
        let (a2, _) = self.gn2.forward(p, &c);
        drop(c);
        let e = silu(&a2);
        drop(a2);
        let mut out = self.conv2.forward(p, &e);
        match &self.skip {
            Some(sk) => out.add_assign(&sk.forward(p, x)),
            None => out.add_assign(x),
        }
        out
    }

    fn backward(
        &self,
        p: &[f64],
        cache: &ResCache,
        st: &[f64],
        gout: &Tensor,
        gp: &mut [f64],
        g_st: &mut [f64],
    ) -> Tensor {
        let n = gout.shape[0];
        let g_e = self.conv2.backward(p, &cache.e, gout, gp);
        let g_a2 = silu_backward(&cache.a2, &g_e);
        let g_c = self.gn2.backward(p, &cache.gn2c, &g_a2, gp);
        // Per-channel time bias: gradient is the spatial sum.
        let sp = g_c.spatial();
        let mut g_tb = vec![0.0; n * self.conv1.cout];
        for ni in 0..n {
            for co in 0..self.conv1.cout {
                let base = g_c.plane(ni, co);
                let mut s = 0.0;
                for v in &g_c.data[base..base + sp] {
                    s += v;
                }
                g_tb[ni * self.conv1.cout + co] = s;
            }
        }
        let g_st_part = self.tproj.backward(p, st, &g_tb, n, gp);
        for (a, b) in g_st.iter_mut().zip(&g_st_part) {
            *a += b;
        }
        let g_b = self.conv1.backward(p, &cache.b, &g_c, gp);
        let g_a1 = silu_backward(&cache.a1, &g_b);
        let mut g_x = self.gn1.backward(p, &cache.gn1c, &g_a1, gp);
        match &self.skip {
            Some(sk) => g_x.add_assign(&sk.backward(p, &cache.x, gout, gp)),
            None => g_x.add_assign(gout),
        }
        g_x
    }
}

#[derive(Debug, Clone)]
enum UpLayer {
    Transposed(ConvT3d),
    NearestConv(Conv3d),
}

pub struct UpCache {
    up_in: Tensor,
    /// Nearest mode: the upsampled tensor fed to the conv.
    upsampled: Option<Tensor>,
    res: ResCache,
}

/// The noise predictor: structure plus the flat parameter vector.
pub struct DenoiserNet {
    pub config: UNetConfig,
    pub params: Vec<f64>,
    time_lin1: Linear,
    time_lin2: Linear,
    conv_in: Conv3d,
    downs: Vec<(ResBlock, Conv3d)>,
    mid: ResBlock,
    /// In traversal order: level L-2 down to level 0.
    ups: Vec<(UpLayer, ResBlock)>,
    head_gn: GroupNorm,
    head_conv: Conv3d,
    layout: Vec<ParamEntry>,
}

pub struct UNetCache {
    emb0: Vec<f64>,
    h1: Vec<f64>,
    a1v: Vec<f64>,
    temb: Vec<f64>,
    st: Vec<f64>,
    x_in: Tensor,
    downs: Vec<(ResCache, Tensor)>,
    mid: ResCache,
    ups: Vec<UpCache>,
    head_in: GnCache,
    head_a: Tensor,
    head_conv_in: Tensor,
}

/// Sinusoidal timestep features: [sin(t·f_i) .. cos(t·f_i)] with
/// f_i = 10000^(-i/(dim/2)).
pub fn time_embedding(t: &[usize], dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; t.len() * dim];
    for (ni, &tv) in t.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000.0f64.ln()) * i as f64 / half as f64).exp();
            let arg = tv as f64 * freq;
            out[ni * dim + i] = arg.sin();
            out[ni * dim + half + i] = arg.cos();
        }
    }
    out
}

impl DenoiserNet {
    /// Deterministic build: the layout order is fixed by the structure and
    /// initialization draws from a seeded stream in layout order.
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layout = Layout::default();
        let e = config.time_embed_dim;
        let time_lin1 = layout.linear("time.lin1", e, e);
        let time_lin2 = layout.linear("time.lin2", e, e);
        let blocks = &config.channel_blocks;
        let levels = config.levels();
        let conv_in = layout.conv("conv_in", blocks[0], config.in_channels, 3, 1);
        let mut downs = Vec::new();
        for i in 0..levels - 1 {
            let res = ResBlock::build(&mut layout, &format!("down{i}.res"), blocks[i], blocks[i], &config)?;
            let down = layout.conv(&format!("down{i}.down"), blocks[i + 1], blocks[i], 3, 2);
            downs.push((res, down));
        }
        let mid = ResBlock::build(&mut layout, "mid.res", blocks[levels - 1], blocks[levels - 1], &config)?;
        let mut ups = Vec::new();
        for i in (0..levels - 1).rev() {
            let name = format!("up{i}");
            let up = match config.up_mode {
                UpMode::Transposed => {
                    UpLayer::Transposed(layout.conv_t(&format!("{name}.up"), blocks[i + 1], blocks[i + 1]))
                }
                UpMode::NearestConv => {
                    UpLayer::NearestConv(layout.conv(&format!("{name}.up"), blocks[i + 1], blocks[i + 1], 3, 1))
                }
            };
            let res = ResBlock::build(
                &mut layout,
                &format!("{name}.res"),
                blocks[i + 1] + blocks[i],
                blocks[i],
                &config,
            )?;
            ups.push((up, res));
        }
        let head_gn = layout.group_norm("head.gn", blocks[0], config.norm_groups)?;
        let head_conv = layout.conv("head.conv", 1, blocks[0], 3, 1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len];
        for entry in &layout.entries {
            let slot = &mut params[entry.offset..entry.offset + entry.len()];
            match entry.init {
                Init::UniformFan(fan) => {
                    let bound = (1.0 / fan as f64).sqrt();
                    for v in slot {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                Init::One => slot.fill(1.0),
                Init::Zero => slot.fill(0.0),
            }
        }
        Ok(DenoiserNet {
            config,
            params,
            time_lin1,
            time_lin2,
            conv_in,
            downs,
            mid,
            ups,
            head_gn,
            head_conv,
            layout: layout.entries,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_entries(&self) -> &[ParamEntry] {
        &self.layout
    }

    fn check_input(&self, x: &Tensor, t: &[usize]) -> Result<()> {
        if x.shape[1] != self.config.in_channels {
            return Err(Error::invalid(format!(
                "input has {} channels, net expects {}",
                x.shape[1], self.config.in_channels
            )));
        }
        if t.len() != x.shape[0] {
            return Err(Error::invalid("one timestep per batch sample required"));
        }
        let div = self.config.spatial_divisor();
        for d in &x.shape[2..] {
            if d % div != 0 || *d == 0 {
                return Err(Error::invalid(format!(
                    "spatial dims {:?} must be divisible by {div} (channel_blocks {:?})",
                    &x.shape[2..],
                    self.config.channel_blocks
                )));
            }
        }
        Ok(())
    }

    fn time_features(&self, t: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = t.len();
        let p = &self.params;
        let emb0 = time_embedding(t, self.config.time_embed_dim);
        let h1 = self.time_lin1.forward(p, &emb0, n);
        let a1v = silu_vec(&h1);
        let temb = self.time_lin2.forward(p, &a1v, n);
        let st = silu_vec(&temb);
        (emb0, h1, a1v, temb, st)
    }

    /// Noise prediction; (n, C, z, y, x) -> (n, 1, z, y, x).
    pub fn forward(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.check_input(x, t)?;
        let p = &self.params;
        let (_, _, _, _, st) = self.time_features(t);
        let mut h = self.conv_in.forward(p, x);
        let mut skips = Vec::with_capacity(self.downs.len());
        for (res, down) in &self.downs {
            let r = res.forward_lean(p, &h, &st);
            h = down.forward(p, &r);
            skips.push(r);
        }
        h = self.mid.forward_lean(p, &h, &st);
        for (ui, (up, res)) in self.ups.iter().enumerate() {
            let upsampled = match up {
                UpLayer::Transposed(c) => c.forward(p, &h),
                UpLayer::NearestConv(c) => c.forward(p, &upsample_nearest(&h)),
            };
            let skip = &skips[self.downs.len() - 1 - ui];
            let cat = Tensor::concat_channels(&upsampled, skip);
            h = res.forward_lean(p, &cat, &st);
        }
        let (a, _) = self.head_gn.forward(p, &h);
        let hs = silu(&a);
        Ok(self.head_conv.forward(p, &hs))
    }

    /// Forward keeping every activation needed for `backward`.
    pub fn forward_cached(&self, x: &Tensor, t: &[usize]) -> Result<(Tensor, UNetCache)> {
        self.check_input(x, t)?;
        let p = &self.params;
        let (emb0, h1, a1v, temb, st) = self.time_features(t);
        let mut h = self.conv_in.forward(p, x);
        let mut down_caches = Vec::with_capacity(self.downs.len());
        for (res, down) in &self.downs {
            let (r, rc) = res.forward(p, &h, &st);
            h = down.forward(p, &r);
            down_caches.push((rc, r));
        }
        let (hm, mid_cache) = self.mid.forward(p, &h, &st);
        h = hm;
        let mut up_caches = Vec::with_capacity(self.ups.len());
        for (ui, (up, res)) in self.ups.iter().enumerate() {
            let up_in = h;
            let (upsampled_keep, conv_out) = match up {
                UpLayer::Transposed(c) => (None, c.forward(p, &up_in)),
                UpLayer::NearestConv(c) => {
                    let u = upsample_nearest(&up_in);
                    let o = c.forward(p, &u);
                    (Some(u), o)
                }
            };
            let skip = &down_caches[self.downs.len() - 1 - ui].1;
            let cat = Tensor::concat_channels(&conv_out, skip);
            let (r, rc) = res.forward(p, &cat, &st);
            h = r;
            up_caches.push(UpCache {
                up_in,
                upsampled: upsampled_keep,
                res: rc,
            });
        }
        let (a, head_in) = self.head_gn.forward(p, &h);
        let head_a = a;
        let head_conv_in = silu(&head_a);
        let out = self.head_conv.forward(p, &head_conv_in);
        Ok((
            out,
            UNetCache {
                emb0,
                h1,
                a1v,
                temb,
                st,
                x_in: x.clone(),
                downs: down_caches,
                mid: mid_cache,
                ups: up_caches,
                head_in,
                head_a,
                head_conv_in,
            },
        ))
    }

    /// Reverse-mode pass. Accumulates parameter gradients into `gp`
    /// (len == param_count) and returns the gradient w.r.t. the input.
    pub fn backward(&self, cache: &UNetCache, gout: &Tensor, gp: &mut [f64]) -> Tensor {
        assert_eq!(gp.len(), self.params.len());
        let p = &self.params;
        let n = gout.shape[0];
        let e = self.config.time_embed_dim;
        let mut g_st = vec![0.0; n * e];

        let mut g = self.head_conv.backward(p, &cache.head_conv_in, gout, gp);
        g = silu_backward(&cache.head_a, &g);
        g = self.head_gn.backward(p, &cache.head_in, &g, gp);

        let levels = self.config.levels();
        let mut skip_grads: Vec<Option<Tensor>> = (0..levels - 1).map(|_| None).collect();
        for (ui, ((up, res), uc)) in self.ups.iter().zip(&cache.ups).enumerate().rev() {
            let level = self.downs.len() - 1 - ui;
            g = res.backward(p, &uc.res, &cache.st, &g, gp, &mut g_st);
            let ca = uc.res.x.shape[1] - self.config.channel_blocks[level];
            let (g_up, g_skip) = g.split_channels(ca);
            skip_grads[level] = Some(g_skip);
            g = match up {
                UpLayer::Transposed(c) => c.backward(p, &uc.up_in, &g_up, gp),
                UpLayer::NearestConv(c) => {
                    let gi = c.backward(p, uc.upsampled.as_ref().unwrap(), &g_up, gp);
                    upsample_nearest_backward(&gi)
                }
            };
        }
        g = self.mid.backward(p, &cache.mid, &cache.st, &g, gp, &mut g_st);
        for (i, ((res, down), (rc, down_in))) in
            self.downs.iter().zip(&cache.downs).enumerate().rev()
        {
            let mut gr = down.backward(p, down_in, &g, gp);
            gr.add_assign(skip_grads[i].as_ref().unwrap());
            g = res.backward(p, rc, &cache.st, &gr, gp, &mut g_st);
        }
        let g_in = self.conv_in.backward(p, &cache.x_in, &g, gp);

        let g_temb = silu_vec_backward(&cache.temb, &g_st);
        let g_a1v = self.time_lin2.backward(p, &cache.a1v, &g_temb, n, gp);
        let g_h1 = silu_vec_backward(&cache.h1, &g_a1v);
        let _ = self.time_lin1.backward(p, &cache.emb0, &g_h1, n, gp);
        g_in
    }
}
