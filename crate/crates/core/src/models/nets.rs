use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

/// Output resolution of the generator (fixed by the two 2x upsamples).
pub const RESOLUTION: usize = 16;
/// Spatial size of the learned constant feature map.
pub const BASE_RESOLUTION: usize = 4;
pub const IMG_CHANNELS: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_z: usize,
    pub d_w: usize,
    pub channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_z: 64,
            d_w: 64,
            channels: 32,
        }
    }
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt() / (fan_in as f64).sqrt()
}

// ── mapping network ──────────────────────────────────────────────────

/// Two affine layers with a leaky_relu between them: z -> w.
#[derive(Clone, Debug)]
pub struct MappingNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub struct MappingVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MappingNet {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        MappingNet {
            w1: Tensor::randn_scaled(&[cfg.d_z, cfg.d_w], 0.02, rng),
            b1: Tensor::zeros(&[cfg.d_w]),
            w2: Tensor::randn_scaled(&[cfg.d_w, cfg.d_w], 0.02, rng),
            b2: Tensor::zeros(&[cfg.d_w]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> MappingVars {
        MappingVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    /// z -> w without recording gradients.
    pub fn map_latent(&self, z: &Tensor) -> Result<Tensor, AutodiffError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let w = vars.forward(&mut tape, zv)?;
        Ok(tape.value(w).clone())
    }
}

impl MappingVars {
    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<Var, AutodiffError> {
        let h = tape.affine(z, self.w1, self.b1)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        tape.affine(h, self.w2, self.b2)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    pub fn from_slice(v: &[Var]) -> Self {
        MappingVars {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
        }
    }
}

// ── generator ────────────────────────────────────────────────────────

/// One synthesis block: optional 2x nearest upsample, per-channel modulation
/// by `1 + affine(w)`, 1x1 channel mixing, leaky_relu.
#[derive(Clone, Debug)]
pub struct SynthBlock {
    pub style_w: Tensor,
    pub style_b: Tensor,
    pub mix_w: Tensor,
    pub mix_b: Tensor,
    pub upsample: bool,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub constant: Tensor,
    pub blocks: Vec<SynthBlock>,
    pub rgb_w: Tensor,
    pub rgb_b: Tensor,
}

pub struct SynthBlockVars {
    style_w: Var,
    style_b: Var,
    mix_w: Var,
    mix_b: Var,
    upsample: bool,
}

pub struct GeneratorVars {
    pub constant: Var,
    blocks: Vec<SynthBlockVars>,
    rgb_w: Var,
    rgb_b: Var,
    one: Var,
}

impl Generator {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let blocks = (0..3)
            .map(|i| SynthBlock {
                style_w: Tensor::randn_scaled(&[cfg.d_w, c], 0.02, rng),
                style_b: Tensor::zeros(&[c]),
                mix_w: Tensor::randn_scaled(&[c, c], he_std(c), rng),
                mix_b: Tensor::zeros(&[c]),
                upsample: i > 0,
            })
            .collect();
        Generator {
            constant: Tensor::randn(&[BASE_RESOLUTION, BASE_RESOLUTION, c], rng),
            blocks,
            rgb_w: Tensor::randn_scaled(&[c, IMG_CHANNELS], 1.0 / (c as f64).sqrt(), rng),
            rgb_b: Tensor::zeros(&[IMG_CHANNELS]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> GeneratorVars {
        let params: Vec<Var> = self
            .param_list()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        self.vars_from(tape, &params)
    }

    pub fn vars_from(&self, tape: &mut Tape, params: &[Var]) -> GeneratorVars {
        let constant = params[0];
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| SynthBlockVars {
                style_w: params[1 + 4 * i],
                style_b: params[2 + 4 * i],
                mix_w: params[3 + 4 * i],
                mix_b: params[4 + 4 * i],
                upsample: b.upsample,
            })
            .collect();
        let n = 1 + 4 * self.blocks.len();
        GeneratorVars {
            constant,
            blocks,
            rgb_w: params[n],
            rgb_b: params[n + 1],
            one: tape.scalar(1.0),
        }
    }

    fn param_list(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.constant];
        for b in &self.blocks {
            out.extend([&b.style_w, &b.style_b, &b.mix_w, &b.mix_b]);
        }
        out.extend([&self.rgb_w, &self.rgb_b]);
        out
    }

    /// w -> image without recording gradients.
    pub fn generate(&self, w: &Tensor) -> Result<Tensor, AutodiffError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let wv = tape.leaf(w.clone());
        let img = vars.synthesize(&mut tape, wv)?;
        Ok(tape.value(img).clone())
    }
}

impl GeneratorVars {
    /// w -> image in [-1, 1] of shape [16, 16, 3].
    pub fn synthesize(&self, tape: &mut Tape, w: Var) -> Result<Var, AutodiffError> {
        let mut x = self.constant;
        let mut size = BASE_RESOLUTION;
        for block in &self.blocks {
            if block.upsample {
                x = tape.upsample_nearest(x, 2)?;
                size *= 2;
            }
            let c_in = tape.value(block.mix_w).shape()[0];
            let c_out = tape.value(block.mix_w).shape()[1];
            let style = tape.affine(w, block.style_w, block.style_b)?;
            let style = tape.add(style, self.one)?;
            let flat = tape.reshape(x, &[size * size, c_in])?;
            let modulated = tape.mul(flat, style)?;
            let mixed = tape.affine(modulated, block.mix_w, block.mix_b)?;
            let act = tape.leaky_relu(mixed, LEAKY_SLOPE)?;
            x = tape.reshape(act, &[size, size, c_out])?;
        }
        let c = tape.value(self.rgb_w).shape()[0];
        let flat = tape.reshape(x, &[size * size, c])?;
        let rgb = tape.affine(flat, self.rgb_w, self.rgb_b)?;
        let img = tape.tanh(rgb)?;
        tape.reshape(img, &[RESOLUTION, RESOLUTION, IMG_CHANNELS])
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.constant];
        for b in &self.blocks {
            out.extend([b.style_w, b.style_b, b.mix_w, b.mix_b]);
        }
        out.extend([self.rgb_w, self.rgb_b]);
        out
    }
}

// ── discriminator ────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct DiscBlock {
    pub w: Tensor,
    pub b: Tensor,
}

/// Three blocks of (3x3 average pooling at stride 2, per-pixel affine,
/// leaky_relu), then flatten and one affine to a scalar logit. Pooling is
/// expressed as multiplication by a fixed matrix, so gradients come for free.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub blocks: Vec<DiscBlock>,
    pub final_w: Tensor,
    pub final_b: Tensor,
    pools: Vec<Tensor>,
}

pub struct DiscriminatorVars {
    blocks: Vec<(Var, Var)>,
    final_w: Var,
    final_b: Var,
    pools: Vec<Var>,
}

/// Averaging matrix for a 3x3-receptive-field, stride-2 pooling from an
/// `n x n` grid to `n/2 x n/2`. Windows are centered on even coordinates and
/// truncated at borders, each row normalized by the pixels it covers.
fn pool_matrix(n: usize) -> Tensor {
    let half = n / 2;
    let mut data = vec![0.0; half * half * n * n];
    for oy in 0..half {
        for ox in 0..half {
            let row = oy * half + ox;
            let mut hits = Vec::new();
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let y = 2 * oy as i64 + dy;
                    let x = 2 * ox as i64 + dx;
                    if y >= 0 && x >= 0 && (y as usize) < n && (x as usize) < n {
                        hits.push(y as usize * n + x as usize);
                    }
                }
            }
            let w = 1.0 / hits.len() as f64;
            for h in hits {
                data[row * n * n + h] = w;
            }
        }
    }
    Tensor::from_vec(vec![half * half, n * n], data).expect("pool matrix shape")
}

impl Discriminator {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let mut blocks = Vec::new();
        let mut c_in = IMG_CHANNELS;
        for _ in 0..3 {
            blocks.push(DiscBlock {
                w: Tensor::randn_scaled(&[c_in, c], he_std(c_in), rng),
                b: Tensor::zeros(&[c]),
            });
            c_in = c;
        }
        let flat = (RESOLUTION / 8) * (RESOLUTION / 8) * c;
        Discriminator {
            blocks,
            final_w: Tensor::randn_scaled(&[flat, 1], 1.0 / (flat as f64).sqrt(), rng),
            final_b: Tensor::zeros(&[1]),
            pools: vec![
                pool_matrix(RESOLUTION),
                pool_matrix(RESOLUTION / 2),
                pool_matrix(RESOLUTION / 4),
            ],
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> DiscriminatorVars {
        let params: Vec<Var> = self
            .param_list()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        self.vars_from(tape, &params)
    }

    pub fn vars_from(&self, tape: &mut Tape, params: &[Var]) -> DiscriminatorVars {
        let blocks = (0..self.blocks.len())
            .map(|i| (params[2 * i], params[2 * i + 1]))
            .collect();
        let n = 2 * self.blocks.len();
        DiscriminatorVars {
            blocks,
            final_w: params[n],
            final_b: params[n + 1],
            pools: self.pools.iter().map(|p| tape.leaf(p.clone())).collect(),
        }
    }

    fn param_list(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([&b.w, &b.b]);
        }
        out.extend([&self.final_w, &self.final_b]);
        out
    }

    /// image -> logit without recording gradients.
    pub fn discriminate(&self, x: &Tensor) -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let logit = vars.forward(&mut tape, xv)?;
        Ok(tape.value(logit).item())
    }
}

impl DiscriminatorVars {
    /// image [16, 16, 3] -> scalar logit.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let mut size = RESOLUTION;
        let mut c_in = IMG_CHANNELS;
        let mut cur = tape.reshape(x, &[size * size, c_in])?;
        for ((w, b), pool) in self.blocks.iter().zip(&self.pools) {
            size /= 2;
            cur = tape.matmul(*pool, cur)?;
            cur = tape.affine(cur, *w, *b)?;
            cur = tape.leaky_relu(cur, LEAKY_SLOPE)?;
            c_in = tape.value(*w).shape()[1];
        }
        let flat = tape.reshape(cur, &[size * size * c_in])?;
        let logit = tape.affine(flat, self.final_w, self.final_b)?;
        tape.reshape(logit, &[])
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, b) in &self.blocks {
            out.extend([*w, *b]);
        }
        out.extend([self.final_w, self.final_b]);
        out
    }
}
