//! Miniature style-based generator, mapping network and discriminator for
//! 16x16 RGB synthesis, plus the Adam optimizer that trains them.

mod adam;
mod nets;

pub use adam::{AdamParams, AdamState};
pub use nets::{
    Discriminator, DiscriminatorVars, Generator, GeneratorVars, MappingNet, MappingVars,
    ModelConfig, BASE_RESOLUTION, IMG_CHANNELS, LEAKY_SLOPE, RESOLUTION,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("parameter/gradient mismatch at index {index}: {params:?} vs {grads:?}")]
    GradShapeMismatch {
        index: usize,
        params: Vec<usize>,
        grads: Vec<usize>,
    },
    #[error("non-finite gradient for parameter #{0}")]
    NonFiniteGrad(usize),
    #[error("optimizer learning rate must be positive, got {0}")]
    BadLearningRate(f64),
}

/// Generator + mapping network + discriminator parameters.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub mapping: MappingNet,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

/// All model parameters bound as leaves on one tape.
pub struct ModelVars {
    pub mapping: MappingVars,
    pub generator: GeneratorVars,
    pub discriminator: DiscriminatorVars,
}

impl ModelState {
    /// Deterministic initialization from a seed. Weight scales follow the
    /// fan-in of each layer so the synthesis path neither dies nor explodes
    /// at depth; style and mapping layers start near zero so modulation
    /// begins close to identity. Biases are zero, the learned constant is
    /// unit normal.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mapping = MappingNet::init(config, &mut rng);
        let generator = Generator::init(config, &mut rng);
        let discriminator = Discriminator::init(config, &mut rng);
        ModelState {
            config: config.clone(),
            mapping,
            generator,
            discriminator,
        }
    }

    /// Canonical (name, tensor) listing; checkpoint payload order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("map.w1".into(), &self.mapping.w1));
        out.push(("map.b1".into(), &self.mapping.b1));
        out.push(("map.w2".into(), &self.mapping.w2));
        out.push(("map.b2".into(), &self.mapping.b2));
        out.push(("gen.constant".into(), &self.generator.constant));
        for (i, b) in self.generator.blocks.iter().enumerate() {
            out.push((format!("gen.b{i}.style_w"), &b.style_w));
            out.push((format!("gen.b{i}.style_b"), &b.style_b));
            out.push((format!("gen.b{i}.mix_w"), &b.mix_w));
            out.push((format!("gen.b{i}.mix_b"), &b.mix_b));
        }
        out.push(("gen.rgb_w".into(), &self.generator.rgb_w));
        out.push(("gen.rgb_b".into(), &self.generator.rgb_b));
        for (i, b) in self.discriminator.blocks.iter().enumerate() {
            out.push((format!("disc.b{i}.w"), &b.w));
            out.push((format!("disc.b{i}.b"), &b.b));
        }
        out.push(("disc.final_w".into(), &self.discriminator.final_w));
        out.push(("disc.final_b".into(), &self.discriminator.final_b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("map.w1".into(), &mut self.mapping.w1));
        out.push(("map.b1".into(), &mut self.mapping.b1));
        out.push(("map.w2".into(), &mut self.mapping.w2));
        out.push(("map.b2".into(), &mut self.mapping.b2));
        out.push(("gen.constant".into(), &mut self.generator.constant));
        for (i, b) in self.generator.blocks.iter_mut().enumerate() {
            out.push((format!("gen.b{i}.style_w"), &mut b.style_w));
            out.push((format!("gen.b{i}.style_b"), &mut b.style_b));
            out.push((format!("gen.b{i}.mix_w"), &mut b.mix_w));
            out.push((format!("gen.b{i}.mix_b"), &mut b.mix_b));
        }
        out.push(("gen.rgb_w".into(), &mut self.generator.rgb_w));
        out.push(("gen.rgb_b".into(), &mut self.generator.rgb_b));
        for (i, b) in self.discriminator.blocks.iter_mut().enumerate() {
            out.push((format!("disc.b{i}.w"), &mut b.w));
            out.push((format!("disc.b{i}.b"), &mut b.b));
        }
        out.push(("disc.final_w".into(), &mut self.discriminator.final_w));
        out.push(("disc.final_b".into(), &mut self.discriminator.final_b));
        out
    }

    /// Generator-side parameters (mapping + synthesis), the set updated by
    /// the generator optimizer.
    pub fn g_params(&self) -> Vec<&Tensor> {
        let d_start = self.g_param_count();
        self.named_params()
            .into_iter()
            .take(d_start)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn g_params_mut(&mut self) -> Vec<&mut Tensor> {
        let d_start = self.g_param_count();
        self.named_params_mut()
            .into_iter()
            .take(d_start)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn d_params(&self) -> Vec<&Tensor> {
        let d_start = self.g_param_count();
        self.named_params()
            .into_iter()
            .skip(d_start)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn d_params_mut(&mut self) -> Vec<&mut Tensor> {
        let d_start = self.g_param_count();
        self.named_params_mut()
            .into_iter()
            .skip(d_start)
            .map(|(_, t)| t)
            .collect()
    }

    fn g_param_count(&self) -> usize {
        4 + 1 + 4 * self.generator.blocks.len() + 2
    }

    /// Bind every parameter (and derived constants) on a tape.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            mapping: self.mapping.bind(tape),
            generator: self.generator.bind(tape),
            discriminator: self.discriminator.bind(tape),
        }
    }

    /// Rebuild the bound-variable view from pre-registered parameter leaves
    /// in canonical order (used by gradient checking).
    pub fn vars_from(&self, tape: &mut Tape, params: &[Var]) -> ModelVars {
        let nb = self.generator.blocks.len();
        let (m, rest) = params.split_at(4);
        let g_len = 1 + 4 * nb + 2;
        let (g, d) = rest.split_at(g_len);
        ModelVars {
            mapping: MappingVars::from_slice(m),
            generator: self.generator.vars_from(tape, g),
            discriminator: self.discriminator.vars_from(tape, d),
        }
    }
}

impl ModelVars {
    /// Leaf variables on the generator side, canonical order.
    pub fn g_side(&self) -> Vec<Var> {
        let mut v = self.mapping.vars();
        v.extend(self.generator.vars());
        v
    }

    pub fn d_side(&self) -> Vec<Var> {
        self.discriminator.vars()
    }
}

/// Deterministic model initialization with the default architecture.
pub fn init_params(seed: u64) -> ModelState {
    ModelState::init(&ModelConfig::default(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check_sampled;
    use rand::Rng;

    fn state() -> ModelState {
        init_params(42)
    }

    #[test]
    fn map_latent_of_zero_is_zero() {
        // biases are zero-initialized, so the affine stack maps 0 to 0
        let s = state();
        let w = s.mapping.map_latent(&Tensor::zeros(&[64])).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_latent_is_deterministic_and_bounded() {
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = Tensor::randn(&[64], &mut rng);
        let w1 = s.mapping.map_latent(&z).unwrap();
        let w2 = s.mapping.map_latent(&z).unwrap();
        assert_eq!(w1, w2);
        for _ in 0..1000 {
            let z = Tensor::randn(&[64], &mut rng);
            let w = s.mapping.map_latent(&z).unwrap();
            assert!(w.all_finite());
            assert!(w.data().iter().all(|v| v.abs() < 100.0));
        }
    }

    #[test]
    fn generate_stays_in_range_and_is_deterministic() {
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let w = Tensor::randn(&[64], &mut rng);
            let img = s.generator.generate(&w).unwrap();
            assert_eq!(img.shape(), &[16, 16, 3]);
            assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(img, s.generator.generate(&w).unwrap());
        }
    }

    #[test]
    fn small_latent_perturbations_move_pixels_a_little() {
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Tensor::randn(&[64], &mut rng);
        let base = s.generator.generate(&w).unwrap();
        for axis in [0usize, 17, 63] {
            let mut wp = w.clone();
            wp.data_mut()[axis] += 1e-3;
            let img = s.generator.generate(&wp).unwrap();
            let max_change = base
                .data()
                .iter()
                .zip(img.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_change < 1.0, "axis {axis}: change {max_change}");
        }
    }

    #[test]
    fn discriminate_zero_image_gives_zero_logit() {
        let s = state();
        let x = Tensor::zeros(&[16, 16, 3]);
        assert_eq!(s.discriminator.discriminate(&x).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::randn(&[16, 16, 3], &mut rng).map(f64::tanh);
        let l1 = s.discriminator.discriminate(&img).unwrap();
        let l2 = s.discriminator.discriminate(&img).unwrap();
        assert!(l1.is_finite());
        assert_eq!(l1, l2);
    }

    #[test]
    fn logit_gradient_wrt_input_matches_fd() {
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[16, 16, 3], &mut rng).map(|v| v.tanh() * 0.9);
        let disc = s.discriminator.clone();
        let err = finite_diff_check_sampled(
            &move |tape: &mut Tape, vars: &[Var]| {
                let dv = disc.bind(tape);
                dv.forward(tape, vars[0])
            },
            &[x],
            40,
            1e-5,
            0,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn end_to_end_gradient_matches_fd() {
        // scalar loss through discriminate(generate(map_latent(z))),
        // checked on a random subsample of every parameter tensor
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Tensor::randn(&[64], &mut rng);
        let params: Vec<Tensor> = s.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let s2 = s.clone();
        let err = finite_diff_check_sampled(
            &move |tape: &mut Tape, vars: &[Var]| {
                let mv = s2.vars_from(tape, vars);
                let zv = tape.leaf(z.clone());
                let w = mv.mapping.forward(tape, zv)?;
                let img = mv.generator.synthesize(tape, w)?;
                mv.discriminator.forward(tape, img)
            },
            &params,
            2,
            1e-5,
            1,
        )
        .unwrap();
        assert!(err < 1e-3, "err = {err}");
    }

    #[test]
    fn zeroing_style_weights_makes_output_independent_of_w() {
        let mut s = state();
        for b in &mut s.generator.blocks {
            b.style_w = Tensor::zeros(b.style_w.shape());
            b.style_b = Tensor::zeros(b.style_b.shape());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = s.generator.generate(&Tensor::randn(&[64], &mut rng)).unwrap();
        let b = s.generator.generate(&Tensor::randn(&[64], &mut rng)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_pixel_sees_every_latent_axis_at_init() {
        // gradient of each output pixel w.r.t. w must be dense at init
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Tensor::randn(&[64], &mut rng);
        let mut tape = Tape::new();
        let gv = s.generator.bind(&mut tape);
        let wv = tape.leaf(w);
        let img = gv.synthesize(&mut tape, wv).unwrap();
        let flat = tape.reshape(img, &[768]).unwrap();
        for px in 0..768 {
            let pixel = tape.slice(flat, px, px + 1).unwrap();
            let loss = tape.sum(pixel).unwrap();
            let g = tape.backward(loss).unwrap();
            let gw = g.wrt(wv).unwrap();
            assert!(
                gw.data().iter().all(|&v| v != 0.0),
                "pixel {px} has a zero-gradient latent axis"
            );
        }
    }

    #[test]
    fn init_is_seeded_and_seeds_differ() {
        let a = init_params(1);
        let b = init_params(1);
        let c = init_params(2);
        for ((_, ta), (_, tb)) in a.named_params().into_iter().zip(b.named_params()) {
            assert_eq!(ta, tb);
        }
        let differs = a
            .named_params()
            .into_iter()
            .zip(c.named_params())
            .any(|((_, ta), (_, tc))| ta != tc);
        assert!(differs);
    }

    #[test]
    fn init_images_have_reasonable_contrast() {
        // per-channel pixel std across 100 seeds stays in (0.01, 1.5)
        for seed in 0..100u64 {
            let s = init_params(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
            let z = Tensor::randn(&[64], &mut rng);
            let w = s.mapping.map_latent(&z).unwrap();
            let img = s.generator.generate(&w).unwrap();
            for ch in 0..3 {
                let vals: Vec<f64> = (0..256).map(|p| img.data()[p * 3 + ch]).collect();
                let mean = vals.iter().sum::<f64>() / 256.0;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 256.0;
                let std = var.sqrt();
                assert!(
                    std > 0.01 && std < 1.5,
                    "seed {seed} channel {ch}: std = {std}"
                );
            }
        }
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let s = state();
        assert!(s.mapping.map_latent(&Tensor::zeros(&[32])).is_err());
        assert!(s.generator.generate(&Tensor::zeros(&[12])).is_err());
        assert!(s
            .discriminator
            .discriminate(&Tensor::zeros(&[8, 8, 3]))
            .is_err());
    }

    #[test]
    fn batched_mapping_matches_single() {
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[64], &mut rng)).collect();
        for zi in &z {
            let w = s.mapping.map_latent(zi).unwrap();
            assert_eq!(w.shape(), &[64]);
        }
        let _ = rng.gen::<f64>();
    }
}
