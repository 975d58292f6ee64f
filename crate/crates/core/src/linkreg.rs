//! Latent-to-pixel linking: latent partitioning, structured perturbations,
//! masked locality losses and their multi-link sum.
//!
//! A link binds one contiguous latent fragment to one image region. Training
//! penalizes (1) out-region pixel change when only the linked fragment is
//! perturbed and (2) in-region pixel change when only the complement is
//! perturbed, so the fragment ends up controlling exactly its region.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::models::RESOLUTION;
use crate::synthdata::rule_segment;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("fragment index {index} out of range 1..={count}")]
    BadFragment { index: usize, count: usize },
    #[error("rectangle {0:?} does not fit in a {1}x{1} image")]
    RegionOutOfBounds(RectRegion, usize),
    #[error("links reference fragment {0} more than once")]
    OverlappingFragments(usize),
    #[error("unknown semantic label `{0}` (expected `object` or `background`)")]
    UnknownSemanticLabel(String),
    #[error("mask entries must be binary")]
    NonBinaryMask,
    #[error("non-finite generator output inside locality losses")]
    NonFiniteOutput,
    #[error("negative loss weight {0}")]
    NegativeWeight(f64),
    #[error("perturbation strength must be positive, got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

// ── partition ────────────────────────────────────────────────────────

/// Split of the latent vector into K contiguous fragments; fragment 1 starts
/// at axis 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPartition {
    sizes: Vec<usize>,
}

impl LatentPartition {
    pub fn new(sizes: Vec<usize>, d_w: usize) -> Result<Self, LinkError> {
        if sizes.is_empty() || sizes.iter().any(|&n| n == 0) {
            return Err(LinkError::InvalidPartition(format!(
                "fragment sizes must be >= 1, got {sizes:?}"
            )));
        }
        let total: usize = sizes.iter().sum();
        if total != d_w {
            return Err(LinkError::InvalidPartition(format!(
                "fragment sizes {sizes:?} sum to {total}, expected {d_w}"
            )));
        }
        Ok(LatentPartition { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Number of fragments K.
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Axis range of a 1-based fragment index.
    pub fn range(&self, fragment: usize) -> Result<std::ops::Range<usize>, LinkError> {
        if fragment == 0 || fragment > self.sizes.len() {
            return Err(LinkError::BadFragment {
                index: fragment,
                count: self.sizes.len(),
            });
        }
        let start: usize = self.sizes[..fragment - 1].iter().sum();
        Ok(start..start + self.sizes[fragment - 1])
    }
}

/// Cut w into fragments; their concatenation reproduces w exactly.
pub fn partition_latent(
    w: &Tensor,
    partition: &LatentPartition,
) -> Result<Vec<Tensor>, LinkError> {
    if w.len() != partition.total() {
        return Err(LinkError::InvalidPartition(format!(
            "latent length {} does not match partition total {}",
            w.len(),
            partition.total()
        )));
    }
    let mut out = Vec::with_capacity(partition.count());
    let mut start = 0;
    for &n in partition.sizes() {
        out.push(Tensor::from_vec(
            vec![n],
            w.data()[start..start + n].to_vec(),
        )?);
        start += n;
    }
    Ok(out)
}

// ── regions and masks ────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LinkRegion {
    Rect(RectRegion),
    Semantic { label: String },
}

/// One latent-fragment-to-region binding with its loss weights and
/// perturbation strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// 1-based fragment index into the partition.
    pub fragment: usize,
    pub region: LinkRegion,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
}

impl LinkSpec {
    pub fn validate(&self, partition: &LatentPartition) -> Result<(), LinkError> {
        partition.range(self.fragment)?;
        if self.lambda1 < 0.0 {
            return Err(LinkError::NegativeWeight(self.lambda1));
        }
        if self.lambda2 < 0.0 {
            return Err(LinkError::NegativeWeight(self.lambda2));
        }
        if !(self.alpha > 0.0) {
            return Err(LinkError::BadAlpha(self.alpha));
        }
        if let LinkRegion::Rect(r) = &self.region {
            check_rect(r)?;
        }
        Ok(())
    }
}

/// Loss-weight defaults by fragment size, scaled down from the reference
/// 512-d settings (64 -> 8 axes and so on).
pub fn default_lambdas(fragment_size: usize) -> (f64, f64) {
    if fragment_size <= 8 {
        (0.01, 0.04)
    } else if fragment_size <= 16 {
        (0.01, 0.03)
    } else {
        (0.01, 0.01)
    }
}

/// Binary in-region (m2) and out-region (m1) selectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    /// 1 outside the region of interest.
    pub m1: Tensor,
    /// 1 on the pixels of interest.
    pub m2: Tensor,
}

impl RegionMask {
    pub fn new(m1: Tensor, m2: Tensor) -> Result<Self, LinkError> {
        for t in [&m1, &m2] {
            if t.shape() != [RESOLUTION, RESOLUTION]
                || t.data().iter().any(|&v| v != 0.0 && v != 1.0)
            {
                return Err(LinkError::NonBinaryMask);
            }
        }
        Ok(RegionMask { m1, m2 })
    }

    /// Complement pair from an in-region mask.
    pub fn from_in_region(m2: Tensor) -> Result<Self, LinkError> {
        let m1 = m2.map(|v| 1.0 - v);
        Self::new(m1, m2)
    }
}

fn check_rect(region: &RectRegion) -> Result<(), LinkError> {
    let fits = region.height >= 1
        && region.width >= 1
        && region.top + region.height <= RESOLUTION
        && region.left + region.width <= RESOLUTION;
    if !fits {
        return Err(LinkError::RegionOutOfBounds(region.clone(), RESOLUTION));
    }
    Ok(())
}

/// Mask pair for a rectangle; m1 + m2 is exactly all-ones.
pub fn rect_mask(region: &RectRegion) -> Result<RegionMask, LinkError> {
    check_rect(region)?;
    let mut m2 = vec![0.0; RESOLUTION * RESOLUTION];
    for y in region.top..region.top + region.height {
        for x in region.left..region.left + region.width {
            m2[y * RESOLUTION + x] = 1.0;
        }
    }
    RegionMask::from_in_region(Tensor::from_vec(vec![RESOLUTION, RESOLUTION], m2)?)
}

/// Resolve a link's masks. Rectangular links are instance-independent;
/// semantic links segment the unperturbed image, and the resulting masks are
/// held fixed for both loss terms of the invocation.
pub fn resolve_masks(link: &LinkSpec, base_image: &Tensor) -> Result<RegionMask, LinkError> {
    match &link.region {
        LinkRegion::Rect(r) => rect_mask(r),
        LinkRegion::Semantic { label } => {
            let seg = rule_segment(base_image);
            let m2 = seg
                .label(label)
                .ok_or_else(|| LinkError::UnknownSemanticLabel(label.clone()))?
                .clone();
            RegionMask::from_in_region(m2)
        }
    }
}

// ── perturbations ────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbMode {
    /// Nonzero only on the linked fragment.
    Linked,
    /// Nonzero everywhere except the linked fragment.
    Complement,
}

/// Structured perturbation vector: standard-normal draws on the supported
/// axes, exact zeros elsewhere. Draws are made in ascending axis order.
pub fn build_perturbation<R: Rng>(
    partition: &LatentPartition,
    fragment: usize,
    mode: PerturbMode,
    rng: &mut R,
) -> Result<Tensor, LinkError> {
    let range = partition.range(fragment)?;
    let d = partition.total();
    let mut data = vec![0.0; d];
    for (i, v) in data.iter_mut().enumerate() {
        let in_fragment = range.contains(&i);
        let active = match mode {
            PerturbMode::Linked => in_fragment,
            PerturbMode::Complement => !in_fragment,
        };
        if active {
            *v = rng.sample(StandardNormal);
        }
    }
    Ok(Tensor::from_vec(vec![d], data)?)
}

/// Child stream for one independent consumer, derived from the parent.
pub fn fork_rng<R: RngCore>(rng: &mut R) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng.next_u64())
}

/// The perturbation pair of one link, plus the stream seed that produced it.
#[derive(Clone, Debug)]
pub struct LinkDraws {
    pub p: Tensor,
    pub p_bar: Tensor,
    pub seed: u64,
}

impl LinkDraws {
    pub fn from_seed(
        partition: &LatentPartition,
        fragment: usize,
        seed: u64,
    ) -> Result<Self, LinkError> {
        let mut child = ChaCha8Rng::seed_from_u64(seed);
        let p = build_perturbation(partition, fragment, PerturbMode::Linked, &mut child)?;
        let p_bar = build_perturbation(partition, fragment, PerturbMode::Complement, &mut child)?;
        Ok(LinkDraws { p, p_bar, seed })
    }
}

/// Draw the perturbation pair for every link, forking one child stream per
/// link in link order.
pub fn draw_link_perturbations<R: RngCore>(
    partition: &LatentPartition,
    links: &[LinkSpec],
    rng: &mut R,
) -> Result<Vec<LinkDraws>, LinkError> {
    links
        .iter()
        .map(|link| LinkDraws::from_seed(partition, link.fragment, rng.next_u64()))
        .collect()
}

// ── locality losses ──────────────────────────────────────────────────

/// Differentiable outputs of one link's locality losses, with the perturbed
/// images surfaced for discriminator feeding.
pub struct LinkTerm {
    /// Out-region change under the linked perturbation.
    pub l1: Var,
    /// In-region change under the complement perturbation.
    pub l2: Var,
    pub x_linked: Tensor,
    pub x_complement: Tensor,
}

impl LinkTerm {
    pub fn l1_value(&self, tape: &Tape) -> f64 {
        tape.value(self.l1).item()
    }

    pub fn l2_value(&self, tape: &Tape) -> f64 {
        tape.value(self.l2).item()
    }
}

/// Core loss computation given pre-drawn perturbations and a base image
/// already on the tape. Masks broadcast across the color channels.
pub fn locality_losses_with_draws<S>(
    tape: &mut Tape,
    synth: &mut S,
    w: Var,
    base: Var,
    masks: &RegionMask,
    alpha: f64,
    draws: &LinkDraws,
) -> Result<LinkTerm, LinkError>
where
    S: FnMut(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let p_scaled = tape.leaf(draws.p.map(|v| v * alpha));
    let pbar_scaled = tape.leaf(draws.p_bar.map(|v| v * alpha));
    let w_linked = tape.add(w, p_scaled)?;
    let x_linked = synth(tape, w_linked)?;
    let w_comp = tape.add(w, pbar_scaled)?;
    let x_comp = synth(tape, w_comp)?;
    for img in [base, x_linked, x_comp] {
        if !tape.value(img).all_finite() {
            return Err(LinkError::NonFiniteOutput);
        }
    }
    let m1 = tape.leaf(masks.m1.clone());
    let m2 = tape.leaf(masks.m2.clone());
    let d1 = tape.sub(x_linked, base)?;
    let l1 = tape.masked_sum_of_squares(d1, m1)?;
    let d2 = tape.sub(x_comp, base)?;
    let l2 = tape.masked_sum_of_squares(d2, m2)?;
    Ok(LinkTerm {
        l1,
        l2,
        x_linked: tape.value(x_linked).clone(),
        x_complement: tape.value(x_comp).clone(),
    })
}

/// One link's locality losses with fresh perturbation draws.
pub fn locality_losses<S, R>(
    tape: &mut Tape,
    synth: &mut S,
    w: Var,
    partition: &LatentPartition,
    link: &LinkSpec,
    masks: &RegionMask,
    rng: &mut R,
) -> Result<LinkTerm, LinkError>
where
    S: FnMut(&mut Tape, Var) -> Result<Var, AutodiffError>,
    R: RngCore,
{
    let draws = LinkDraws::from_seed(partition, link.fragment, rng.next_u64())?;
    let base = synth(tape, w)?;
    locality_losses_with_draws(tape, synth, w, base, masks, link.alpha, &draws)
}

/// Weighted combination of the two locality terms.
pub fn reg_loss(l1: f64, l2: f64, link: &LinkSpec) -> f64 {
    link.lambda1 * l1 + link.lambda2 * l2
}

pub fn reg_loss_var(tape: &mut Tape, term: &LinkTerm, link: &LinkSpec) -> Result<Var, LinkError> {
    let lam1 = tape.scalar(link.lambda1);
    let lam2 = tape.scalar(link.lambda2);
    let a = tape.mul(term.l1, lam1)?;
    let b = tape.mul(term.l2, lam2)?;
    Ok(tape.add(a, b)?)
}

fn check_disjoint(links: &[LinkSpec]) -> Result<(), LinkError> {
    let mut seen = Vec::new();
    for link in links {
        if seen.contains(&link.fragment) {
            return Err(LinkError::OverlappingFragments(link.fragment));
        }
        seen.push(link.fragment);
    }
    Ok(())
}

/// Sum of the per-link weighted losses (computed against a shared base
/// image) given pre-drawn perturbations.
pub fn multi_link_from_draws<S>(
    tape: &mut Tape,
    synth: &mut S,
    w: Var,
    links: &[LinkSpec],
    draws: &[LinkDraws],
) -> Result<(Var, Vec<LinkTerm>), LinkError>
where
    S: FnMut(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    check_disjoint(links)?;
    let base = synth(tape, w)?;
    let base_value = tape.value(base).clone();
    let mut total: Option<Var> = None;
    let mut terms = Vec::with_capacity(links.len());
    for (link, d) in links.iter().zip(draws) {
        let masks = resolve_masks(link, &base_value)?;
        let term = locality_losses_with_draws(tape, synth, w, base, &masks, link.alpha, d)?;
        let weighted = reg_loss_var(tape, &term, link)?;
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
        terms.push(term);
    }
    let total = total.unwrap_or_else(|| tape.scalar(0.0));
    Ok((total, terms))
}

/// Multi-link regularizer: each link gets its own forked perturbation
/// stream, and the weighted terms are summed in link order.
pub fn multi_link_loss<S, R>(
    tape: &mut Tape,
    synth: &mut S,
    w: Var,
    links: &[LinkSpec],
    partition: &LatentPartition,
    rng: &mut R,
) -> Result<(Var, Vec<LinkTerm>), LinkError>
where
    S: FnMut(&mut Tape, Var) -> Result<Var, AutodiffError>,
    R: RngCore,
{
    check_disjoint(links)?;
    let draws = draw_link_perturbations(partition, links, rng)?;
    multi_link_from_draws(tape, synth, w, links, &draws)
}
