//! Training objectives. Every expectation is a mean over batch and spatial
//! (or patch) positions; all functions return scalar tensors so they can be
//! differentiated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::perceptual::FeatureExtractor;
use crate::tensor::{grad, no_grad, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelMode {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvMode {
    Wgan,
    Lsgan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Stage> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(Error::InvalidArgument(format!("stage must be 1 or 2, got {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_a: f64,
    pub lambda_p: f64,
    pub gp_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_g: 0.05,
            lambda_a: 0.5,
            lambda_p: 5.0,
            gp_lambda: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_g", self.lambda_g),
            ("lambda_a", self.lambda_a),
            ("lambda_p", self.lambda_p),
            ("gp_lambda", self.gp_lambda),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// One logged step. Generator-side fields are zero on critic-only records
/// and vice versa.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub attention: f64,
    pub adv_g: f64,
    pub perceptual: f64,
    pub total: f64,
    pub adv_d: f64,
    pub gp_c: f64,
    pub gp_a: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.l1,
            self.attention,
            self.adv_g,
            self.perceptual,
            self.total,
            self.adv_d,
            self.gp_c,
            self.gp_a,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

pub fn pixel_loss(pred: &Tensor, target: &Tensor, mode: PixelMode) -> Result<Tensor> {
    same_shape("pixel_loss", pred, target)?;
    let diff = pred.sub(target)?;
    match mode {
        PixelMode::L1 => diff.abs()?.mean(),
        PixelMode::L2 => diff.square()?.mean(),
    }
}

/// Color batch `N×C×H×W` times saliency `N×1×H×W`.
pub fn weighted(color: &Tensor, saliency: &Tensor) -> Result<Tensor> {
    let (n, _, h, w) = color.dims4()?;
    let (sn, sc, sh, sw) = saliency.dims4()?;
    if (sn, sc, sh, sw) != (n, 1, h, w) {
        return Err(Error::shape(
            "weighted",
            format!("color {:?} vs saliency {:?}", color.shape(), saliency.shape()),
        ));
    }
    color.mul(saliency)
}

/// Mean absolute difference between `pred_c ⊙ pred_s` and `gt_c ⊙ gt_s`.
pub fn attention_loss(pred_c: &Tensor, pred_s: &Tensor, gt_c: &Tensor, gt_s: &Tensor) -> Result<Tensor> {
    same_shape("attention_loss", pred_c, gt_c)?;
    same_shape("attention_loss", pred_s, gt_s)?;
    weighted(pred_c, pred_s)?.sub(&weighted(gt_c, gt_s)?)?.abs()?.mean()
}

/// Generator side of the adversarial objective. `da` is absent when the
/// attention critic is disabled.
pub fn generator_adv_loss(dc: &Tensor, da: Option<&Tensor>, mode: AdvMode) -> Result<Tensor> {
    let term = |scores: &Tensor| -> Result<Tensor> {
        match mode {
            AdvMode::Wgan => scores.mean()?.neg(),
            AdvMode::Lsgan => scores.add_scalar(-1.0)?.square()?.mean()?.scale(0.5),
        }
    };
    let mut loss = term(dc)?;
    if let Some(da) = da {
        loss = loss.add(&term(da)?)?;
    }
    Ok(loss)
}

/// Critic scores on real and generated inputs.
#[derive(Clone, Debug)]
pub struct CriticScores {
    pub real: Tensor,
    pub fake: Tensor,
}

/// Critic objective, summed over the color critic and (when present) the
/// attention critic. In LSGAN mode the penalties are ignored.
pub fn critic_loss(
    color: &CriticScores,
    attention: Option<&CriticScores>,
    gp_c: &Tensor,
    gp_a: &Tensor,
    mode: AdvMode,
) -> Result<Tensor> {
    let term = |s: &CriticScores| -> Result<Tensor> {
        match mode {
            AdvMode::Wgan => s.fake.mean()?.sub(&s.real.mean()?),
            AdvMode::Lsgan => s
                .real
                .add_scalar(-1.0)?
                .square()?
                .mean()?
                .add(&s.fake.square()?.mean()?)?
                .scale(0.5),
        }
    };
    let mut loss = term(color)?;
    if let Some(a) = attention {
        loss = loss.add(&term(a)?)?;
    }
    if mode == AdvMode::Wgan {
        loss = loss.add(gp_c)?.add(gp_a)?;
    }
    Ok(loss)
}

const GP_NORM_EPS: f64 = 1e-12;

/// `λ · mean((‖∇D(x̂)‖₂ − 1)²)` on random interpolates between `real` and
/// `fake`, one mixing coefficient per sample drawn from `seed`. The critic
/// output is averaged over its patch map before differentiation.
pub fn gradient_penalty(
    critic: &mut dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    gp_lambda: f64,
    seed: u64,
) -> Result<Tensor> {
    same_shape("gradient_penalty", real, fake)?;
    if gp_lambda == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let (n, c, h, w) = real.dims4()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mixed = {
        let _guard = no_grad();
        let e = Tensor::new(eps, &[n, 1, 1, 1])?;
        let one_minus = e.neg()?.add_scalar(1.0)?;
        real.mul(&e)?.add(&fake.mul(&one_minus)?)?
    };
    let x_hat = mixed.to_variable();
    let scores = critic.score(&x_hat)?;
    if scores.shape().first() != Some(&n) {
        return Err(Error::shape(
            "gradient_penalty",
            format!("critic returned {:?} for a batch of {n}", scores.shape()),
        ));
    }
    let axes: Vec<usize> = (1..scores.rank()).collect();
    let per_sample = if axes.is_empty() {
        scores.clone()
    } else {
        scores.mean_keepdim(&axes)?
    };
    let not_differentiable = || Error::NotDifferentiable {
        op: "gradient_penalty",
        detail: "critic output does not depend on its input".into(),
    };
    if !per_sample.requires_grad() {
        return Err(not_differentiable());
    }
    let g = grad(&per_sample.sum()?, &[&x_hat], true)?
        .pop()
        .flatten()
        .ok_or_else(not_differentiable)?;
    debug_assert_eq!(g.shape(), &[n, c, h, w]);
    let norm = g.square()?.sum_keepdim(&[1, 2, 3])?.add_scalar(GP_NORM_EPS)?.sqrt()?;
    norm.add_scalar(-1.0)?.square()?.mean()?.scale(gp_lambda)
}

/// Mean absolute feature difference at the extractor's layer. Target
/// features are computed without a graph.
pub fn perceptual_loss(extractor: &dyn FeatureExtractor, pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    same_shape("perceptual_loss", pred, gt)?;
    let target = {
        let _guard = no_grad();
        extractor.extract(gt)?
    };
    extractor.extract(pred)?.sub(&target)?.abs()?.mean()
}

/// Scalar generator-loss components before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorComponents {
    pub l1: f64,
    pub attention: f64,
    pub adv_g: f64,
    pub perceptual: f64,
}

/// Weighted total `l1 + λ_G·adv + λ_A·attention + λ_p·perceptual`; stage 1
/// drops the adversarial and perceptual terms.
pub fn total_generator_loss(c: GeneratorComponents, weights: &LossWeights, stage: Stage) -> Result<LossBreakdown> {
    weights.validate()?;
    let (adv_g, perceptual) = match stage {
        Stage::One => (0.0, 0.0),
        Stage::Two => (c.adv_g, c.perceptual),
    };
    let parts = [c.l1, c.attention, adv_g, perceptual];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss components {parts:?}")));
    }
    let total = c.l1 + weights.lambda_g * adv_g + weights.lambda_a * c.attention + weights.lambda_p * perceptual;
    Ok(LossBreakdown {
        l1: c.l1,
        attention: c.attention,
        adv_g,
        perceptual,
        total,
        ..LossBreakdown::default()
    })
}

/// Differentiable counterpart of [`total_generator_loss`]; absent terms
/// contribute nothing. Summation order matches the scalar version.
pub fn combine_generator_loss(
    l1: &Tensor,
    attention: Option<&Tensor>,
    adv_g: Option<&Tensor>,
    perceptual: Option<&Tensor>,
    weights: &LossWeights,
    stage: Stage,
) -> Result<Tensor> {
    weights.validate()?;
    let mut total = l1.clone();
    if stage == Stage::Two {
        if let Some(adv) = adv_g {
            total = total.add(&adv.scale(weights.lambda_g)?)?;
        }
    }
    if let Some(att) = attention {
        total = total.add(&att.scale(weights.lambda_a)?)?;
    }
    if stage == Stage::Two {
        if let Some(p) = perceptual {
            total = total.add(&p.scale(weights.lambda_p)?)?;
        }
    }
    Ok(total)
}
