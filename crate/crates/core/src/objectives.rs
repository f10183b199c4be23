//! Losses, the composite objective and the per-method presets.
//!
//! Notation: `R_A`, `R_B` real images; `Syn_B = G_AB(R_A)`, `Syn_A = G_BA(R_B)`;
//! `Cyc_A = G_BA(Syn_B)`, `Cyc_B = G_AB(Syn_A)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::PairedBatch;
use crate::error::{contract, Error, Result};
use crate::networks::{Discriminator, GeneratorConfig, ModelBundle, Translator};

/// Mean absolute difference over all elements.
pub fn l1_loss(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.dims() != y.dims() {
        return Err(contract!("l1 operands differ in shape: {:?} vs {:?}", x.dims(), y.dims()));
    }
    Ok((x - y)?.abs()?.mean_all()?)
}

/// Cyclic-synthesized loss `‖Syn − Cyc‖₁` for one domain. Both images must come
/// from the same generator.
pub fn cs_loss(syn: &Tensor, cyc: &Tensor) -> Result<Tensor> {
    l1_loss(syn, cyc)
}

/// Cycle-consistency loss `‖R − Cyc‖₁` for one domain.
pub fn cycle_loss(real: &Tensor, cyc: &Tensor) -> Result<Tensor> {
    l1_loss(real, cyc)
}

/// `mean((D(real) − 1)²) + mean(D(fake)²)`; the two score maps may differ in size.
pub fn lsgan_d_loss(scores_real: &Tensor, scores_fake: &Tensor) -> Result<Tensor> {
    let real = (scores_real - 1.0)?.sqr()?.mean_all()?;
    let fake = scores_fake.sqr()?.mean_all()?;
    Ok((real + fake)?)
}

/// `mean((D(fake) − 1)²)`.
pub fn lsgan_g_loss(scores_fake: &Tensor) -> Result<Tensor> {
    Ok((scores_fake - 1.0)?.sqr()?.mean_all()?)
}

/// Value of a scalar tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gan,
    Pix2Pix,
    CycleGan,
    Ps2Gan,
    CsGan,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gan,
        Method::Pix2Pix,
        Method::CycleGan,
        Method::Ps2Gan,
        Method::CsGan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gan => "gan",
            Method::Pix2Pix => "pix2pix",
            Method::CycleGan => "cyclegan",
            Method::Ps2Gan => "ps2gan",
            Method::CsGan => "csgan",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Gan => "GAN",
            Method::Pix2Pix => "Pix2Pix",
            Method::CycleGan => "CycleGAN",
            Method::Ps2Gan => "PS2GAN",
            Method::CsGan => "CSGAN",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method `{s}`; valid presets: {}", valid.join(", ")))
            })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weights of the cycle (`lambda_*`) and cyclic-synthesized (`mu_*`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub mu_a: f64,
    pub mu_b: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_a: 0.0,
        lambda_b: 0.0,
        mu_a: 0.0,
        mu_b: 0.0,
    };

    pub const CSGAN: LossWeights = LossWeights {
        lambda_a: 10.0,
        lambda_b: 10.0,
        mu_a: 30.0,
        mu_b: 30.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_a", self.lambda_a),
            ("lambda_b", self.lambda_b),
            ("mu_a", self.mu_a),
            ("mu_b", self.mu_b),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// One additive term of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    AdvA,
    AdvB,
    CycA,
    CycB,
    CsA,
    CsB,
    /// `‖R_A − Syn_A‖₁`
    SynA,
    /// `‖R_B − Syn_B‖₁`
    SynB,
    /// `‖R_B − Syn_B‖₁` weighted as the paired reconstruction term
    PixL1,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::AdvA => "adv_A",
            Term::AdvB => "adv_B",
            Term::CycA => "cyc_A",
            Term::CycB => "cyc_B",
            Term::CsA => "cs_A",
            Term::CsB => "cs_B",
            Term::SynA => "syn_A",
            Term::SynB => "syn_B",
            Term::PixL1 => "pix_l1",
        }
    }
}

pub const EXTRA_SYN: &str = "syn";
pub const EXTRA_L1: &str = "l1";

/// Which loss terms are active and how they are weighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub method: Method,
    pub weights: LossWeights,
    /// Preset-specific weights: `syn` (ps2gan), `l1` (pix2pix).
    pub extra_weights: BTreeMap<String, f64>,
    /// Discriminators see the source image concatenated along channels.
    pub conditional_d: bool,
    pub bidirectional: bool,
    /// Multiply the discriminator loss by 0.5.
    pub halve_d_loss: bool,
}

/// The named loss configuration of one comparison method.
pub fn make_preset(method: &str) -> Result<ObjectiveSpec> {
    Ok(ObjectiveSpec::preset(method.parse()?))
}

impl ObjectiveSpec {
    pub fn preset(method: Method) -> Self {
        let base = ObjectiveSpec {
            method,
            weights: LossWeights::ZERO,
            extra_weights: BTreeMap::new(),
            conditional_d: false,
            bidirectional: true,
            halve_d_loss: false,
        };
        let cycle = LossWeights {
            mu_a: 0.0,
            mu_b: 0.0,
            ..LossWeights::CSGAN
        };
        match method {
            Method::Gan => ObjectiveSpec {
                bidirectional: false,
                ..base
            },
            Method::Pix2Pix => ObjectiveSpec {
                bidirectional: false,
                conditional_d: true,
                extra_weights: [(EXTRA_L1.to_string(), 100.0)].into(),
                ..base
            },
            Method::CycleGan => ObjectiveSpec {
                weights: cycle,
                ..base
            },
            Method::Ps2Gan => ObjectiveSpec {
                weights: cycle,
                extra_weights: [(EXTRA_SYN.to_string(), 10.0)].into(),
                ..base
            },
            Method::CsGan => ObjectiveSpec {
                weights: LossWeights::CSGAN,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        for (k, &w) in &self.extra_weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("extra weight `{k}` must be finite and non-negative")));
            }
        }
        let need_extra = |key: &str| {
            if self.extra_weights.contains_key(key) {
                Ok(())
            } else {
                Err(Error::Config(format!("{} needs extra weight `{key}`", self.method)))
            }
        };
        match self.method {
            Method::Gan => {
                if self.bidirectional || self.conditional_d {
                    return Err(Error::Config("gan is unidirectional with an unconditional discriminator".into()));
                }
            }
            Method::Pix2Pix => {
                if self.bidirectional {
                    return Err(Error::Config("pix2pix is unidirectional".into()));
                }
                need_extra(EXTRA_L1)?;
            }
            Method::CycleGan | Method::CsGan => {
                if !self.bidirectional {
                    return Err(Error::Config(format!("{} must be bidirectional", self.method)));
                }
            }
            Method::Ps2Gan => {
                if !self.bidirectional {
                    return Err(Error::Config("ps2gan must be bidirectional".into()));
                }
                need_extra(EXTRA_SYN)?;
            }
        }
        Ok(())
    }

    fn extra(&self, key: &str) -> f64 {
        self.extra_weights.get(key).copied().unwrap_or(0.0)
    }

    /// Active generator-side terms and their weights.
    pub fn generator_terms(&self) -> Vec<(Term, f64)> {
        let w = &self.weights;
        let cycle = [
            (Term::AdvA, 1.0),
            (Term::AdvB, 1.0),
            (Term::CycA, w.lambda_a),
            (Term::CycB, w.lambda_b),
        ];
        match self.method {
            Method::Gan => vec![(Term::AdvB, 1.0)],
            Method::Pix2Pix => vec![(Term::AdvB, 1.0), (Term::PixL1, self.extra(EXTRA_L1))],
            Method::CycleGan => cycle.to_vec(),
            Method::Ps2Gan => {
                let syn = self.extra(EXTRA_SYN);
                let mut t = cycle.to_vec();
                t.extend([(Term::SynA, syn), (Term::SynB, syn)]);
                t
            }
            Method::CsGan => {
                let mut t = cycle.to_vec();
                t.extend([(Term::CsA, w.mu_a), (Term::CsB, w.mu_b)]);
                t
            }
        }
    }

    /// Input channels the discriminators need under this objective.
    pub fn discriminator_channels(&self, generator: &GeneratorConfig) -> usize {
        if self.conditional_d {
            generator.in_channels + generator.out_channels
        } else {
            generator.out_channels
        }
    }
}

/// Raw (unweighted) loss values from one evaluation of the objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub adv_a: f64,
    pub adv_b: f64,
    pub cyc_a: f64,
    pub cyc_b: f64,
    pub cs_a: f64,
    pub cs_b: f64,
    /// Preset-specific terms keyed by [`Term::name`] (`syn_A`, `syn_B`, `pix_l1`).
    pub extra: BTreeMap<String, f64>,
    pub d_a: f64,
    pub d_b: f64,
}

impl LossParts {
    pub fn get(&self, term: Term) -> Option<f64> {
        match term {
            Term::AdvA => Some(self.adv_a),
            Term::AdvB => Some(self.adv_b),
            Term::CycA => Some(self.cyc_a),
            Term::CycB => Some(self.cyc_b),
            Term::CsA => Some(self.cs_a),
            Term::CsB => Some(self.cs_b),
            Term::SynA | Term::SynB | Term::PixL1 => self.extra.get(term.name()).copied(),
        }
    }

    fn set(&mut self, term: Term, value: f64) {
        match term {
            Term::AdvA => self.adv_a = value,
            Term::AdvB => self.adv_b = value,
            Term::CycA => self.cyc_a = value,
            Term::CycB => self.cyc_b = value,
            Term::CsA => self.cs_a = value,
            Term::CsB => self.cs_b = value,
            Term::SynA | Term::SynB | Term::PixL1 => {
                self.extra.insert(term.name().to_string(), value);
            }
        }
    }

    fn named_values(&self) -> impl Iterator<Item = (&str, f64)> {
        [
            ("adv_A", self.adv_a),
            ("adv_B", self.adv_b),
            ("cyc_A", self.cyc_a),
            ("cyc_B", self.cyc_b),
            ("cs_A", self.cs_a),
            ("cs_B", self.cs_b),
            ("d_A", self.d_a),
            ("d_B", self.d_b),
        ]
        .into_iter()
        .chain(self.extra.iter().map(|(k, &v)| (k.as_str(), v)))
    }
}

/// Loss parts together with the weighted totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_a: f64,
    pub adv_b: f64,
    pub cyc_a: f64,
    pub cyc_b: f64,
    pub cs_a: f64,
    pub cs_b: f64,
    pub extra: BTreeMap<String, f64>,
    pub d_a: f64,
    pub d_b: f64,
    pub total_g: f64,
    pub total_d: f64,
}

/// `total_G = Σ weight·term` over [`ObjectiveSpec::generator_terms`];
/// `total_D = d_A + d_B` (halved when configured).
pub fn total_objective(parts: &LossParts, spec: &ObjectiveSpec) -> Result<LossBreakdown> {
    if let Some((name, _)) = parts.named_values().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric {
            term: name.to_string(),
            iteration: 0,
        });
    }
    let mut total_g = 0.0;
    for (term, weight) in spec.generator_terms() {
        let value = parts
            .get(term)
            .ok_or_else(|| contract!("loss parts lack the `{}` term", term.name()))?;
        total_g += weight * value;
    }
    let d_scale = if spec.halve_d_loss { 0.5 } else { 1.0 };
    Ok(LossBreakdown {
        adv_a: parts.adv_a,
        adv_b: parts.adv_b,
        cyc_a: parts.cyc_a,
        cyc_b: parts.cyc_b,
        cs_a: parts.cs_a,
        cs_b: parts.cs_b,
        extra: parts.extra.clone(),
        d_a: parts.d_a,
        d_b: parts.d_b,
        total_g,
        total_d: d_scale * (parts.d_a + parts.d_b),
    })
}

#[derive(Debug, Clone)]
pub struct CycleImages {
    pub syn_a: Tensor,
    pub syn_b: Tensor,
    pub cyc_a: Tensor,
    pub cyc_b: Tensor,
}

/// `Syn_B = G_AB(R_A)`, `Syn_A = G_BA(R_B)`, `Cyc_A = G_BA(Syn_B)`, `Cyc_B = G_AB(Syn_A)`.
pub fn translate_cycle(
    g_ab: &dyn Translator,
    g_ba: &dyn Translator,
    real_a: &Tensor,
    real_b: &Tensor,
) -> Result<CycleImages> {
    let syn_b = g_ab.translate(real_a)?;
    let syn_a = g_ba.translate(real_b)?;
    let cyc_a = g_ba.translate(&syn_b)?;
    let cyc_b = g_ab.translate(&syn_a)?;
    Ok(CycleImages {
        syn_a,
        syn_b,
        cyc_a,
        cyc_b,
    })
}

pub fn forward_cycle(bundle: &ModelBundle, batch: &PairedBatch) -> Result<CycleImages> {
    translate_cycle(&bundle.g_ab, &bundle.g_ba, batch.a.tensor(), batch.b.tensor())
}

fn d_input(spec: &ObjectiveSpec, condition: &Tensor, image: &Tensor) -> Result<Tensor> {
    if spec.conditional_d {
        Ok(Tensor::cat(&[condition, image], 1)?)
    } else {
        Ok(image.clone())
    }
}

fn score(d: &Discriminator, spec: &ObjectiveSpec, condition: &Tensor, image: &Tensor) -> Result<Tensor> {
    d.forward(&d_input(spec, condition, image)?)
}

/// Differentiable generator objective for one batch plus the images the
/// discriminators are trained against.
#[derive(Debug)]
pub struct GeneratorObjective {
    pub total: Tensor,
    pub parts: LossParts,
    /// Synthesized domain-A images (bidirectional objectives only).
    pub fake_a: Option<Tensor>,
    pub fake_b: Tensor,
}

pub fn generator_objective(
    bundle: &ModelBundle,
    batch: &PairedBatch,
    spec: &ObjectiveSpec,
) -> Result<GeneratorObjective> {
    let r_a = batch.a.tensor();
    let r_b = batch.b.tensor();
    let terms = spec.generator_terms();

    let mut values: Vec<(Term, f64, Tensor)> = Vec::with_capacity(terms.len());
    let (fake_a, fake_b) = if spec.bidirectional {
        let imgs = forward_cycle(bundle, batch)?;
        for &(term, weight) in &terms {
            let t = match term {
                Term::AdvA => lsgan_g_loss(&score(&bundle.d_a, spec, r_b, &imgs.syn_a)?)?,
                Term::AdvB => lsgan_g_loss(&score(&bundle.d_b, spec, r_a, &imgs.syn_b)?)?,
                Term::CycA => cycle_loss(r_a, &imgs.cyc_a)?,
                Term::CycB => cycle_loss(r_b, &imgs.cyc_b)?,
                Term::CsA => cs_loss(&imgs.syn_a, &imgs.cyc_a)?,
                Term::CsB => cs_loss(&imgs.syn_b, &imgs.cyc_b)?,
                Term::SynA => l1_loss(r_a, &imgs.syn_a)?,
                Term::SynB | Term::PixL1 => l1_loss(r_b, &imgs.syn_b)?,
            };
            values.push((term, weight, t));
        }
        (Some(imgs.syn_a), imgs.syn_b)
    } else {
        let syn_b = bundle.g_ab.forward(r_a)?;
        for &(term, weight) in &terms {
            let t = match term {
                Term::AdvB => lsgan_g_loss(&score(&bundle.d_b, spec, r_a, &syn_b)?)?,
                Term::PixL1 | Term::SynB => l1_loss(r_b, &syn_b)?,
                other => {
                    return Err(contract!(
                        "term `{}` needs a bidirectional objective",
                        other.name()
                    ))
                }
            };
            values.push((term, weight, t));
        }
        (None, syn_b)
    };

    let mut parts = LossParts::default();
    let mut total: Option<Tensor> = None;
    for (term, weight, t) in values {
        parts.set(term, scalar(&t)?);
        let weighted = t.affine(weight, 0.0)?;
        total = Some(match total {
            None => weighted,
            Some(acc) => (acc + weighted)?,
        });
    }
    let total = total.ok_or_else(|| contract!("objective has no generator terms"))?;
    Ok(GeneratorObjective {
        total,
        parts,
        fake_a,
        fake_b,
    })
}

/// Differentiable discriminator objective. Fakes are detached so no gradient
/// reaches the generators.
#[derive(Debug)]
pub struct DiscriminatorObjective {
    pub total: Tensor,
    pub d_a: f64,
    pub d_b: f64,
}

pub fn discriminator_objective(
    bundle: &ModelBundle,
    batch: &PairedBatch,
    spec: &ObjectiveSpec,
    fake_a: Option<&Tensor>,
    fake_b: &Tensor,
) -> Result<DiscriminatorObjective> {
    let r_a = batch.a.tensor();
    let r_b = batch.b.tensor();
    let loss_b = lsgan_d_loss(
        &score(&bundle.d_b, spec, r_a, r_b)?,
        &score(&bundle.d_b, spec, r_a, &fake_b.detach())?,
    )?;
    let d_b = scalar(&loss_b)?;
    let (total, d_a) = match (spec.bidirectional, fake_a) {
        (true, Some(fake_a)) => {
            let loss_a = lsgan_d_loss(
                &score(&bundle.d_a, spec, r_b, r_a)?,
                &score(&bundle.d_a, spec, r_b, &fake_a.detach())?,
            )?;
            let d_a = scalar(&loss_a)?;
            ((loss_a + loss_b)?, d_a)
        }
        (true, None) => return Err(contract!("bidirectional objective needs domain-A fakes")),
        (false, _) => (loss_b, 0.0),
    };
    let total = if spec.halve_d_loss { total.affine(0.5, 0.0)? } else { total };
    Ok(DiscriminatorObjective { total, d_a, d_b })
}
