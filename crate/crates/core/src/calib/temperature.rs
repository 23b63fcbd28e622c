use serde::{Deserialize, Serialize};

use super::{nll, softmax_rows};
use crate::data::LabeledDataset;
use crate::distill::mask::{self, MaskSpec};
use crate::error::{Error, Result};
use crate::nets::{forward_logits, Params};
use crate::seeds::{self, stream};
use crate::tensor::Tensor;

pub const MIN_TEMPERATURE: f64 = 1e-3;
pub const MAX_TEMPERATURE: f64 = 100.0;
const SEARCH_LO: f64 = 0.05;
const SEARCH_HI: f64 = 20.0;
const SEARCH_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// One damped Newton step from the initial temperature.
    OneStep,
    /// Golden-section search over `[0.05, 20]`.
    #[default]
    Converge,
}

/// Where the fitting mask is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskDomain {
    /// Mask validation inputs, then run the network.
    #[default]
    Inputs,
    /// Mask the logits of unmasked inputs.
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSpec {
    pub init_temperature: f64,
    pub lr: f64,
    pub mode: FitMode,
    /// `None` is plain temperature scaling.
    pub mask: Option<MaskSpec>,
    pub domain: MaskDomain,
    /// Masked copies of every validation example.
    pub repeats: usize,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            init_temperature: 1.5,
            lr: 0.02,
            mode: FitMode::Converge,
            mask: None,
            domain: MaskDomain::Inputs,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub mode: FitMode,
    pub initial: f64,
    pub steps: usize,
    /// NLL of the fitting logits at the returned temperature.
    pub final_nll: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub temperature: f64,
    pub trace: FitTrace,
    pub mask: Option<MaskSpec>,
    pub domain: MaskDomain,
    pub mask_seed: Option<u64>,
}

impl TemperatureModel {
    pub fn identity() -> Self {
        TemperatureModel {
            temperature: 1.0,
            trace: FitTrace {
                mode: FitMode::Converge,
                initial: 1.0,
                steps: 0,
                final_nll: f64::NAN,
                warnings: vec![],
            },
            mask: None,
            domain: MaskDomain::Inputs,
            mask_seed: None,
        }
    }
}

/// `softmax(z / T)`.
pub fn apply_temperature(logits: &Tensor, model: &TemperatureModel) -> Result<Tensor> {
    if !(model.temperature > 0.0) {
        return Err(Error::usage(format!("temperature must be > 0, got {}", model.temperature)));
    }
    Ok(softmax_rows(logits, model.temperature))
}

/// Fits `T` on the validation set. With a mask, every validation example is
/// masked (inputs or logits per `spec.domain`) only for fitting.
pub fn fit_temperature(
    params: &Params,
    val: &LabeledDataset,
    spec: &FitSpec,
    seed: u64,
) -> Result<TemperatureModel> {
    if val.is_empty() {
        return Err(Error::usage("temperature fitting needs a nonempty validation set"));
    }
    let active = match &spec.mask {
        Some(m) => {
            m.validate()?;
            !m.is_identity()
        }
        None => false,
    };
    if spec.repeats == 0 {
        return Err(Error::usage("mask repeats must be positive"));
    }
    let (logits, labels) = if !active {
        (forward_logits(params, val.features())?, val.labels().to_vec())
    } else {
        let m = spec.mask.as_ref();
        let mut rng = seeds::rng(seed, stream::CALIBRATE);
        let clean = match spec.domain {
            MaskDomain::Logits => Some(forward_logits(params, val.features())?),
            MaskDomain::Inputs => None,
        };
        let mut parts = Vec::with_capacity(spec.repeats);
        let mut labels = Vec::with_capacity(spec.repeats * val.len());
        for _ in 0..spec.repeats {
            parts.push(match &clean {
                Some(z) => mask::mask_batch(z, m, &mut rng)?,
                None => forward_logits(params, &mask::mask_batch(val.features(), m, &mut rng)?)?,
            });
            labels.extend_from_slice(val.labels());
        }
        (Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?, labels)
    };
    let mut model = fit_temperature_on_logits(&logits, &labels, spec)?;
    model.mask = spec.mask;
    model.domain = spec.domain;
    model.mask_seed = active.then_some(seed);
    Ok(model)
}

/// Fits `T` directly on fixed logits (the mask in `spec` is not used).
pub fn fit_temperature_on_logits(logits: &Tensor, labels: &[usize], spec: &FitSpec) -> Result<TemperatureModel> {
    let f = |t: f64| nll(logits, labels, t);
    let mut warnings = Vec::new();
    let (temperature, steps) = match spec.mode {
        FitMode::Converge => golden_section(&f)?,
        FitMode::OneStep => {
            let t0 = spec.init_temperature;
            if !(t0 > 0.0) {
                return Err(Error::usage(format!("initial temperature must be > 0, got {t0}")));
            }
            let (d1, d2) = nll_derivatives(logits, labels, t0);
            let step = if d2 > 0.0 { d1 / d2 } else { d1 };
            let t1 = t0 - spec.lr * step;
            (clamp(t1, &mut warnings), 1)
        }
    };
    if !temperature.is_finite() {
        return Err(Error::NonFinite("fitted temperature".into()));
    }
    Ok(TemperatureModel {
        temperature,
        trace: FitTrace {
            mode: spec.mode,
            initial: match spec.mode {
                FitMode::OneStep => spec.init_temperature,
                FitMode::Converge => 0.5 * (SEARCH_LO + SEARCH_HI),
            },
            steps,
            final_nll: f(temperature)?,
            warnings,
        },
        mask: None,
        domain: MaskDomain::Inputs,
        mask_seed: None,
    })
}

fn clamp(t: f64, warnings: &mut Vec<String>) -> f64 {
    if t > 0.0 && t <= MAX_TEMPERATURE {
        return t;
    }
    let c = if t > MAX_TEMPERATURE { MAX_TEMPERATURE } else { MIN_TEMPERATURE };
    warnings.push(format!("temperature {t} left (0, {MAX_TEMPERATURE}]; clamped to {c}"));
    c
}

fn golden_section(f: &dyn Fn(f64) -> Result<f64>) -> Result<(f64, usize)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (SEARCH_LO, SEARCH_HI);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut steps = 0;
    while b - a > SEARCH_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
        steps += 1;
    }
    Ok((0.5 * (a + b), steps))
}

/// First and second derivative of the mean NLL in `T`.
fn nll_derivatives(logits: &Tensor, labels: &[usize], t: f64) -> (f64, f64) {
    // in β = 1/T: dℓ/dβ = E_p[z] − z_y, d²ℓ/dβ² = Var_p[z]
    let p = softmax_rows(logits, t);
    let n = labels.len() as f64;
    let (mut g, mut h) = (0.0, 0.0);
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        let pr = p.row(i);
        let e: f64 = z.iter().zip(pr).map(|(a, b)| a * b).sum();
        let e2: f64 = z.iter().zip(pr).map(|(a, b)| a * a * b).sum();
        g += e - z[y];
        h += e2 - e * e;
    }
    let (g, h) = (g / n, h / n);
    (-g / (t * t), h / t.powi(4) + 2.0 * g / t.powi(3))
}
