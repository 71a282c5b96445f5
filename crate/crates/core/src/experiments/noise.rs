//! Random and adversarial input perturbations.

use serde::{Deserialize, Serialize};

use super::dataset::Split;
use crate::network::{backward_with, Loss, Network, Target};
use crate::numerics::{Rng, Vector};
use crate::parallel::Exec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Fgsm,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Fgsm => "fgsm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Standard deviation of the Gaussian noise.
    #[serde(default)]
    pub sigma: f64,
    /// FGSM step size.
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseConfig {
            kind: NoiseKind::Gaussian,
            sigma,
            epsilon: 0.0,
            seed,
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        NoiseConfig {
            kind: NoiseKind::Fgsm,
            sigma: 0.0,
            epsilon,
            seed: 0,
        }
    }

    /// The magnitude parameter matching `kind`.
    pub fn level(&self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => self.sigma,
            NoiseKind::Fgsm => self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (name, value) = match self.kind {
            NoiseKind::Gaussian => ("sigma", self.sigma),
            NoiseKind::Fgsm => ("epsilon", self.epsilon),
        };
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::Range {
                name,
                value,
                range: "[0, inf)",
            });
        }
        Ok(())
    }
}

/// `x + e` with `e ~ N(0, sigma^2 I)` drawn from `rng`.
pub fn gaussian_noise(x: &Vector, sigma: f64, rng: &mut Rng) -> Vector {
    let out = x.as_slice().iter().map(|v| v + sigma * rng.standard_normal()).collect();
    Vector::from_raw(out)
}

/// `x + e` with `e ~ N(0, sigma^2 I)`, seeded by `cfg.seed`.
pub fn gaussian_perturb(x: &Vector, cfg: &NoiseConfig) -> Result<Vector> {
    if cfg.kind != NoiseKind::Gaussian {
        return Err(Error::Config {
            path: "noise.kind".to_string(),
            message: "gaussian_perturb needs kind = gaussian".to_string(),
        });
    }
    cfg.validate()?;
    Ok(gaussian_noise(x, cfg.sigma, &mut Rng::new(cfg.seed)))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn step_along_sign(x: &Vector, grad: &Vector, epsilon: f64) -> Vector {
    Vector::from_raw(x.as_slice().iter().zip(grad.as_slice()).map(|(v, g)| v + epsilon * sign(*g)).collect())
}

/// Fast gradient sign step `x + epsilon sign(dL/dx)`, with `sign(0) = 0`.
pub fn fgsm_perturb(net: &Network, x: &Vector, target: &Target, epsilon: f64, loss: Loss) -> Result<Vector> {
    NoiseConfig::fgsm(epsilon).validate()?;
    let b = backward_with(net, std::slice::from_ref(x), std::slice::from_ref(target), loss, Exec::Sequential)?;
    Ok(step_along_sign(x, &b.input_grads[0], epsilon))
}

/// Perturbs every input of `split`. Gaussian noise for sample `i` comes from
/// substream `i` of the seed; FGSM uses the sample's own label under `loss`.
pub fn perturb_split(net: &Network, split: &Split, cfg: &NoiseConfig, loss: Loss, exec: Exec) -> Result<Vec<Vector>> {
    cfg.validate()?;
    match cfg.kind {
        NoiseKind::Gaussian => {
            let base = Rng::new(cfg.seed);
            Ok(exec.map(split.len(), |i| gaussian_noise(&split.inputs[i], cfg.sigma, &mut base.substream(i as u64))))
        }
        NoiseKind::Fgsm => {
            let targets: Vec<Target> = split.labels.iter().map(|&y| Target::Class(y)).collect();
            let mut out = Vec::with_capacity(split.len());
            for (xs, ts) in split.inputs.chunks(256).zip(targets.chunks(256)) {
                // Input gradients of the batch mean differ from per-sample
                // gradients by a positive factor, which sign ignores.
                let b = backward_with(net, xs, ts, loss, exec)?;
                out.extend(xs.iter().zip(&b.input_grads).map(|(x, g)| step_along_sign(x, g, cfg.epsilon)));
            }
            Ok(out)
        }
    }
}
