use core::fmt;
use core::str::FromStr;

use alloc::string::ToString;

use crate::error::{invalid, Error, Result};
use crate::losses::{AdversarialKind, D2dceParams};

/// Conditioning loss attached to the discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Conditioning {
    /// Adversarial loss only.
    None,
    /// Softmax cross-entropy of a linear classifier on raw features.
    Acgan,
    /// Cross-entropy between unit-norm embeddings and unit-norm proxies.
    NormalizedCe,
    /// Data-to-data cross-entropy.
    #[default]
    D2dce,
    /// Conditional contrastive loss.
    TwoC,
    /// Class-embedding inner product added to the adversarial logit.
    Projection,
}

impl Conditioning {
    pub const ALL: [Conditioning; 6] = [
        Conditioning::None,
        Conditioning::Acgan,
        Conditioning::NormalizedCe,
        Conditioning::D2dce,
        Conditioning::TwoC,
        Conditioning::Projection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Conditioning::None => "none",
            Conditioning::Acgan => "acgan",
            Conditioning::NormalizedCe => "normalized_ce",
            Conditioning::D2dce => "d2dce",
            Conditioning::TwoC => "two_c",
            Conditioning::Projection => "projection",
        }
    }

    /// Whether the loss compares unit-norm embeddings.
    pub fn normalized(self) -> bool {
        matches!(
            self,
            Conditioning::NormalizedCe | Conditioning::D2dce | Conditioning::TwoC
        )
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Conditioning::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownKind {
                what: "conditioning",
                name: s.to_string(),
            })
    }
}

/// Everything one training run needs, including network sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub batch_size: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub n_dis: usize,
    pub total_iters: usize,
    pub lambda: f64,
    pub tau: f64,
    pub m_p: f64,
    pub m_n: f64,
    pub mask_drop_p: f64,
    pub ema_enabled: bool,
    pub ema_decay: f64,
    pub ema_start: usize,
    pub seed: u64,
    pub adversarial: AdversarialKind,
    pub conditioning: Conditioning,
    pub tac_enabled: bool,
    pub log_interval: usize,
    pub eval_samples: usize,
    pub z_dim: usize,
    pub label_embed_dim: usize,
    pub g_hidden_width: usize,
    pub g_hidden_layers: usize,
    pub d_hidden_width: usize,
    pub d_hidden_layers: usize,
    pub embed_dim: usize,
    pub leaky_slope: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr_d: 2e-4,
            lr_g: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            n_dis: 5,
            total_iters: 20_000,
            lambda: 0.5,
            tau: 0.5,
            m_p: 0.98,
            m_n: 0.02,
            mask_drop_p: 0.0,
            ema_enabled: true,
            ema_decay: 0.9999,
            ema_start: 1000,
            seed: 0,
            adversarial: AdversarialKind::Hinge,
            conditioning: Conditioning::D2dce,
            tac_enabled: false,
            log_interval: 100,
            eval_samples: 1000,
            z_dim: 4,
            label_embed_dim: 8,
            g_hidden_width: 128,
            g_hidden_layers: 3,
            d_hidden_width: 128,
            d_hidden_layers: 3,
            embed_dim: 32,
            leaky_slope: 0.2,
        }
    }
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, "must be positive"))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid("batch_size", "must be at least 2"));
        }
        positive("lr_d", self.lr_d)?;
        positive("lr_g", self.lr_g)?;
        positive("adam_eps", self.adam_eps)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(name, "must lie in [0, 1)"));
            }
        }
        if self.n_dis == 0 {
            return Err(invalid("n_dis", "must be at least 1"));
        }
        if self.log_interval == 0 {
            return Err(invalid("log_interval", "must be at least 1"));
        }
        if self.eval_samples == 0 {
            return Err(invalid("eval_samples", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(invalid("ema_decay", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.leaky_slope) {
            return Err(invalid("leaky_slope", "must lie in [0, 1]"));
        }
        if self.z_dim == 0
            || self.g_hidden_width == 0
            || self.d_hidden_width == 0
            || self.d_hidden_layers == 0
            || self.embed_dim == 0
        {
            return Err(invalid(
                "network size",
                "widths and depths must be positive",
            ));
        }
        self.d2dce_params()?;
        Ok(())
    }

    pub fn d2dce_params(&self) -> Result<D2dceParams> {
        D2dceParams {
            tau: self.tau,
            m_p: self.m_p,
            m_n: self.m_n,
            lambda: self.lambda,
            mask_drop_p: self.mask_drop_p,
        }
        .validated()
    }
}
