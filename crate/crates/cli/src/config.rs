//! TOML run configuration with strict unknown-key rejection. Every section
//! and field is optional; defaults mirror the benchmark settings (M=4, N=40,
//! K_c=2, K_s=1, L=50 m, P_max=10, lr 5e-4, batch 64/128, 30 epochs, clip
//! 1.0, rho_c/rho_s 0.8/0.2, adapters r=32 alpha=16 dropout 0.05).

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use swan_isac::data::{ConfigSnapshot, DataConfig, Region};
use swan_isac::geometry::GeometryConfig;
use swan_isac::model::{ArchConfig, Variant};
use swan_isac::physics::{ChannelConfig, PowerConfig};
use swan_isac::sensing::{EtaDim, SensingConfig};
use swan_isac::train::{LossWeights, TrainConfig};

fn default_m() -> usize {
    4
}
fn default_n() -> usize {
    40
}
fn default_l() -> f64 {
    50.0
}
fn default_d_min() -> f64 {
    0.0625
}
fn default_bs_z() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub m: usize,
    pub n: usize,
    pub l: f64,
    pub d_min: f64,
    pub bs_x: f64,
    pub bs_z: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            m: default_m(),
            n: default_n(),
            l: default_l(),
            d_min: default_d_min(),
            bs_x: 0.0,
            bs_z: default_bs_z(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub alpha: f64,
    pub lambda: f64,
    pub sigma_c2: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 0.125,
            sigma_c2: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingSection {
    pub beta_re: f64,
    pub beta_im: f64,
    pub sigma_r2: f64,
    /// "xy" or "xyz".
    pub eta_dim: String,
    pub eps_crlb: f64,
    pub pinv_tol: f64,
}

impl Default for SensingSection {
    fn default() -> Self {
        Self {
            beta_re: 1.0,
            beta_im: 0.0,
            sigma_r2: 1.0,
            eta_dim: "xy".into(),
            eps_crlb: 1e-2,
            pinv_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSection {
    pub rho_c: f64,
    pub rho_s: f64,
    pub p_max: f64,
}

impl Default for PowerSection {
    fn default() -> Self {
        Self {
            rho_c: 0.8,
            rho_s: 0.2,
            p_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSection {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

impl Default for RegionSection {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 20.0,
            y_min: 0.0,
            y_max: 50.0,
            z: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub num_samples: usize,
    pub k_c: usize,
    pub k_s: usize,
    pub seed: u64,
    pub split: [f64; 3],
    pub oracle_rounds: usize,
    pub region: RegionSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            num_samples: 3000,
            k_c: 2,
            k_s: 1,
            seed: 7,
            split: [0.70, 0.15, 0.15],
            oracle_rounds: 64,
            region: RegionSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub graph_layers: usize,
    pub d_g: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    /// full | transformer_no_graph | shared_head | mlp
    pub variant: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            layers: 4,
            heads: 4,
            graph_layers: 2,
            d_g: 64,
            lora_rank: 32,
            lora_alpha: 16.0,
            lora_dropout: 0.05,
            variant: "full".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub eval_batch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub warm_epochs: usize,
    pub w_dep: f64,
    pub w_rate: f64,
    pub w_crlb: f64,
    pub eps: f64,
    pub w_spacing: f64,
    pub w_range: f64,
    pub w_coverage: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch: 64,
            eval_batch: 128,
            epochs: 30,
            clip: 1.0,
            warm_epochs: 2,
            w_dep: 10.0,
            w_rate: 1.0,
            w_crlb: 0.2,
            eps: 1e-12,
            w_spacing: 1.0,
            w_range: 1.0,
            w_coverage: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub channel: ChannelSection,
    pub sensing: SensingSection,
    pub power: PowerSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validate every field against its module's preconditions before any
    /// work starts.
    pub fn validate(&self) -> Result<(), String> {
        let err = |field: &str, e: String| format!("config field {field}: {e}");
        self.geometry()
            .validate()
            .map_err(|e| err("geometry", e.to_string()))?;
        self.channel()
            .validate()
            .map_err(|e| err("channel", e.to_string()))?;
        self.power()
            .validate()
            .map_err(|e| err("power", e.to_string()))?;
        self.sensing()
            .map_err(|e| err("sensing.eta_dim", e))?
            .validate()
            .map_err(|e| err("sensing", e.to_string()))?;
        self.data_config()
            .validate()
            .map_err(|e| err("data", e.to_string()))?;
        self.arch()
            .map_err(|e| err("model.variant", e))?
            .validate()
            .map_err(|e| err("model", e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| err("train", e.to_string()))?;
        self.loss_weights()
            .validate()
            .map_err(|e| err("train weights", e.to_string()))?;
        Ok(())
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            segments: self.geometry.m,
            antennas: self.geometry.n,
            length: self.geometry.l,
            d_min: self.geometry.d_min,
            bs_x: self.geometry.bs_x,
            bs_z: self.geometry.bs_z,
        }
    }

    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig {
            alpha: self.channel.alpha,
            lambda: self.channel.lambda,
            sigma_c2: self.channel.sigma_c2,
        }
    }

    pub fn power(&self) -> PowerConfig {
        PowerConfig {
            rho_c: self.power.rho_c,
            rho_s: self.power.rho_s,
            p_max: self.power.p_max,
        }
    }

    pub fn sensing(&self) -> Result<SensingConfig, String> {
        let eta = match self.sensing.eta_dim.as_str() {
            "xy" => EtaDim::Xy,
            "xyz" => EtaDim::Xyz,
            other => return Err(format!("unknown eta_dim '{other}' (use xy or xyz)")),
        };
        Ok(SensingConfig {
            beta: Complex64::new(self.sensing.beta_re, self.sensing.beta_im),
            sigma_r2: self.sensing.sigma_r2,
            eta,
            eps_crlb: self.sensing.eps_crlb,
            pinv_tol: self.sensing.pinv_tol,
        })
    }

    pub fn region(&self) -> Region {
        Region {
            x_min: self.data.region.x_min,
            x_max: self.data.region.x_max,
            y_min: self.data.region.y_min,
            y_max: self.data.region.y_max,
            z: self.data.region.z,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            num_samples: self.data.num_samples,
            k_c: self.data.k_c,
            k_s: self.data.k_s,
            region: self.region(),
            seed: self.data.seed,
            split: self.data.split,
            oracle_rounds: self.data.oracle_rounds,
        }
    }

    pub fn snapshot(&self) -> Result<ConfigSnapshot, String> {
        Ok(ConfigSnapshot {
            geometry: self.geometry(),
            channel: self.channel(),
            power: self.power(),
            sensing: self.sensing()?,
            region: self.region(),
            k_c: self.data.k_c,
            k_s: self.data.k_s,
        })
    }

    pub fn arch(&self) -> Result<ArchConfig, String> {
        Ok(ArchConfig {
            hidden_dim: self.model.hidden_dim,
            layers: self.model.layers,
            heads: self.model.heads,
            graph_layers: self.model.graph_layers,
            graph_dim: self.model.d_g,
            lora_rank: self.model.lora_rank,
            lora_alpha: self.model.lora_alpha,
            lora_dropout: self.model.lora_dropout,
            variant: Variant::parse(&self.model.variant).map_err(|e| e.to_string())?,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch,
            eval_batch: self.train.eval_batch,
            epochs: self.train.epochs,
            clip_norm: self.train.clip,
            seed: self.data.seed,
            warm_epochs: self.train.warm_epochs,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            w_dep: self.train.w_dep,
            w_rate: self.train.w_rate,
            w_crlb: self.train.w_crlb,
            eps_crlb: self.sensing.eps_crlb,
            eps: self.train.eps,
            w_spacing: self.train.w_spacing,
            w_range: self.train.w_range,
            w_coverage: self.train.w_coverage,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_benchmark_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.geometry.m, 4);
        assert_eq!(cfg.geometry.n, 40);
        assert_eq!(cfg.data.k_c, 2);
        assert_eq!(cfg.data.k_s, 1);
        assert_eq!(cfg.geometry.l, 50.0);
        assert_eq!(cfg.power.p_max, 10.0);
        assert_eq!(cfg.data.num_samples, 3000);
        assert_eq!(cfg.data.split, [0.70, 0.15, 0.15]);
        assert_eq!(cfg.train.lr, 5e-4);
        assert_eq!(cfg.train.batch, 64);
        assert_eq!(cfg.train.eval_batch, 128);
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.clip, 1.0);
        assert_eq!((cfg.power.rho_c, cfg.power.rho_s), (0.8, 0.2));
        assert_eq!(cfg.model.lora_rank, 32);
        assert_eq!(cfg.model.lora_alpha, 16.0);
        assert_eq!(cfg.model.lora_dropout, 0.05);
        assert_eq!(
            (cfg.train.w_rate, cfg.train.w_crlb, cfg.train.w_dep),
            (1.0, 0.2, 10.0)
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = "[geometry]\nm = 4\nwavelength = 0.125\n";
        let parsed: Result<RunConfig, _> = toml::from_str(bad);
        assert!(parsed.is_err());
        let bad_top = "[geomtry]\nm = 4\n";
        let parsed: Result<RunConfig, _> = toml::from_str(bad_top);
        assert!(parsed.is_err());
    }

    #[test]
    fn invalid_values_fail_validation_with_field_names() {
        let mut cfg = RunConfig::default();
        cfg.power.rho_c = 0.9;
        cfg.power.rho_s = 0.9;
        let err = cfg.validate().unwrap_err();
        assert!(err.contains("power"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.sensing.eta_dim = "abc".into();
        let err = cfg.validate().unwrap_err();
        assert!(err.contains("eta_dim"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.geometry.n, cfg.geometry.n);
        assert_eq!(back.train.epochs, cfg.train.epochs);
    }
}
