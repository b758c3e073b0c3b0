//! TOML run configuration. Every key is optional; unknown keys are errors.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::Architecture;
use crate::sampler::{SamplerConfig, Thinning};
use crate::schedule::{GlobalTimeDist, Scheduler};
use crate::seq::FrameShape;
use crate::trainer::{ContextMode, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub time_dist: TimeDistSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub model: ModelSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub optimizer: Option<String>,
    pub seed: Option<u64>,
    pub n_start: Option<usize>,
    pub context: Option<String>,
    pub context_prob: Option<f64>,
    pub cond_dropout_prob: Option<f64>,
    pub grad_clip: Option<f64>,
    pub log_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub family: Option<String>,
    pub power_p: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeDistSection {
    pub kind: Option<String>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub w_ins: Option<f64>,
    pub elbo_weighted: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub h: Option<f64>,
    pub n_start: Option<usize>,
    pub thinning: Option<String>,
    pub exact_integral: Option<bool>,
    pub w_s: Option<f64>,
    pub gamma: Option<f64>,
    pub max_len: Option<usize>,
    pub max_inserts_per_slot_step: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub width: Option<usize>,
    pub blocks: Option<usize>,
    pub time_dim: Option<usize>,
    pub time_hidden: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub token_dim: Option<usize>,
    pub rate_hidden: Option<usize>,
}

impl std::str::FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}: ")
                })
                .unwrap_or_default();
            Error::Config(format!("{at}{}", e.message()))
        })
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("unsupported value {value:?} for {key}"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn scheduler(&self) -> Result<Scheduler> {
        match self.schedule.family.as_deref().unwrap_or("linear") {
            "linear" => Ok(Scheduler::Linear),
            "power" => Scheduler::power(self.schedule.power_p.unwrap_or(1.0)),
            other => Err(bad("schedule.family", other)),
        }
    }

    pub fn time_dist(&self) -> Result<GlobalTimeDist> {
        let mu = self.time_dist.mu.unwrap_or(0.0);
        let sigma = self.time_dist.sigma.unwrap_or(1.0);
        match self.time_dist.kind.as_deref().unwrap_or("lognorm") {
            "uniform" => Ok(GlobalTimeDist::Uniform),
            "logit_normal" => Ok(GlobalTimeDist::LogitNormal { mu, sigma }),
            "lognorm" => Ok(GlobalTimeDist::LogNormScaled { mu, sigma }),
            other => Err(bad("time_dist.kind", other)),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let t = &self.train;
        let cfg = TrainConfig {
            steps: t.steps.unwrap_or(d.steps),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            lr: t.lr.unwrap_or(d.lr),
            optimizer: match t.optimizer.as_deref().unwrap_or("adam") {
                "adam" => OptimizerKind::Adam,
                "sgd" => OptimizerKind::Sgd,
                other => return Err(bad("train.optimizer", other)),
            },
            seed: t.seed.unwrap_or(d.seed),
            n_start: t.n_start.unwrap_or(d.n_start),
            scheduler: self.scheduler()?,
            time_dist: self.time_dist()?,
            weights: LossWeights {
                w_ins: self.loss.w_ins.unwrap_or(1.0),
                elbo_weighted: self.loss.elbo_weighted.unwrap_or(false),
            },
            context: match t.context.as_deref().unwrap_or("none") {
                "none" => ContextMode::None,
                "first_frame" => ContextMode::FirstFrame,
                other => return Err(bad("train.context", other)),
            },
            context_prob: t.context_prob.unwrap_or(d.context_prob),
            cond_dropout_prob: t.cond_dropout_prob.unwrap_or(d.cond_dropout_prob),
            grad_clip: match t.grad_clip {
                Some(c) if c <= 0.0 => None,
                Some(c) => Some(c),
                None => d.grad_clip,
            },
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let d = SamplerConfig::default();
        let s = &self.sampler;
        let cfg = SamplerConfig {
            h: s.h.unwrap_or(d.h),
            n_start: s.n_start.unwrap_or(d.n_start),
            thinning: match s.thinning.as_deref().unwrap_or("bernoulli") {
                "bernoulli" => Thinning::Bernoulli,
                "poisson" => Thinning::Poisson,
                other => return Err(bad("sampler.thinning", other)),
            },
            exact_integral: s.exact_integral.unwrap_or(d.exact_integral),
            w_s: s.w_s.unwrap_or(d.w_s),
            gamma: s.gamma.unwrap_or(d.gamma),
            max_len: s.max_len.unwrap_or(d.max_len),
            max_inserts_per_slot_step: s.max_inserts_per_slot_step.unwrap_or(d.max_inserts_per_slot_step),
            seed: s.seed.unwrap_or(d.seed),
            scheduler: self.scheduler()?,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn architecture(&self, frame: FrameShape) -> Result<Architecture> {
        let d = Architecture::toy();
        let m = &self.model;
        let arch = Architecture {
            frame,
            width: m.width.unwrap_or(d.width),
            blocks: m.blocks.unwrap_or(d.blocks),
            time_dim: m.time_dim.unwrap_or(d.time_dim),
            time_hidden: m.time_hidden.unwrap_or(d.time_hidden),
            mlp_hidden: m.mlp_hidden.unwrap_or(d.mlp_hidden),
            token_dim: m.token_dim.unwrap_or(d.token_dim),
            rate_hidden: m.rate_hidden.unwrap_or(d.rate_hidden),
        };
        arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c: Config = "".parse().unwrap();
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
        assert_eq!(c.sampler_config().unwrap(), SamplerConfig::default());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = "[train]\nsteps = 5\nbogus = 1\n".parse::<Config>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn power_schedule_and_sections() {
        let c: Config = "[schedule]\nfamily = \"power\"\npower_p = 2.0\n[sampler]\nthinning = \"poisson\"\n"
            .parse()
            .unwrap();
        assert_eq!(c.scheduler().unwrap(), Scheduler::Power(2.0));
        assert_eq!(c.sampler_config().unwrap().thinning, Thinning::Poisson);
        let c: Config = "[schedule]\nfamily = \"cosine\"\n".parse().unwrap();
        assert!(c.scheduler().is_err());
    }
}
