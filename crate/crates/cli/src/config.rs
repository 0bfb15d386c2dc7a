//! Flat TOML experiment files and their translation into run configs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dlsim::aggregation::AggregationRule;
use dlsim::datasets::{Corpus, ShiftScenario, SplitSizes};
use dlsim::models::{ModelKind, OptimizerKind};
use dlsim::selection::SelectionPolicy;
use dlsim::similarity::SimilarityMetricKind;
use dlsim::simulator::{FinalModel, RunConfig, Seeds};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ConceptShift,
    LabelShift,
    CovariateShift,
    DomainShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Linear,
    Mlp,
}

/// One experiment: a scenario, the methods to compare, and every training
/// hyperparameter. Keys not listed here are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: String,

    pub scenario: ScenarioKind,
    pub cluster_sizes: Vec<usize>,
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    #[serde(default = "defaults::noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "defaults::theta_low")]
    pub theta_low: f64,
    #[serde(default = "defaults::theta_high")]
    pub theta_high: f64,
    #[serde(default = "defaults::corpus")]
    pub corpus: Corpus,
    #[serde(default)]
    pub angles: Vec<f64>,
    #[serde(default = "defaults::labels_per_cluster")]
    pub labels_per_cluster: usize,
    #[serde(default = "defaults::data_dir")]
    pub data_dir: PathBuf,

    pub train_size: usize,
    pub validation_size: usize,
    #[serde(default = "defaults::test_size")]
    pub test_size: usize,

    pub model: ModelName,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,

    pub methods: Vec<String>,
    #[serde(default = "defaults::rules")]
    pub rules: Vec<AggregationRule>,
    /// Overrides every per-method tau below when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "defaults::tau")]
    pub tau_inv_loss_fedavg: f64,
    #[serde(default = "defaults::tau")]
    pub tau_cos_grad_fedavg: f64,
    #[serde(default = "defaults::tau")]
    pub tau_cos_weight_fedavg: f64,
    #[serde(default = "defaults::tau")]
    pub tau_inv_l2_fedavg: f64,
    #[serde(default = "defaults::tau")]
    pub tau_inv_loss_fedsim: f64,
    #[serde(default = "defaults::tau")]
    pub tau_cos_grad_fedsim: f64,
    #[serde(default = "defaults::tau")]
    pub tau_cos_weight_fedsim: f64,
    #[serde(default = "defaults::tau")]
    pub tau_inv_l2_fedsim: f64,

    #[serde(default = "defaults::optimizer")]
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Learning rate of FedSim methods; defaults to `learning_rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate_fedsim: Option<f64>,
    /// Learning rate of the no-communication baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_learning_rate: Option<f64>,
    #[serde(default = "defaults::one")]
    pub local_epochs: usize,
    pub rounds: usize,
    pub num_neighbors: usize,
    /// 0 disables early stopping.
    #[serde(default)]
    pub early_stopping_rounds: usize,
    /// 0 trains full-batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default = "defaults::final_model")]
    pub final_model: FinalModel,

    #[serde(default = "defaults::seed_data")]
    pub seed_data: u64,
    #[serde(default = "defaults::seed_init")]
    pub seed_init: u64,
    #[serde(default = "defaults::seed_sampling")]
    pub seed_sampling: u64,
    #[serde(default = "defaults::yes")]
    pub shared_init: bool,
    #[serde(default = "defaults::one")]
    pub num_runs: usize,
}

mod defaults {
    use super::*;

    pub fn dim() -> usize {
        10
    }
    pub fn noise_sigma() -> f64 {
        3.0
    }
    pub fn theta_low() -> f64 {
        -1.0
    }
    pub fn theta_high() -> f64 {
        1.0
    }
    pub fn corpus() -> Corpus {
        Corpus::FashionMnist
    }
    pub fn labels_per_cluster() -> usize {
        2
    }
    pub fn data_dir() -> PathBuf {
        PathBuf::from("data")
    }
    pub fn test_size() -> usize {
        1000
    }
    pub fn hidden() -> usize {
        128
    }
    pub fn rules() -> Vec<AggregationRule> {
        vec![AggregationRule::FedAvg, AggregationRule::FedSim]
    }
    pub fn tau() -> f64 {
        1.0
    }
    pub fn optimizer() -> OptimizerKind {
        OptimizerKind::Adam
    }
    pub fn one() -> usize {
        1
    }
    pub fn final_model() -> FinalModel {
        FinalModel::Last
    }
    pub fn seed_data() -> u64 {
        Seeds::default().data
    }
    pub fn seed_init() -> u64 {
        Seeds::default().init
    }
    pub fn seed_sampling() -> u64 {
        Seeds::default().sampling
    }
    pub fn yes() -> bool {
        true
    }
}

/// A method as listed in `methods`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Random,
    Oracle,
    Local,
    Similarity(SimilarityMetricKind),
}

impl Method {
    pub fn parse(name: &str) -> Result<Method, CliError> {
        match name {
            "random" => Ok(Method::Random),
            "oracle" => Ok(Method::Oracle),
            "local" => Ok(Method::Local),
            other => other
                .parse::<SimilarityMetricKind>()
                .map(Method::Similarity)
                .map_err(|_| CliError::invalid("methods", format!("unknown method `{other}`"))),
        }
    }
}

fn toml_error(e: toml::de::Error) -> CliError {
    let msg = e.message().to_string();
    // serde reports unknown keys as "unknown field `name`, expected ..."
    let key = msg
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string);
    match key {
        Some(k) => CliError::invalid(&k, format!("unknown key `{k}`")),
        None => CliError::Invalid(format!("invalid config: {}", msg.trim())),
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ConfigFile = toml::from_str(text).map_err(toml_error)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Values are read as TOML (numbers,
    /// booleans, arrays) and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("config round-trips");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Invalid(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = toml::from_str::<BTreeMap<String, toml::Value>>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let text = toml::to_string(&table).expect("table serializes");
        Self::parse(&text)
    }

    pub fn with_seed_offset(&self, offset: u64) -> Self {
        let mut c = self.clone();
        c.seed_data = c.seed_data.wrapping_add(offset);
        c.seed_init = c.seed_init.wrapping_add(offset);
        c.seed_sampling = c.seed_sampling.wrapping_add(offset);
        c
    }

    fn check(&self) -> Result<(), CliError> {
        if self.experiment.is_empty()
            || !self
                .experiment
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(CliError::invalid(
                "experiment",
                "experiment must be a non-empty name of letters, digits, '_' or '-'",
            ));
        }
        if self.methods.is_empty() {
            return Err(CliError::invalid("methods", "at least one method is required"));
        }
        for m in &self.methods {
            Method::parse(m)?;
        }
        if self.rules.is_empty() {
            return Err(CliError::invalid("rules", "at least one rule is required"));
        }
        for (key, v) in [
            ("tau_inv_loss_fedavg", self.tau_inv_loss_fedavg),
            ("tau_cos_grad_fedavg", self.tau_cos_grad_fedavg),
            ("tau_cos_weight_fedavg", self.tau_cos_weight_fedavg),
            ("tau_inv_l2_fedavg", self.tau_inv_l2_fedavg),
            ("tau_inv_loss_fedsim", self.tau_inv_loss_fedsim),
            ("tau_cos_grad_fedsim", self.tau_cos_grad_fedsim),
            ("tau_cos_weight_fedsim", self.tau_cos_weight_fedsim),
            ("tau_inv_l2_fedsim", self.tau_inv_l2_fedsim),
            ("tau", self.tau.unwrap_or(0.0)),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::invalid(key, format!("{key} must be finite and >= 0")));
            }
        }
        // build every run config once so structural errors surface at load
        for (method, rule) in self.plan()? {
            self.run_config(method, rule)?;
        }
        Ok(())
    }

    /// (method, rule) pairs to run: baselines once with FedAvg, similarity
    /// methods once per listed rule.
    pub fn plan(&self) -> Result<Vec<(Method, AggregationRule)>, CliError> {
        let mut out = Vec::new();
        for name in &self.methods {
            match Method::parse(name)? {
                m @ Method::Similarity(_) => out.extend(self.rules.iter().map(|&r| (m, r))),
                m => out.push((m, AggregationRule::FedAvg)),
            }
        }
        Ok(out)
    }

    pub fn tau_for(&self, metric: SimilarityMetricKind, rule: AggregationRule) -> f64 {
        if let Some(t) = self.tau {
            return t;
        }
        use AggregationRule::*;
        use SimilarityMetricKind::*;
        match (metric, rule) {
            (InvLoss, FedAvg) => self.tau_inv_loss_fedavg,
            (CosGrad, FedAvg) => self.tau_cos_grad_fedavg,
            (CosWeight, FedAvg) => self.tau_cos_weight_fedavg,
            (InvL2, FedAvg) => self.tau_inv_l2_fedavg,
            (InvLoss, FedSim) => self.tau_inv_loss_fedsim,
            (CosGrad, FedSim) => self.tau_cos_grad_fedsim,
            (CosWeight, FedSim) => self.tau_cos_weight_fedsim,
            (InvL2, FedSim) => self.tau_inv_l2_fedsim,
        }
    }

    pub fn scenario(&self) -> ShiftScenario {
        let sizes = self.cluster_sizes.clone();
        match self.scenario {
            ScenarioKind::ConceptShift => ShiftScenario::ConceptShiftSynthetic {
                cluster_sizes: sizes,
                dim: self.dim,
                noise_sigma: self.noise_sigma,
                theta_range: (self.theta_low, self.theta_high),
            },
            ScenarioKind::LabelShift => ShiftScenario::LabelShift {
                corpus: self.corpus,
                cluster_sizes: sizes,
                label_groups: None,
                labels_per_cluster: self.labels_per_cluster,
                data_dir: self.data_dir.clone(),
            },
            ScenarioKind::CovariateShift => ShiftScenario::CovariateShiftRotation {
                corpus: self.corpus,
                cluster_sizes: sizes,
                angles: self.angles.clone(),
                data_dir: self.data_dir.clone(),
            },
            ScenarioKind::DomainShift => ShiftScenario::DomainShiftMix {
                cluster_sizes: sizes,
                data_dir: self.data_dir.clone(),
            },
        }
    }

    pub fn run_config(&self, method: Method, rule: AggregationRule) -> Result<RunConfig, CliError> {
        let scenario = self.scenario();
        let (dim, classes) = scenario.shape();
        let model = match self.model {
            ModelName::Linear => ModelKind::LinearRegressor { dim },
            ModelName::Mlp => ModelKind::MlpClassifier {
                input: dim,
                hidden: self.hidden,
                classes: classes.unwrap_or(0),
            },
        };
        let policy = match method {
            Method::Random => SelectionPolicy::Random,
            Method::Oracle => SelectionPolicy::Oracle,
            Method::Local => SelectionPolicy::LocalOnly,
            Method::Similarity(metric) => SelectionPolicy::SimilaritySoftmax {
                metric,
                tau: self.tau_for(metric, rule),
            },
        };
        let learning_rate = match (method, rule) {
            (Method::Local, _) => self.local_learning_rate.unwrap_or(self.learning_rate),
            (_, AggregationRule::FedSim) => self.learning_rate_fedsim.unwrap_or(self.learning_rate),
            _ => self.learning_rate,
        };
        let cfg = RunConfig {
            scenario,
            split: SplitSizes {
                train: self.train_size,
                validation: self.validation_size,
                test: self.test_size,
            },
            model,
            policy,
            rule,
            optimizer: self.optimizer,
            learning_rate,
            local_epochs: self.local_epochs,
            rounds: self.rounds,
            num_neighbors: self.num_neighbors,
            early_stopping_rounds: (self.early_stopping_rounds > 0).then_some(self.early_stopping_rounds),
            batch_size: (self.batch_size > 0).then_some(self.batch_size),
            seeds: Seeds {
                data: self.seed_data,
                init: self.seed_init,
                sampling: self.seed_sampling,
            },
            shared_init: self.shared_init,
            num_runs: self.num_runs,
            final_model: self.final_model,
        };
        cfg.validate()
            .map_err(|e| CliError::Invalid(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// Fields that define the data-generating process; experiments are
    /// comparable only if these agree.
    pub fn scenario_fingerprint(&self) -> String {
        format!(
            "{:?}|{:?}|{}|{}|{}|{}|{:?}|{:?}|{}|{}|{}|{}",
            self.scenario,
            self.cluster_sizes,
            self.dim,
            self.noise_sigma,
            self.theta_low,
            self.theta_high,
            self.corpus,
            self.angles,
            self.labels_per_cluster,
            self.train_size,
            self.validation_size,
            self.test_size,
        )
    }
}
