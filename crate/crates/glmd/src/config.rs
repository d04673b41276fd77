//! Sweep configuration: a JSON file, then command-line overrides.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use glmd_core::{FamilyKind, Method};

use crate::UsageError;

fn de_from_str<'de, D, T>(d: D) -> Result<T, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn de_vec_from_str<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    Vec::<String>::deserialize(d)?
        .iter()
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .collect()
}

fn ser_display<S: Serializer, T: Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn ser_vec_display<S: Serializer, T: Display>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "de_from_str", serialize_with = "ser_display")]
    pub model: FamilyKind,
    pub n: usize,
    pub p_list: Vec<usize>,
    pub k_list: Vec<usize>,
    pub t: usize,
    pub rho: f64,
    pub base_seed: u64,
    #[serde(deserialize_with = "de_vec_from_str", serialize_with = "ser_vec_display")]
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub max_iterations: usize,
    pub score_tolerance: f64,
    /// Exclude non-converged trials from the metrics.
    pub strict: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: FamilyKind::Probit,
            n: 1 << 14,
            p_list: vec![16],
            k_list: vec![4, 16, 64],
            t: 200,
            rho: 0.75,
            base_seed: 20_240_601,
            methods: vec![Method::Average, Method::Aee, Method::OneStep, Method::Global],
            output_dir: PathBuf::from("glmd-out"),
            max_iterations: 50,
            score_tolerance: 1e-8,
            strict: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: String| Err(UsageError(m));
        if self.t == 0 {
            return bad("t must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.p_list.is_empty() || self.p_list.contains(&0) {
            return bad("p_list must hold positive dimensions".into());
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("k_list must hold positive shard counts".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.max_iterations == 0 || !(self.score_tolerance > 0.0) {
            return bad("solver limits must be positive".into());
        }
        let max_p = *self.p_list.iter().max().expect("non-empty");
        let max_k = self.n / max_p;
        if let Some(k) = self.k_list.iter().find(|&&k| k > max_k) {
            return bad(format!(
                "K = {k} leaves shards smaller than p = {max_p} (n = {}, largest K is {max_k})",
                self.n
            ));
        }
        Ok(())
    }
}
