//! Run configuration, dotted overrides and stage seeds.

use std::fs;
use std::path::Path;

use ehrcnn::baselines::SuiteConfig;
use ehrcnn::cohort::CohortSpec;
use ehrcnn::embedding::CbowConfig;
use ehrcnn::nn::{ModelConfig, TrainConfig};
use ehrcnn::rng::SeededRng;
use ehrcnn::synth::SynthConfig;
use ehrcnn::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Stream offsets passed to [`SeededRng::derive_seed`] with the global seed.
pub mod stage {
    pub const SYNTH: u64 = 1;
    pub const CBOW: u64 = 2;
    pub const COHORT: u64 = 3;
    pub const MODEL: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const SUITE_RAND: u64 = 6;
    pub const SUITE_FOREST: u64 = 7;
}

/// Every parameter of a pipeline run. File paths are command-line flags and
/// are not part of it, so the fingerprint does not depend on where files live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    pub seed: u64,
    pub synth: SynthConfig,
    pub cbow: CbowConfig,
    pub cohort: CohortSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub suite: SuiteConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: "synthetic".into(),
            seed: 0,
            synth: SynthConfig::default(),
            cbow: CbowConfig::default(),
            cohort: CohortSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            suite: SuiteConfig::default(),
        }
    }
}

impl RunConfig {
    /// Overwrites every stage seed with one derived from `self.seed`.
    pub fn derive_stage_seeds(&mut self) {
        let s = |offset| SeededRng::derive_seed(self.seed, offset);
        let (synth, cbow, cohort, model, train, rand, forest) = (
            s(stage::SYNTH),
            s(stage::CBOW),
            s(stage::COHORT),
            s(stage::MODEL),
            s(stage::TRAIN),
            s(stage::SUITE_RAND),
            s(stage::SUITE_FOREST),
        );
        self.synth.seed = synth;
        self.cbow.seed = cbow;
        self.cohort.seed = cohort;
        self.model.seed = model;
        self.train.seed = train;
        self.suite.rand_seed = rand;
        self.suite.forest.seed = forest;
    }

    /// Lowercase hex SHA-256 of the canonical JSON form (object keys sorted).
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolves a run configuration in this order: defaults, the config
    /// file, `seed`, derived stage seeds, then dotted overrides.
    pub fn resolve(file: Option<&Path>, seed: Option<u64>, overrides: &[Override]) -> Result<Self> {
        let mut config = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display()))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.derive_stage_seeds();
        if overrides.is_empty() {
            return Ok(config);
        }
        let mut value = serde_json::to_value(&config).expect("config serializes");
        for o in overrides {
            o.apply(&mut value)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }
}

/// A `--a.b.c=value` flag. The value is read as JSON when it parses and as
/// a plain string otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl Override {
    pub fn new(key: &str, raw: &str) -> Result<Self> {
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Config(format!("malformed override key {key:?}")));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Override { path, value })
    }

    fn apply(&self, root: &mut Value) -> Result<()> {
        let mut node = root;
        for key in &self.path {
            if node.is_null() {
                *node = Value::Object(Default::default());
            }
            let Value::Object(map) = node else {
                return Err(Error::Config(format!("cannot override inside non-object at {:?}", self.path.join("."))));
            };
            node = map.entry(key.clone()).or_insert(Value::Null);
        }
        *node = self.value.clone();
        Ok(())
    }
}

/// Splits dotted override flags out of `args`. Both `--a.b=v` and `--a.b v`
/// are accepted; flags without a dot in their name are left for clap.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let raw = match inline {
            Some(v) => v,
            None => iter.next().ok_or_else(|| Error::Config(format!("override --{key} needs a value")))?,
        };
        overrides.push(Override::new(key, &raw)?);
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn overrides_are_extracted() {
        let (rest, ov) =
            extract_overrides(args(&["ehrcnn", "--out", "x", "embed", "--cbow.window=7", "--model.input_mode", "rand"]))
                .unwrap();
        assert_eq!(rest, args(&["ehrcnn", "--out", "x", "embed"]));
        assert_eq!(ov[0].path, ["cbow", "window"]);
        assert_eq!(ov[0].value, Value::from(7));
        assert_eq!(ov[1].value, Value::from("rand"));
        assert!(extract_overrides(args(&["ehrcnn", "--cbow.window"])).is_err());
    }

    #[test]
    fn overrides_win_over_derived_seeds() {
        let ov = [Override::new("cbow.seed", "11").unwrap(), Override::new("cbow.window", "3").unwrap()];
        let c = RunConfig::resolve(None, Some(5), &ov).unwrap();
        assert_eq!(c.cbow.seed, 11);
        assert_eq!(c.cbow.window, 3);
        assert_eq!(c.synth.seed, SeededRng::derive_seed(5, stage::SYNTH));
    }

    #[test]
    fn unknown_override_is_a_config_error() {
        let ov = [Override::new("cbow.windw", "3").unwrap()];
        assert_eq!(RunConfig::resolve(None, None, &ov).unwrap_err().kind(), ehrcnn::ErrorKind::Input);
    }

    #[test]
    fn optional_sections_can_be_set_and_cleared() {
        let set = [Override::new("synth.presence.concept", "2").unwrap(), Override::new("synth.presence.boost", "0.5").unwrap()];
        let c = RunConfig::resolve(None, None, &set).unwrap();
        assert_eq!(c.synth.presence.unwrap().concept, 2);
        let clear = [Override::new("synth.motif", "null").unwrap()];
        assert!(RunConfig::resolve(None, None, &clear).unwrap().synth.motif.is_none());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::resolve(None, Some(1), &[]).unwrap();
        let b = RunConfig::resolve(None, Some(1), &[]).unwrap();
        let c = RunConfig::resolve(None, Some(2), &[]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn stage_seeds_are_distinct() {
        let c = RunConfig::resolve(None, Some(9), &[]).unwrap();
        let seeds = [c.synth.seed, c.cbow.seed, c.cohort.seed, c.model.seed, c.train.seed, c.suite.rand_seed, c.suite.forest.seed];
        for i in 0..seeds.len() {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
