//! Loading or synthesising the weights, features and transcripts a command needs.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context};
use dcstream::encoder::{init_weights, EncoderWeights};
use dcstream::features::{load_features, synthetic_features, Utterance};

use crate::config::RunConfig;

/// `N,T0,D0,seed` for the synthetic feature generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub frames: usize,
    pub dims: usize,
    pub seed: u64,
}

impl std::str::FromStr for SyntheticSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [n, t, d, seed] = parts[..] else {
            return Err(format!("expected N,T0,D0,seed, got '{s}'"));
        };
        let num = |x: &str| x.parse::<u64>().map_err(|_| format!("'{x}' is not a non-negative integer"));
        Ok(Self {
            count: num(n)? as usize,
            frames: num(t)? as usize,
            dims: num(d)? as usize,
            seed: num(seed)?,
        })
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Vec<Utterance> {
        synthetic_features(self.count, self.frames, self.dims, self.seed)
    }
}

/// Weights from the configured file, or freshly initialised from the seed.
pub fn weights_for(cfg: &RunConfig) -> anyhow::Result<EncoderWeights> {
    let weights = match &cfg.weights {
        Some(path) => EncoderWeights::load(path)
            .with_context(|| format!("loading weights {}", path.display()))?,
        None => init_weights(&cfg.encoder(), cfg.seed)?,
    };
    weights.validate(&cfg.encoder())?;
    Ok(weights)
}

/// Features from `--synthetic`, else the configured DCFT file.
pub fn features_for(cfg: &RunConfig, synthetic: Option<SyntheticSpec>) -> anyhow::Result<Vec<Utterance>> {
    let utts = match (synthetic, &cfg.features) {
        (Some(spec), _) => spec.generate(),
        (None, Some(path)) => {
            load_features(path).with_context(|| format!("loading features {}", path.display()))?
        }
        (None, None) => bail!("no input features: pass --features <file> or --synthetic N,T0,D0,seed"),
    };
    for u in &utts {
        if u.features.rows() > 0 && u.features.cols() != cfg.input_dim {
            bail!(
                "utterance '{}' has {}-dim features, config expects {}",
                u.id,
                u.features.cols(),
                cfg.input_dim
            );
        }
    }
    Ok(utts)
}

/// Reference transcripts, one `<id>\t<space-separated tokens>` per line.
pub fn load_transcripts(path: &Path) -> anyhow::Result<HashMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading transcripts {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, tokens)) = line.split_once('\t') else {
            bail!("{}:{}: expected '<id>\\t<tokens>'", path.display(), i + 1);
        };
        out.insert(id.to_owned(), tokens.split_whitespace().map(str::to_owned).collect());
    }
    Ok(out)
}
