//! Pipeline configuration: `section.key = value` lines, `#` comments.
//!
//! Every key has a default; a config file and `--set` overrides replace
//! values, and unknown keys are rejected. RQ-VAE keys may be given per index
//! type as `rqvae.ceid.<key>` / `rqvae.seid.<key>`, falling back to
//! `rqvae.<key>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use multidex::collab::CollabConfig;
use multidex::rerank::{FusionMode, FusionParams};
use multidex::rqvae::RqVaeConfig;
use multidex::scorer::MarkovConfig;
use multidex::synthetic::SyntheticConfig;
use multidex::IndexType;

const DEFAULTS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    ("paths.interactions", ""),
    ("paths.semantic", ""),
    ("paths.output", "multidex-out"),
    ("data.synthetic", "false"),
    ("data.kcore", "5"),
    ("data.max_len", "20"),
    ("synthetic.users", "2000"),
    ("synthetic.items", "500"),
    ("synthetic.clusters", "25"),
    ("synthetic.min_len", "6"),
    ("synthetic.max_len", "14"),
    ("synthetic.p_successor", "0.6"),
    ("synthetic.p_same_cluster", "0.3"),
    ("synthetic.semantic_dim", "32"),
    ("synthetic.semantic_noise", "0.3"),
    ("collab.dim", "64"),
    ("collab.layers", "2"),
    ("collab.epochs", "40"),
    ("collab.learning_rate", "0.01"),
    ("collab.neg_samples", "1"),
    ("collab.batch_size", "1024"),
    ("collab.l2", "0.0001"),
    ("rqvae.latent_dim", "32"),
    ("rqvae.code_len", "3"),
    ("rqvae.codebook_size", "256"),
    ("rqvae.hidden", "256,128,64,48"),
    ("rqvae.beta", "0.25"),
    ("rqvae.epochs", "300"),
    ("rqvae.batch_size", "256"),
    ("rqvae.learning_rate", "0.001"),
    ("rqvae.weight_decay", "0.0001"),
    ("rqvae.kmeans_iters", "100"),
    ("rqvae.reseed_dead_codes", "true"),
    ("scorer.order", "8"),
    ("scorer.delta", "0.1"),
    ("scorer.lambda", "0.4"),
    ("retrieval.k", "20"),
    ("retrieval.beam_width", "20"),
    ("rerank.alpha", "0.8"),
    ("rerank.tau", "10"),
    ("rerank.mode", "full"),
    ("eval.k", "5,10"),
    ("analysis.k", "10"),
    ("templates.count", "10"),
];

const RQVAE_KEYS: &[&str] = &[
    "latent_dim",
    "code_len",
    "codebook_size",
    "hidden",
    "beta",
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "kmeans_iters",
    "reseed_dead_codes",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    values: BTreeMap<String, String>,
}

fn known_key(key: &str) -> bool {
    if DEFAULTS.iter().any(|(k, _)| *k == key) {
        return true;
    }
    let mut parts = key.splitn(3, '.');
    matches!(
        (parts.next(), parts.next(), parts.next()),
        (Some("rqvae"), Some("ceid" | "seid"), Some(k)) if RQVAE_KEYS.contains(&k)
    )
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `section.key = value`", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known_key(key) {
            bail!("unknown config key `{key}`");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{spec}` must look like section.key=value"))?;
        self.set(k.trim(), v.trim())
    }

    /// Every effective key and value, sorted.
    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| anyhow!("config `{key}`: cannot parse `{raw}`"))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| anyhow!("config `{key}`: cannot parse `{s}`")))
            .collect()
    }

    fn rqvae_get<T: FromStr>(&self, t: IndexType, key: &str) -> Result<T> {
        let specific = format!("rqvae.{}.{key}", t.as_str());
        if self.values.contains_key(&specific) {
            self.get(&specific)
        } else {
            self.get(&format!("rqvae.{key}"))
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("run.seed")
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("paths.output"))
    }

    pub fn synthetic(&self) -> Result<bool> {
        self.get("data.synthetic")
    }

    pub fn interactions_path(&self) -> Option<PathBuf> {
        Some(self.raw("paths.interactions")).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    pub fn semantic_path(&self) -> Option<PathBuf> {
        Some(self.raw("paths.semantic")).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    pub fn kcore(&self) -> Result<usize> {
        self.get("data.kcore")
    }

    pub fn max_len(&self) -> Result<usize> {
        self.get("data.max_len")
    }

    pub fn synthetic_config(&self) -> Result<SyntheticConfig> {
        Ok(SyntheticConfig {
            users: self.get("synthetic.users")?,
            items: self.get("synthetic.items")?,
            clusters: self.get("synthetic.clusters")?,
            min_len: self.get("synthetic.min_len")?,
            max_len: self.get("synthetic.max_len")?,
            p_successor: self.get("synthetic.p_successor")?,
            p_same_cluster: self.get("synthetic.p_same_cluster")?,
            semantic_dim: self.get("synthetic.semantic_dim")?,
            semantic_noise: self.get("synthetic.semantic_noise")?,
            seed: self.seed()?,
        })
    }

    pub fn collab_config(&self) -> Result<CollabConfig> {
        Ok(CollabConfig {
            dim: self.get("collab.dim")?,
            layers: self.get("collab.layers")?,
            epochs: self.get("collab.epochs")?,
            learning_rate: self.get("collab.learning_rate")?,
            neg_samples_per_positive: self.get("collab.neg_samples")?,
            batch_size: self.get("collab.batch_size")?,
            l2: self.get("collab.l2")?,
            seed: self.seed()?,
        })
    }

    pub fn rqvae_config(&self, t: IndexType) -> Result<RqVaeConfig> {
        let offset = match t {
            IndexType::Ceid => 1,
            IndexType::Seid => 2,
        };
        let hidden_key = format!("rqvae.{}.hidden", t.as_str());
        let hidden = if self.values.contains_key(&hidden_key) {
            self.list(&hidden_key)?
        } else {
            self.list("rqvae.hidden")?
        };
        Ok(RqVaeConfig {
            latent_dim: self.rqvae_get(t, "latent_dim")?,
            code_len: self.rqvae_get(t, "code_len")?,
            codebook_size: self.rqvae_get(t, "codebook_size")?,
            hidden,
            beta: self.rqvae_get(t, "beta")?,
            epochs: self.rqvae_get(t, "epochs")?,
            batch_size: self.rqvae_get(t, "batch_size")?,
            learning_rate: self.rqvae_get(t, "learning_rate")?,
            weight_decay: self.rqvae_get(t, "weight_decay")?,
            kmeans_iters: self.rqvae_get(t, "kmeans_iters")?,
            reseed_dead_codes: self.rqvae_get(t, "reseed_dead_codes")?,
            seed: self.seed()?.wrapping_add(offset),
        })
    }

    pub fn scorer_config(&self) -> Result<MarkovConfig> {
        Ok(MarkovConfig {
            order: self.get("scorer.order")?,
            delta: self.get("scorer.delta")?,
            lambda: self.get("scorer.lambda")?,
            seed: self.seed()?.wrapping_add(3),
        })
    }

    pub fn retrieval_k(&self) -> Result<usize> {
        self.get("retrieval.k")
    }

    pub fn beam_width(&self) -> Result<usize> {
        self.get("retrieval.beam_width")
    }

    pub fn mode(&self) -> Result<FusionMode> {
        Ok(self.raw("rerank.mode").parse()?)
    }

    pub fn fusion_params(&self, mode: FusionMode) -> Result<FusionParams> {
        let k = self.retrieval_k()?;
        Ok(FusionParams {
            alpha: self.get("rerank.alpha")?,
            tau: self.get("rerank.tau")?,
            k_in: k,
            k_out: k,
            mode,
        })
    }

    pub fn eval_ks(&self) -> Result<Vec<usize>> {
        self.list("eval.k")
    }

    pub fn analysis_k(&self) -> Result<usize> {
        self.get("analysis.k")
    }

    pub fn template_count(&self) -> Result<usize> {
        self.get("templates.count")
    }

    /// Checks everything parses and hangs together, before any work runs.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.synthetic()? {
            self.synthetic_config()?.validate()?;
        } else {
            for (key, path) in [("paths.interactions", self.interactions_path()), ("paths.semantic", self.semantic_path())] {
                match path {
                    Some(p) if p.exists() => {}
                    Some(p) => bail!("config `{key}`: {} does not exist", p.display()),
                    None => bail!("config `{key}` is required unless data.synthetic = true"),
                }
            }
        }
        if self.kcore()? == 0 || self.max_len()? == 0 {
            bail!("data.kcore and data.max_len must be at least 1");
        }
        self.collab_config()?.validate()?;
        for t in IndexType::ALL {
            self.rqvae_config(t)?.validate()?;
        }
        self.scorer_config()?.validate()?;
        let k = self.retrieval_k()?;
        if k == 0 || self.beam_width()? < k {
            bail!("retrieval.beam_width must be >= retrieval.k >= 1");
        }
        let ks = self.eval_ks()?;
        if ks.is_empty() || ks.iter().any(|&r| r == 0 || r > k) {
            bail!("eval.k values must lie in 1..=retrieval.k ({k})");
        }
        let ak = self.analysis_k()?;
        if ak == 0 || ak > k {
            bail!("analysis.k must lie in 1..=retrieval.k ({k})");
        }
        let t = self.template_count()?;
        if !(2..=multidex::vocab::NUM_TEMPLATES).contains(&t) {
            bail!("templates.count must lie in 2..={}", multidex::vocab::NUM_TEMPLATES);
        }
        self.fusion_params(self.mode()?)?.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_overrides() {
        let mut cfg = PipelineConfig::parse("# comment\nrqvae.codebook_size = 32\n\nrun.seed=7 # trailing\n", "t").unwrap();
        cfg.apply_override("rqvae.seid.codebook_size=16").unwrap();
        assert_eq!(cfg.seed().unwrap(), 7);
        assert_eq!(cfg.rqvae_config(IndexType::Ceid).unwrap().codebook_size, 32);
        assert_eq!(cfg.rqvae_config(IndexType::Seid).unwrap().codebook_size, 16);
        assert_eq!(cfg.snapshot()["rqvae.seid.codebook_size"], "16");
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(PipelineConfig::parse("rqvae.codebooksize = 3", "t").is_err());
        assert!(PipelineConfig::parse("rqvae.ceid.order = 3", "t").is_err());
        assert!(PipelineConfig::parse("no equals sign", "t").is_err());
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply_override("scorer.order").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_err(), "real-data mode needs input paths");
        cfg.set("data.synthetic", "true").unwrap();
        cfg.validate().unwrap();
        cfg.set("eval.k", "5,30").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("eval.k", "5,10").unwrap();
        cfg.set("rerank.mode", "both").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("rerank.mode", "conf-only").unwrap();
        cfg.set("retrieval.beam_width", "10").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.retrieval_k().unwrap(), 20);
        assert_eq!(cfg.template_count().unwrap(), 10);
        assert_eq!(cfg.max_len().unwrap(), 20);
        let p = cfg.fusion_params(FusionMode::Full).unwrap();
        assert_eq!((p.alpha, p.tau), (0.8, 10.0));
    }
}
