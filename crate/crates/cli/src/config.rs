//! Layered settings: config file, then `ELA_*` environment variables, then
//! command-line flags. A later layer replaces any value it sets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible chat-completions server.
    Http,
    /// Canned responses from a JSON script file.
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalKind {
    /// BM25 over a local title index.
    Local,
    Wikidata,
    Wikipedia,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub api_key_env_var: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub max_retries: Option<u32>,
    pub supports_repetition_penalty: Option<bool>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub repetition_penalty: Option<f64>,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub k: Option<usize>,
    pub max_mentions: Option<usize>,
    pub fewshot: Option<bool>,
    pub retrieval_template: Option<PathBuf>,
    pub reader_template: Option<PathBuf>,
    pub answer_template: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub backend: Option<RetrievalKind>,
    pub index: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelismSection {
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub backend: BackendSection,
    pub agent: AgentSection,
    pub retrieval: RetrievalSection,
    pub parallelism: ParallelismSection,
}

macro_rules! overlay {
    ($dst:expr, $src:expr; $($field:ident),+ $(,)?) => {
        $(if $src.$field.is_some() { $dst.$field = $src.$field; })+
    };
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Values set in `top` replace those here.
    pub fn overlay(&mut self, top: CliConfig) {
        let (b, t) = (&mut self.backend, top.backend);
        overlay!(b, t; kind, script, endpoint_url, model_name, api_key_env_var, timeout_secs, max_in_flight,
                 max_retries, supports_repetition_penalty, temperature, top_p, repetition_penalty, max_tokens);
        let (a, t) = (&mut self.agent, top.agent);
        overlay!(a, t; k, max_mentions, fewshot, retrieval_template, reader_template, answer_template);
        let (r, t) = (&mut self.retrieval, top.retrieval);
        overlay!(r, t; backend, index, corpus, cache_dir);
        let (p, t) = (&mut self.parallelism, top.parallelism);
        overlay!(p, t; workers);
    }

    /// Reads the `ELA_*` variables through `var`.
    pub fn from_env(var: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn parsed<T: std::str::FromStr>(var: &impl Fn(&str) -> Option<String>, name: &str) -> Result<Option<T>>
        where
            T::Err: std::fmt::Display,
        {
            match var(name) {
                None => Ok(None),
                Some(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|e| anyhow::anyhow!("environment variable {name}={v:?}: {e}")),
            }
        }
        fn choice<T: ValueEnum>(var: &impl Fn(&str) -> Option<String>, name: &str) -> Result<Option<T>> {
            match var(name) {
                None => Ok(None),
                Some(v) => match T::from_str(v.trim(), true) {
                    Ok(x) => Ok(Some(x)),
                    Err(e) => bail!("environment variable {name}={v:?}: {e}"),
                },
            }
        }
        let path = |name: &str| var(name).map(PathBuf::from);
        Ok(Self {
            backend: BackendSection {
                kind: choice(&var, "ELA_BACKEND")?,
                script: path("ELA_SCRIPT"),
                endpoint_url: var("ELA_ENDPOINT"),
                model_name: var("ELA_MODEL"),
                ..Default::default()
            },
            agent: AgentSection {
                k: parsed(&var, "ELA_K")?,
                max_mentions: parsed(&var, "ELA_MAX_MENTIONS")?,
                ..Default::default()
            },
            retrieval: RetrievalSection {
                backend: choice(&var, "ELA_RETRIEVAL")?,
                index: path("ELA_INDEX"),
                corpus: path("ELA_CORPUS"),
                cache_dir: path("ELA_CACHE_DIR"),
            },
            parallelism: ParallelismSection {
                workers: parsed(&var, "ELA_WORKERS")?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn precedence_file_env_flags() {
        let mut cfg = CliConfig::from_toml(
            "[agent]\nk = 10\nmax_mentions = 4\n[parallelism]\nworkers = 2\n[retrieval]\nindex = \"file_idx\"\n",
        )
        .unwrap();
        let env = HashMap::from([("ELA_K", "20"), ("ELA_INDEX", "env_idx")]);
        cfg.overlay(CliConfig::from_env(|n| env.get(n).map(|v| v.to_string())).unwrap());
        let mut flags = CliConfig::default();
        flags.agent.k = Some(30);
        cfg.overlay(flags);
        assert_eq!(cfg.agent.k, Some(30));
        assert_eq!(cfg.agent.max_mentions, Some(4));
        assert_eq!(cfg.retrieval.index, Some(PathBuf::from("env_idx")));
        assert_eq!(cfg.parallelism.workers, Some(2));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(CliConfig::from_toml("[agent]\nkk = 1").is_err());
        let env = HashMap::from([("ELA_WORKERS", "many")]);
        assert!(CliConfig::from_env(|n| env.get(n).map(|v| v.to_string())).is_err());
        let env = HashMap::from([("ELA_BACKEND", "SCRIPTED")]);
        let cfg = CliConfig::from_env(|n| env.get(n).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.backend.kind, Some(BackendKind::Scripted));
    }
}
