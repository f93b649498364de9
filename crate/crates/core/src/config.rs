//! TOML configuration and resource loading.
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentDescriptor, AgentMode, EngineSettings, PrimaryBackend, Resources};
use crate::error::ConfigError;
use crate::intervention::ProtocolSet;
use crate::model::{parse_patient_profile, read_file, AgentId, CallScript, PatientProfile, ProtectedStore, ReferenceTables, TenantId};
use crate::orchestrator::{rule_agents, Orchestrator, RunOptions};
use crate::policy::PolicyIndex;
use crate::primary::RulePrimary;
use crate::service::{ServiceBackend, ServiceConfig};
use crate::transcript::{Clock, LogicalClock, SystemClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Rules,
    Service,
}

impl FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rules" => Ok(BackendKind::Rules),
            "service" => Ok(BackendKind::Service),
            other => Err(ConfigError::Invalid(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `reference_tables.json`, `menus/` and `policy/`.
    pub tables: PathBuf,
    pub profile: PathBuf,
    pub script: PathBuf,
    pub protocols: PathBuf,
    pub identity_store: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub ttl_turns: u32,
    pub window_size: usize,
    pub max_attempts: u32,
    pub context_budget_tokens: u32,
    pub agent_name: String,
    pub tenant: String,
    pub agent_timeout_ms: u64,
    pub deterministic: bool,
    /// Agents whose output is delivered on the following turn.
    pub async_agents: Vec<AgentId>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let s = EngineSettings::default();
        Self {
            ttl_turns: s.ttl_turns,
            window_size: s.window_size,
            max_attempts: s.max_attempts,
            context_budget_tokens: s.context_budget_tokens,
            agent_name: s.agent_name,
            tenant: s.tenant,
            agent_timeout_ms: 2000,
            deterministic: true,
            async_agents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub service: ServiceConfig,
}

/// Loaded, validated inputs for one session.
pub struct Loaded {
    pub resources: Arc<Resources>,
    pub profile: Arc<PatientProfile>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.rebase(base);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Configuration for a fixtures directory laid out like the bundled one.
    pub fn for_fixtures(dir: &Path, profile: &str) -> Self {
        Self {
            paths: Paths {
                tables: dir.to_path_buf(),
                profile: dir.join("profiles").join(format!("{profile}.json")),
                script: dir.join("scripts/chf.json"),
                protocols: dir.join("protocols.json"),
                identity_store: dir.join("protected_store.json"),
                index_dir: None,
            },
            engine: EngineConfig::default(),
            backend: BackendKind::Rules,
            service: ServiceConfig::default(),
        }
    }

    fn rebase(&mut self, base: &Path) {
        let p = &mut self.paths;
        for f in [&mut p.tables, &mut p.profile, &mut p.script, &mut p.protocols, &mut p.identity_store] {
            *f = resolve(base, f);
        }
        if let Some(d) = &mut p.index_dir {
            *d = resolve(base, d);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.engine;
        if e.ttl_turns == 0 || e.window_size == 0 || e.max_attempts == 0 || e.context_budget_tokens == 0 {
            return Err(ConfigError::Invalid(
                "ttl_turns, window_size, max_attempts and context_budget_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn settings(&self, facility: String) -> EngineSettings {
        let e = &self.engine;
        EngineSettings {
            ttl_turns: e.ttl_turns,
            window_size: e.window_size,
            max_attempts: e.max_attempts,
            context_budget_tokens: e.context_budget_tokens,
            agent_name: e.agent_name.clone(),
            facility,
            tenant: e.tenant.clone(),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            deterministic: self.engine.deterministic,
            agent_timeout: Duration::from_millis(self.engine.agent_timeout_ms),
        }
    }

    /// Loads tables, script, protocols, identity store, policy index and the
    /// patient profile.
    pub fn load_all(&self) -> Result<Loaded, ConfigError> {
        let p = &self.paths;
        let tables = ReferenceTables::load_dir(&p.tables)?;
        let script = CallScript::parse(&read_file(&p.script)?)?;
        let protocols = ProtocolSet::load(&p.protocols)?;
        let identity = ProtectedStore::parse(&read_file(&p.identity_store)?)?;
        let profile = parse_patient_profile(&read_file(&p.profile)?, &tables)?;
        let tenant = TenantId::new(self.engine.tenant.clone());
        let corpus = tables
            .policy_corpora
            .get(&tenant)
            .ok_or_else(|| ConfigError::UnknownTenant(self.engine.tenant.clone()))?;
        let facility = corpus.facility.clone();
        let policy = match &p.index_dir {
            Some(dir) => {
                let (idx, rebuilt) = PolicyIndex::load_dir(dir, tables.policy_corpora.values());
                if !rebuilt.is_empty() {
                    log::info!("re-indexed stale policy tenants: {rebuilt:?}");
                }
                idx
            }
            None => PolicyIndex::build(tables.policy_corpora.values()),
        };
        let resources = Resources {
            tables: Arc::new(tables),
            script: Arc::new(script),
            protocols: Arc::new(protocols),
            identity: Arc::new(identity),
            policy: Arc::new(policy),
            settings: self.settings(facility),
        };
        Ok(Loaded {
            resources: Arc::new(resources),
            profile: Arc::new(profile),
        })
    }

    /// Support agents for the configured backend and async set.
    pub fn agents(&self) -> Vec<AgentDescriptor> {
        let mut agents = rule_agents();
        if self.backend == BackendKind::Service {
            let svc = Arc::new(ServiceBackend::new(self.service.clone().with_env()));
            for a in &mut agents {
                a.backend = svc.clone();
            }
        }
        agents
            .into_iter()
            .map(|a| {
                if self.engine.async_agents.contains(&a.agent_id) {
                    a.with_mode(AgentMode::Async)
                } else {
                    a
                }
            })
            .collect()
    }

    pub fn primary(&self) -> Arc<dyn PrimaryBackend> {
        match self.backend {
            BackendKind::Rules => Arc::new(RulePrimary),
            BackendKind::Service => Arc::new(ServiceBackend::new(self.service.clone().with_env())),
        }
    }

    pub fn clock(&self) -> Box<dyn Clock> {
        if self.engine.deterministic {
            Box::new(LogicalClock::default())
        } else {
            Box::new(SystemClock)
        }
    }

    pub fn build_orchestrator(&self) -> Result<Orchestrator, ConfigError> {
        let l = self.load_all()?;
        Ok(Orchestrator::new(
            l.resources,
            l.profile,
            self.agents(),
            self.primary(),
            self.clock(),
            self.run_options(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rebases() {
        let text = r#"
[paths]
tables = "fx"
profile = "fx/profiles/mary_adams.json"
script = "fx/scripts/chf.json"
protocols = "fx/protocols.json"
identity_store = "fx/protected_store.json"

[engine]
ttl_turns = 3
async_agents = ["summary"]
"#;
        let c = Config::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.paths.tables, PathBuf::from("/base/fx"));
        assert_eq!(c.engine.ttl_turns, 3);
        assert_eq!(c.engine.async_agents, vec![AgentId::Summary]);
        assert!(Config::parse("[paths]\ntables = 1", Path::new(".")).is_err());
        assert!(Config::parse(&text.replace("ttl_turns = 3", "ttl_turns = 0"), Path::new(".")).is_err());
    }
}
