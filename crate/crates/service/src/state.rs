use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::Serialize;

use seedgrow::engine::InferenceSession;
use seedgrow::ppo::PolicyParams;
use seedgrow::surrogate::entropy_of;
use seedgrow::{Dims, EntropyField, EnvConfig, Mask, SegEnv, SurrogateParams, Volume};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub env: EnvConfig,
    /// Masks with at most this many voxels are classified negative.
    pub negative_threshold: usize,
    pub session_ttl: Duration,
    /// UI assets served for paths outside `/api/v1`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let env = EnvConfig {
            grow: seedgrow::GrowConfig::desk(),
            ..EnvConfig::default()
        };
        ServiceConfig {
            negative_threshold: env.grow.radius.window_volume(),
            env,
            session_ttl: Duration::from_secs(1800),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VolumeEntry {
    pub volume: Arc<Volume>,
    pub truth: Option<Arc<Mask>>,
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeInfo {
    pub id: String,
    pub dims: Dims,
    pub channels: usize,
    pub spacing_mm: [f64; 3],
    pub has_truth: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

impl VolumeEntry {
    pub fn info(&self, id: &str) -> VolumeInfo {
        VolumeInfo {
            id: id.to_string(),
            dims: self.volume.dims(),
            channels: self.volume.channels(),
            spacing_mm: self.volume.spacing_mm(),
            has_truth: self.truth.is_some(),
            source: self.source.clone(),
        }
    }
}

pub type SharedSession = Arc<tokio::sync::Mutex<InferenceSession<f64>>>;

#[derive(Debug, Clone)]
pub struct SessionEntry {
    pub session: SharedSession,
    pub volume_id: String,
    pub policy_id: Option<String>,
    pub surrogate_id: String,
    pub last_used: Instant,
}

#[derive(Debug, Default)]
struct Registry {
    volumes: HashMap<String, VolumeEntry>,
    surrogates: HashMap<String, Arc<SurrogateParams>>,
    policies: HashMap<String, Arc<PolicyParams<f64>>>,
    entropy: HashMap<(String, String), Arc<EntropyField>>,
}

#[derive(Debug)]
struct Inner {
    cfg: ServiceConfig,
    registry: RwLock<Registry>,
    sessions: Mutex<HashMap<String, SessionEntry>>,
    next_id: AtomicU64,
}

/// Volumes, models and sessions shared by every handler.
#[derive(Debug, Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                cfg,
                registry: RwLock::new(Registry::default()),
                sessions: Mutex::new(HashMap::new()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.inner.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn registry(&self) -> std::sync::RwLockReadGuard<'_, Registry> {
        self.inner.registry.read().unwrap_or_else(|e| e.into_inner())
    }

    fn registry_mut(&self) -> std::sync::RwLockWriteGuard<'_, Registry> {
        self.inner.registry.write().unwrap_or_else(|e| e.into_inner())
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<String, SessionEntry>> {
        self.inner.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn add_surrogate(&self, id: &str, params: SurrogateParams) {
        self.registry_mut().surrogates.insert(id.to_string(), Arc::new(params));
    }

    pub fn add_policy(&self, id: &str, params: PolicyParams<f64>) {
        self.registry_mut().policies.insert(id.to_string(), Arc::new(params));
    }

    pub fn add_volume(&self, entry: VolumeEntry) -> ApiResult<VolumeInfo> {
        if let Some(t) = &entry.truth {
            if t.dims() != entry.volume.dims() {
                return Err(ApiError::bad_request("truth mask dims differ from the volume").field("truth_path"));
            }
        }
        let id = self.fresh_id("vol");
        let info = entry.info(&id);
        self.registry_mut().volumes.insert(id, entry);
        Ok(info)
    }

    pub fn volume(&self, id: &str) -> ApiResult<VolumeEntry> {
        self.registry().volumes.get(id).cloned().ok_or_else(|| ApiError::not_found("volume", id))
    }

    pub fn volumes(&self) -> Vec<VolumeInfo> {
        let reg = self.registry();
        let mut out: Vec<VolumeInfo> = reg.volumes.iter().map(|(id, v)| v.info(id)).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    pub fn surrogate_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.registry().surrogates.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn policies(&self) -> Vec<(String, Arc<PolicyParams<f64>>)> {
        let mut out: Vec<_> = self.registry().policies.iter().map(|(k, v)| (k.clone(), Arc::clone(v))).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Entropy of a volume under a surrogate, computed once per pair.
    pub fn entropy(&self, volume_id: &str, surrogate_id: &str) -> ApiResult<Arc<EntropyField>> {
        let key = (volume_id.to_string(), surrogate_id.to_string());
        if let Some(e) = self.registry().entropy.get(&key) {
            return Ok(Arc::clone(e));
        }
        let vol = self.volume(volume_id)?;
        let sur = self
            .registry()
            .surrogates
            .get(surrogate_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("surrogate", surrogate_id))?;
        let e = Arc::new(entropy_of(&vol.volume, &sur)?);
        self.registry_mut().entropy.insert(key, Arc::clone(&e));
        Ok(e)
    }

    /// Builds the session's environment (blocking; run off the async pool).
    pub fn create_session(&self, volume_id: &str, policy_id: Option<&str>, surrogate_id: &str) -> ApiResult<String> {
        let vol = self.volume(volume_id)?;
        let policy = match policy_id {
            Some(p) => Some(
                self.registry()
                    .policies
                    .get(p)
                    .cloned()
                    .ok_or_else(|| ApiError::not_found("policy", p))?,
            ),
            None => None,
        };
        let entropy = self.entropy(volume_id, surrogate_id)?;
        let env = SegEnv::new(Arc::clone(&vol.volume), vol.truth.clone(), entropy, &self.inner.cfg.env)?;
        let session = InferenceSession::new(env, policy)?;
        let id = self.fresh_id("ses");
        self.sessions().insert(
            id.clone(),
            SessionEntry {
                session: Arc::new(tokio::sync::Mutex::new(session)),
                volume_id: volume_id.to_string(),
                policy_id: policy_id.map(str::to_string),
                surrogate_id: surrogate_id.to_string(),
                last_used: Instant::now(),
            },
        );
        Ok(id)
    }

    /// Looks a session up and marks it used.
    pub fn session(&self, id: &str) -> ApiResult<SessionEntry> {
        let mut sessions = self.sessions();
        let entry = sessions.get_mut(id).ok_or_else(|| ApiError::not_found("session", id))?;
        entry.last_used = Instant::now();
        Ok(entry.clone())
    }

    pub fn remove_session(&self, id: &str) -> ApiResult<()> {
        self.sessions()
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }

    /// Drops sessions idle for longer than the TTL; returns how many.
    pub fn sweep_expired(&self, now: Instant) -> usize {
        let ttl = self.inner.cfg.session_ttl;
        let mut sessions = self.sessions();
        let before = sessions.len();
        sessions.retain(|_, s| now.saturating_duration_since(s.last_used) <= ttl);
        before - sessions.len()
    }
}
