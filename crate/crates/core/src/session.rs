//! Per-user state: the adapted diversity radius, recommendation history and
//! feedback log, plus a file-backed store.
//!
//! Session files are line oriented so new events can be appended:
//!
//! ```text
//! optidiv-session v1
//! {"type":"session","session_id":"...","sigma":0.2,...}
//! {"type":"recommended","item_id":"x","bold":true,"distance":0.31,"at":1700000000000}
//! {"type":"feedback","item_id":"x","verdict":"reject","bold":true,"sigma_before":0.2,"sigma_after":0.18,"at":...}
//! ```
//!
//! Only an opaque session id is stored; nothing identifies the person.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equity::ExposureLedger;
use crate::kernel::{KernelError, SigmaBounds, DEFAULT_SIGMA};
use crate::recommender::{Recommendation, SeedProfile};

pub const SESSION_HEADER: &str = "optidiv-session v1";
pub const DEFAULT_ETA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("item `{0}` was never recommended in this session")]
    NotRecommended(String),
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("invalid session id `{0}`")]
    InvalidId(String),
    #[error("learning rate must lie in (0, 1), got {0}")]
    InvalidEta(f64),
    #[error("corrupted session file at byte offset {offset}: {message}")]
    Decode { offset: usize, message: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accept" => Ok(Verdict::Accept),
            "reject" => Ok(Verdict::Reject),
            other => Err(format!("unknown verdict `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRecord {
    pub item_id: String,
    pub bold: bool,
    pub distance: f64,
    /// Milliseconds since the Unix epoch.
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub item_id: String,
    pub verdict: Verdict,
    pub bold: bool,
    pub sigma_before: f64,
    pub sigma_after: f64,
    pub at: u64,
}

/// Defaults applied to new sessions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionDefaults {
    pub sigma: f64,
    pub eta: f64,
    pub bounds: SigmaBounds,
}

impl Default for SessionDefaults {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            eta: DEFAULT_ETA,
            bounds: SigmaBounds::default(),
        }
    }
}

/// Emitted when a requested sigma had to be clamped into bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampNotice {
    pub requested: f64,
    pub applied: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSession {
    pub session_id: String,
    sigma: f64,
    initial_sigma: f64,
    pub eta: f64,
    pub bounds: SigmaBounds,
    pub profile: SeedProfile,
    recommended: Vec<RecommendationRecord>,
    feedback_log: Vec<FeedbackEvent>,
    pub created_at: u64,
}

/// Opens a session with a fresh random id.
pub fn create_session(
    profile: SeedProfile,
    defaults: &SessionDefaults,
    requested_sigma: Option<f64>,
    now: u64,
) -> Result<(UserSession, Option<ClampNotice>), SessionError> {
    UserSession::new(
        uuid::Uuid::new_v4().to_string(),
        profile,
        defaults,
        requested_sigma,
        now,
    )
}

impl UserSession {
    pub fn new(
        session_id: String,
        profile: SeedProfile,
        defaults: &SessionDefaults,
        requested_sigma: Option<f64>,
        now: u64,
    ) -> Result<(Self, Option<ClampNotice>), SessionError> {
        validate_id(&session_id)?;
        if !(defaults.eta > 0.0 && defaults.eta < 1.0) {
            return Err(SessionError::InvalidEta(defaults.eta));
        }
        let requested = requested_sigma.unwrap_or(defaults.sigma);
        if !requested.is_finite() {
            return Err(KernelError::NonFinite(requested).into());
        }
        if requested <= 0.0 {
            return Err(KernelError::NonPositiveSigma(requested).into());
        }
        let sigma = defaults.bounds.clamp(requested);
        let notice = (sigma != requested).then_some(ClampNotice {
            requested,
            applied: sigma,
        });
        Ok((
            Self {
                session_id,
                sigma,
                initial_sigma: sigma,
                eta: defaults.eta,
                bounds: defaults.bounds,
                profile,
                recommended: Vec::new(),
                feedback_log: Vec::new(),
                created_at: now,
            },
            notice,
        ))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn feedback_log(&self) -> &[FeedbackEvent] {
        &self.feedback_log
    }

    pub fn recommended(&self) -> &[RecommendationRecord] {
        &self.recommended
    }

    pub fn note_recommendations(&mut self, recs: &[Recommendation], now: u64) {
        self.recommended
            .extend(recs.iter().map(|r| RecommendationRecord {
                item_id: r.item_id.clone(),
                bold: r.bold,
                distance: r.distance,
                at: now,
            }));
    }

    /// Adapts sigma from a verdict on a previously recommended item. Only
    /// verdicts on bold items move sigma; every verdict is logged.
    pub fn apply_feedback(
        &mut self,
        item_id: &str,
        verdict: Verdict,
        now: u64,
    ) -> Result<&FeedbackEvent, SessionError> {
        let record = self
            .recommended
            .iter()
            .rev()
            .find(|r| r.item_id == item_id)
            .ok_or_else(|| SessionError::NotRecommended(item_id.to_owned()))?;
        let bold = record.bold;
        let before = self.sigma;
        let after = match (bold, verdict) {
            (false, _) => before,
            (true, Verdict::Reject) => self.bounds.clamp(before * (1.0 - self.eta)),
            (true, Verdict::Accept) => self.bounds.clamp(before * (1.0 + self.eta)),
        };
        self.sigma = after;
        self.feedback_log.push(FeedbackEvent {
            item_id: item_id.to_owned(),
            verdict,
            bold,
            sigma_before: before,
            sigma_after: after,
            at: now,
        });
        Ok(self.feedback_log.last().expect("just pushed"))
    }
}

fn validate_id(id: &str) -> Result<(), SessionError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidId(id.to_owned()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Session {
        session_id: String,
        sigma: f64,
        eta: f64,
        bounds: SigmaBounds,
        profile: SeedProfile,
        created_at: u64,
    },
    Recommended(RecommendationRecord),
    Feedback(FeedbackEvent),
}

impl UserSession {
    fn encode(&self) -> Result<String, SessionError> {
        let mut out = String::new();
        out.push_str(SESSION_HEADER);
        out.push('\n');
        let head = Record::Session {
            session_id: self.session_id.clone(),
            sigma: self.initial_sigma,
            eta: self.eta,
            bounds: self.bounds,
            profile: self.profile.clone(),
            created_at: self.created_at,
        };
        let to_line = |r: &Record| serde_json::to_string(r).map_err(std::io::Error::other);
        out.push_str(&to_line(&head)?);
        out.push('\n');
        // merge by timestamp so the file reads as a history; each list keeps its order
        let (mut recs, mut fbs) = (
            self.recommended.iter().peekable(),
            self.feedback_log.iter().peekable(),
        );
        loop {
            let record = match (recs.peek(), fbs.peek()) {
                (Some(r), Some(f)) if r.at <= f.at => {
                    Record::Recommended(recs.next().unwrap().clone())
                }
                (_, Some(_)) => Record::Feedback(fbs.next().unwrap().clone()),
                (Some(_), None) => Record::Recommended(recs.next().unwrap().clone()),
                (None, None) => break,
            };
            out.push_str(&to_line(&record)?);
            out.push('\n');
        }
        Ok(out)
    }

    fn decode(bytes: &[u8]) -> Result<Self, SessionError> {
        let mut offset = 0;
        let mut session: Option<Self> = None;
        for (n, raw) in bytes.split(|b| *b == b'\n').enumerate() {
            let start = offset;
            offset += raw.len() + 1;
            let fail = |message: String| SessionError::Decode {
                offset: start,
                message,
            };
            let line = std::str::from_utf8(raw).map_err(|_| fail("invalid UTF-8".into()))?;
            if n == 0 {
                if line != SESSION_HEADER {
                    return Err(fail(format!("expected header `{SESSION_HEADER}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
            match (record, session.as_mut()) {
                (
                    Record::Session {
                        session_id,
                        sigma,
                        eta,
                        bounds,
                        profile,
                        created_at,
                    },
                    None,
                ) => {
                    session = Some(Self {
                        session_id,
                        sigma,
                        initial_sigma: sigma,
                        eta,
                        bounds,
                        profile,
                        recommended: Vec::new(),
                        feedback_log: Vec::new(),
                        created_at,
                    });
                }
                (Record::Session { .. }, Some(_)) => {
                    return Err(fail("duplicate session record".into()))
                }
                (_, None) => return Err(fail("event before session record".into())),
                (Record::Recommended(r), Some(s)) => s.recommended.push(r),
                (Record::Feedback(f), Some(s)) => {
                    s.sigma = f.sigma_after;
                    s.feedback_log.push(f);
                }
            }
        }
        session.ok_or(SessionError::Decode {
            offset: bytes.len(),
            message: "missing session record".into(),
        })
    }
}

/// Directory holding one file per session plus the shared exposure ledger.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, id: &str) -> Result<PathBuf, SessionError> {
        validate_id(id)?;
        Ok(self.dir.join(format!("{id}.session")))
    }

    fn write_atomic(&self, path: &Path, contents: &[u8]) -> Result<(), SessionError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(contents)?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn save_session(&self, session: &UserSession) -> Result<(), SessionError> {
        let path = self.path_for(&session.session_id)?;
        self.write_atomic(&path, session.encode()?.as_bytes())
    }

    pub fn load_session(&self, id: &str) -> Result<UserSession, SessionError> {
        let path = self.path_for(id)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(SessionError::NotFound(id.to_owned()))
            }
            Err(e) => return Err(e.into()),
        };
        UserSession::decode(&bytes)
    }

    pub fn save_ledger(&self, ledger: &ExposureLedger) -> Result<(), SessionError> {
        let json = serde_json::to_vec(ledger).map_err(std::io::Error::other)?;
        self.write_atomic(&self.dir.join("exposure.ledger"), &json)
    }

    /// Returns `None` when no ledger has been saved yet.
    pub fn load_ledger(&self) -> Result<Option<ExposureLedger>, SessionError> {
        match fs::read(self.dir.join("exposure.ledger")) {
            Ok(bytes) => {
                serde_json::from_slice(&bytes)
                    .map(Some)
                    .map_err(|e| SessionError::Decode {
                        offset: 0,
                        message: e.to_string(),
                    })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Every session id present in the store.
    pub fn list(&self) -> Result<Vec<String>, SessionError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("session") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
