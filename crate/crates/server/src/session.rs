//! The single-writer session: reducer, layout, and log, driven one envelope at a time.

use std::path::Path;

use holoproxy_core::anchor::PoseJitter;
use holoproxy_core::protocol::{
    decode, reduce, ClientId, Envelope, MessagePayload, Outbound, ReduceContext, SessionId, SessionState,
};
use holoproxy_core::{layout_chart, ChartLayout, DataCube, ScreenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::log::{meta_path, ClosedLog, JitterConfig, LogError, LogMeta, LogWriter};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("digest mismatch: log closed at {expected} after {expected_applied} messages, replay gives {actual} after {applied}")]
    DigestMismatch { expected: String, actual: String, expected_applied: u64, applied: u64 },
}

#[derive(Debug)]
pub struct SessionCore {
    id: SessionId,
    cube: DataCube,
    layout: ChartLayout,
    screen: ScreenConfig,
    state: SessionState,
    applied: u64,
    log: Option<LogWriter>,
    jitter: Option<(PoseJitter, JitterConfig)>,
}

impl SessionCore {
    /// Unlogged session: empty selection, identity pose, no projection or summary.
    pub fn new(id: SessionId, cube: DataCube, screen: ScreenConfig) -> Self {
        let layout = layout_chart(&cube);
        let state = SessionState::initial(&cube);
        Self { id, cube, layout, screen, state, applied: 0, log: None, jitter: None }
    }

    /// Session whose every applied envelope is appended to `log_path`.
    pub fn create_logged(
        id: SessionId,
        cube: DataCube,
        screen: ScreenConfig,
        jitter: Option<JitterConfig>,
        log_path: &Path,
    ) -> Result<Self, LogError> {
        let meta = LogMeta::new(id.clone(), &cube, screen, jitter);
        let log = LogWriter::create(log_path, meta)?;
        let mut core = Self::new(id, cube, screen).with_jitter(jitter);
        core.log = Some(log);
        Ok(core)
    }

    pub fn with_jitter(mut self, jitter: Option<JitterConfig>) -> Self {
        self.jitter = jitter.and_then(|j| {
            let model = PoseJitter::new(j.sigma).expect("jitter sigma checked by caller");
            (!model.is_off()).then_some((model, j))
        });
        self
    }

    /// Rebuilds a session from its log after a crash and keeps appending to it.
    pub fn recover(log_path: &Path) -> Result<Self, ReplayError> {
        let rebuilt = rebuild(log_path)?;
        let log = LogWriter::reopen(log_path, rebuilt.meta.clone())?;
        let mut core = Self::new(rebuilt.meta.session.clone(), rebuilt.cube, rebuilt.meta.screen)
            .with_jitter(rebuilt.meta.jitter);
        core.state = rebuilt.state;
        core.applied = rebuilt.applied;
        core.log = Some(log);
        Ok(core)
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn cube(&self) -> &DataCube {
        &self.cube
    }

    pub fn layout(&self) -> &ChartLayout {
        &self.layout
    }

    pub fn screen(&self) -> &ScreenConfig {
        &self.screen
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn digest(&self) -> String {
        self.state.digest()
    }

    /// Number of envelopes reduced so far.
    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(LogWriter::path)
    }

    /// Jitters pose updates, appends to the log, then reduces.
    ///
    /// A failed log write leaves the session untouched, so the log never lags the state.
    pub fn ingest(&mut self, mut env: Envelope) -> Result<Vec<Outbound>, LogError> {
        let index = self.applied + 1;
        if let (Some((model, cfg)), MessagePayload::PoseUpdate { pose }) = (&self.jitter, &mut env.payload) {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index);
            *pose = model.apply(pose, &mut rng);
        }
        if let Some(log) = &mut self.log {
            log.append(index, &env)?;
        }
        let ctx = ReduceContext { cube: &self.cube, layout: &self.layout, screen: &self.screen };
        let (next, out) = reduce(&self.state, &env, &ctx);
        self.state = next;
        self.applied = index;
        Ok(out)
    }

    /// The snapshot handed to a joining client, stamped with the hub's latest outbound seq.
    pub fn snapshot(&self) -> Envelope {
        Envelope::new(
            self.id.clone(),
            ClientId::server(),
            self.state.outbound_seq,
            MessagePayload::FullSnapshot { state: Box::new(self.state.clone()) },
        )
    }

    /// Records the final digest in the log metadata. Unlogged sessions return `None`.
    pub fn close(self) -> Result<Option<ClosedLog>, LogError> {
        let closed = ClosedLog { applied: self.applied, digest: self.state.digest() };
        self.log.map(|log| log.close(closed)).transpose()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub session: SessionId,
    pub applied: u64,
    pub digest: String,
    /// What the log recorded when it was closed; `None` for a log that was never closed.
    pub recorded: Option<ClosedLog>,
    pub state: SessionState,
}

struct Rebuilt {
    meta: LogMeta,
    cube: DataCube,
    state: SessionState,
    applied: u64,
}

fn rebuild(log_path: &Path) -> Result<Rebuilt, ReplayError> {
    let meta = LogMeta::read(&meta_path(log_path))?;
    let cube = meta.cube(&meta_path(log_path))?;
    let bytes = std::fs::read(log_path).map_err(|e| LogError::io(log_path, e))?;
    let mut core = SessionCore::new(meta.session.clone(), cube, meta.screen);

    let mut rest = bytes.as_slice();
    let mut line = 0usize;
    while !rest.is_empty() {
        line += 1;
        let corrupt = |reason: String| ReplayError::CorruptLog { line, reason };
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("truncated final frame".into()))?;
        let (text, tail) = rest.split_at(end + 1);
        rest = tail;
        let space = text.iter().position(|&b| b == b' ').ok_or_else(|| corrupt("missing index".into()))?;
        let index: u64 = std::str::from_utf8(&text[..space])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("bad index".into()))?;
        if index != core.applied + 1 {
            return Err(corrupt(format!("index {index} out of sequence")));
        }
        let env = decode(&text[space + 1..]).map_err(|e| corrupt(e.to_string()))?;
        if env.session_id != meta.session {
            return Err(corrupt(format!("frame for session {}", env.session_id)));
        }
        // jitter was applied before the frame was written; reduce it as logged
        core.ingest(env).expect("unlogged ingest cannot fail");
    }
    Ok(Rebuilt { state: core.state, applied: core.applied, cube: core.cube, meta })
}

/// Deterministically rebuilds a session from its log and checks the recorded digest.
pub fn replay(log_path: &Path) -> Result<ReplayOutcome, ReplayError> {
    let Rebuilt { meta, state, applied, .. } = rebuild(log_path)?;
    let digest = state.digest();
    if let Some(closed) = &meta.closed {
        if closed.digest != digest || closed.applied != applied {
            return Err(ReplayError::DigestMismatch {
                expected: closed.digest.clone(),
                actual: digest,
                expected_applied: closed.applied,
                applied,
            });
        }
    }
    Ok(ReplayOutcome { session: meta.session, applied, digest, recorded: meta.closed, state })
}
