//! Networked service for the show-hide disclosure game: session lifecycle
//! over HTTP, a websocket channel for game events, access-controlled
//! dataset and preview endpoints, and admin scoring and export.

pub mod config;
pub mod http;
pub mod store;
pub mod wire;
mod ws;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use chrono::Utc;
use disclosure_core::chart_spec::{parse_chart_spec, validate_spec, ChartSpec, Violation};
use disclosure_core::game_core::{anonymize, new_session, to_ndjson, GameError, GameEvent, Session, SessionConfig};
use disclosure_core::puzzle_gen::Bundle;
use disclosure_core::signal_rubric::{ground_truth, score_with_truth, RubricParams};
use disclosure_core::transform_engine::evaluate;
use rand::distributions::{Alphanumeric, Slice};
use rand::Rng;
use thiserror::Error;
use tokio::sync::{broadcast, Mutex};

pub use config::ServerConfig;
use store::{Access, SessionDir};
use wire::{Capabilities, JoinGrant, MailboxEntry, PlayerState, PlayerView, PuzzleBrief, ScoredChart};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("cannot bind: {0}")]
    Bind(String),
    #[error("session {0:?} already exists")]
    SessionExists(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {id:?} is quarantined: corrupt log at seq {seq}: {message}")]
    Quarantined { id: String, seq: u64, message: String },
    #[error("missing or unknown token")]
    Unauthorized,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("round is not complete")]
    RoundNotComplete,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("chart spec failed validation")]
    Validation(Vec<Violation>),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("envelope of {0} bytes exceeds the size limit")]
    TooLarge(usize),
    #[error("scoring failed: {0}")]
    Rubric(String),
}

/// Who a bearer token belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    Admin,
    Player { session: String, player: String },
}

pub struct SessionHandle {
    pub id: String,
    runtime: Mutex<Runtime>,
    updates: broadcast::Sender<u64>,
}

struct Runtime {
    session: Session,
    access: Access,
    dir: SessionDir,
    applied_keys: HashMap<(String, String), u64>,
    since_snapshot: u64,
}

pub struct App {
    pub config: ServerConfig,
    catalog: BTreeMap<String, Arc<Bundle>>,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
    tokens: RwLock<HashMap<String, (String, String)>>,
    quarantined: RwLock<BTreeMap<String, store::Quarantined>>,
}

const CODE_ALPHABET: &[char] = &[
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'J', 'K', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'U', 'V', 'W', 'X', 'Y',
    'Z', '2', '3', '4', '5', '6', '7', '8', '9',
];

fn join_code() -> String {
    let dist = Slice::new(CODE_ALPHABET).expect("non-empty alphabet");
    rand::thread_rng().sample_iter(dist).take(6).collect()
}

fn secret_token() -> String {
    rand::thread_rng().sample_iter(Alphanumeric).take(32).map(char::from).collect()
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl App {
    /// Loads puzzles, replays every stored session and creates the sessions
    /// named in the config that do not exist yet.
    pub fn start(config: ServerConfig) -> Result<Arc<App>, ServerError> {
        let catalog = config.load_catalog()?;
        let (loaded, bad) = store::load_all(&config.data_dir)?;
        let app = Arc::new(App {
            catalog,
            sessions: RwLock::new(BTreeMap::new()),
            tokens: RwLock::new(HashMap::new()),
            quarantined: RwLock::new(bad.into_iter().map(|q| (q.id.clone(), q)).collect()),
            config,
        });
        for l in loaded {
            let id = l.session.state.id.clone();
            app.register(Runtime {
                session: l.session,
                access: l.access,
                dir: l.dir,
                applied_keys: HashMap::new(),
                since_snapshot: 0,
            });
            tracing::info!(session = %id, "resumed session");
        }
        for seed in app.config.sessions.clone() {
            if app.sessions.read().expect("lock").contains_key(&seed.id) {
                continue;
            }
            app.create_session(Some(seed.id), seed.config, seed.roster)?;
        }
        Ok(app)
    }

    fn register(&self, rt: Runtime) {
        let id = rt.session.state.id.clone();
        {
            let mut tokens = self.tokens.write().expect("lock");
            for (token, player) in &rt.access.tokens {
                tokens.insert(token.clone(), (id.clone(), player.clone()));
            }
        }
        let (updates, _) = broadcast::channel(256);
        let handle = Arc::new(SessionHandle { id: id.clone(), runtime: Mutex::new(rt), updates });
        self.sessions.write().expect("lock").insert(id, handle);
    }

    pub fn puzzle(&self, id: &str) -> Option<&Arc<Bundle>> {
        self.catalog.get(id)
    }

    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ServerError> {
        if let Some(q) = self.quarantined.read().expect("lock").get(id) {
            return Err(ServerError::Quarantined { id: q.id.clone(), seq: q.seq, message: q.message.clone() });
        }
        self.sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServerError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("lock").keys().cloned().collect()
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal, ServerError> {
        if token.is_empty() {
            return Err(ServerError::Unauthorized);
        }
        if token == self.config.admin_token {
            return Ok(Principal::Admin);
        }
        self.tokens
            .read()
            .expect("lock")
            .get(token)
            .map(|(session, player)| Principal::Player { session: session.clone(), player: player.clone() })
            .ok_or(ServerError::Unauthorized)
    }

    pub fn require_admin(&self, token: &str) -> Result<(), ServerError> {
        match self.authenticate(token)? {
            Principal::Admin => Ok(()),
            Principal::Player { .. } => Err(ServerError::Forbidden("admin only".into())),
        }
    }

    /// Returns the session id and each player's join code.
    pub fn create_session(
        &self,
        id: Option<String>,
        config: SessionConfig,
        roster: Vec<String>,
    ) -> Result<(String, BTreeMap<String, String>), ServerError> {
        let id = id.unwrap_or_else(|| format!("s-{}", join_code().to_lowercase()));
        if !valid_session_id(&id) {
            return Err(ServerError::BadRequest(format!("invalid session id {id:?}")));
        }
        if let Some(p) = config.puzzles.iter().find(|p| !self.catalog.contains_key(*p)) {
            return Err(ServerError::NotFound(format!("puzzle {p:?}")));
        }
        if self.sessions.read().expect("lock").contains_key(&id) {
            return Err(ServerError::SessionExists(id));
        }
        let session = new_session(&id, config, roster.clone(), Utc::now())?;
        let dir = SessionDir::create(&self.config.data_dir, &id)?;
        let mut access = Access::default();
        let mut codes = BTreeMap::new();
        for p in &roster {
            let code = loop {
                let c = join_code();
                if !access.codes.contains_key(&c) {
                    break c;
                }
            };
            access.codes.insert(code.clone(), p.clone());
            codes.insert(p.clone(), code);
        }
        dir.write_access(&access)?;
        dir.append(&session.log[0])?;
        self.register(Runtime { session, access, dir, applied_keys: HashMap::new(), since_snapshot: 0 });
        Ok((id, codes))
    }

    pub async fn join(&self, session: &str, code: &str) -> Result<JoinGrant, ServerError> {
        let handle = self.session(session)?;
        let mut rt = handle.runtime.lock().await;
        let code = code.trim().to_uppercase();
        let player = rt.access.codes.get(&code).cloned().ok_or(ServerError::Forbidden("unknown join code".into()))?;
        let token = secret_token();
        rt.access.tokens.insert(token.clone(), player.clone());
        rt.dir.write_access(&rt.access)?;
        self.tokens.write().expect("lock").insert(token.clone(), (session.to_string(), player.clone()));
        let role = rt.session.state.role_of(&player);
        Ok(JoinGrant {
            session: session.to_string(),
            player,
            role,
            token,
            capabilities: Capabilities::for_role(role),
        })
    }
}

fn render_all(bundle: Option<&Arc<Bundle>>, charts: &[ChartSpec]) -> Vec<serde_json::Value> {
    charts
        .iter()
        .map(|c| match bundle.map(|b| evaluate(c, &b.dataset)) {
            Some(Ok(view)) => view.to_client_json(),
            Some(Err(e)) => serde_json::json!({ "error": e.to_string() }),
            None => serde_json::json!({ "error": "puzzle unavailable" }),
        })
        .collect()
}

impl App {
    fn view_of(&self, session: &Session, player: &str) -> Result<PlayerState, ServerError> {
        let state = &session.state;
        let group = state.group_of(player).ok_or_else(|| GameError::UnknownPlayer(player.to_string()))?;
        let round = group.current();
        let role = state.role_of(player);
        let puzzle = (!group.finished).then(|| self.catalog.get(&round.puzzle)).flatten().map(|b| PuzzleBrief {
            id: b.puzzle.id.clone(),
            title: b.puzzle.title.clone(),
            setting: b.puzzle.setting_text.clone(),
            prompt: if role.is_some_and(|r| r.is_sender()) {
                b.puzzle.sender_prompt.clone()
            } else {
                b.puzzle.receiver_prompt.clone()
            },
        });
        let mut mailbox = Vec::new();
        for r in &group.rounds {
            let bundle = self.catalog.get(&r.puzzle);
            for m in r.messages.iter().filter(|m| m.from == player || m.to.iter().any(|t| t == player)) {
                mailbox.push(MailboxEntry { message: m.clone(), rendered: render_all(bundle, &m.charts) });
            }
        }
        Ok(PlayerState {
            view: PlayerView {
                session: state.id.clone(),
                player: player.to_string(),
                group: group.index,
                round: group.current_round(),
                rounds_total: group.puzzle_order.len(),
                finished: group.finished,
                phase: round.phase,
                role,
                capabilities: Capabilities::for_role(role),
                legal_actions: state.legal_actions(player)?,
                puzzle,
                round_overdue: state.round_overdue(group.index, Utc::now()),
                last_seq: state.last_seq,
            },
            mailbox,
        })
    }

    pub async fn player_state(&self, session: &str, player: &str) -> Result<PlayerState, ServerError> {
        let handle = self.session(session)?;
        let rt = handle.runtime.lock().await;
        self.view_of(&rt.session, player)
    }

    /// Full session state plus the advisory overdue flag per group.
    pub async fn admin_state(&self, session: &str) -> Result<serde_json::Value, ServerError> {
        let handle = self.session(session)?;
        let rt = handle.runtime.lock().await;
        let state = &rt.session.state;
        let now = Utc::now();
        let overdue: Vec<bool> = (0..state.groups.len()).map(|g| state.round_overdue(g, now)).collect();
        Ok(serde_json::json!({ "state": state, "overdue": overdue, "admin_actions": state.admin_actions() }))
    }

    /// Applies one event for `actor`. Returns the new seq, or `None` when
    /// `key` was already applied.
    pub async fn submit(
        &self,
        session: &str,
        actor: &str,
        group: Option<usize>,
        event: GameEvent,
        key: Option<String>,
    ) -> Result<Option<u64>, ServerError> {
        if matches!(event, GameEvent::SessionCreated { .. }) {
            return Err(ServerError::BadRequest("sessions are created over HTTP".into()));
        }
        let handle = self.session(session)?;
        let mut rt = handle.runtime.lock().await;
        if let Some(k) = &key {
            if rt.applied_keys.contains_key(&(actor.to_string(), k.clone())) {
                return Ok(None);
            }
        }
        if let GameEvent::ResponseSent { charts, .. } = &event {
            let puzzle = rt
                .session
                .state
                .group_of(actor)
                .map(|g| g.current().puzzle.clone())
                .and_then(|p| self.catalog.get(&p).cloned());
            if let Some(bundle) = puzzle {
                let violations: Vec<Violation> =
                    charts.iter().flat_map(|c| validate_spec(c, &bundle.dataset.schema).violations).collect();
                if !violations.is_empty() {
                    return Err(ServerError::Validation(violations));
                }
            }
        }
        let rec = rt.session.state.stamp(actor, group, event, Utc::now());
        let mut next = rt.session.state.clone();
        next.apply(&rec)?;
        rt.dir.append(&rec)?;
        let seq = rec.seq;
        rt.session.state = next;
        rt.session.log.push(rec);
        if let Some(k) = key {
            rt.applied_keys.insert((actor.to_string(), k), seq);
        }
        rt.since_snapshot += 1;
        if rt.since_snapshot >= self.config.snapshot_every.max(1) {
            rt.dir.write_snapshot(&rt.session.state)?;
            rt.since_snapshot = 0;
        }
        let _ = handle.updates.send(seq);
        Ok(Some(seq))
    }

    /// The puzzle bundle a token may read data from: only senders of a
    /// current round on that puzzle qualify.
    async fn sender_bundle(&self, token: &str, puzzle: &str) -> Result<Arc<Bundle>, ServerError> {
        let Principal::Player { session, player } = self.authenticate(token)? else {
            return Err(ServerError::Forbidden("dataset access is limited to senders".into()));
        };
        let handle = self.session(&session)?;
        let rt = handle.runtime.lock().await;
        let state = &rt.session.state;
        let sender_now = state.role_of(&player).is_some_and(|r| r.is_sender());
        let on_puzzle = state.group_of(&player).is_some_and(|g| !g.finished && g.current().puzzle == puzzle);
        if !(sender_now && on_puzzle) {
            return Err(ServerError::Forbidden("dataset access is limited to senders of this puzzle".into()));
        }
        self.catalog.get(puzzle).cloned().ok_or_else(|| ServerError::NotFound(format!("puzzle {puzzle:?}")))
    }

    pub async fn dataset_csv(&self, token: &str, puzzle: &str) -> Result<String, ServerError> {
        Ok(self.sender_bundle(token, puzzle).await?.dataset.to_csv())
    }

    /// Evaluates a draft chart for a sender. Provenance is reduced to counts.
    pub async fn preview(&self, token: &str, puzzle: &str, spec: &serde_json::Value) -> Result<serde_json::Value, ServerError> {
        let bundle = self.sender_bundle(token, puzzle).await?;
        let spec = parse_chart_spec(&spec.to_string()).map_err(|e| ServerError::BadRequest(e.to_string()))?;
        let report = validate_spec(&spec, &bundle.dataset.schema);
        if !report.is_valid() {
            return Err(ServerError::Validation(report.violations));
        }
        let view = tokio::task::spawn_blocking(move || evaluate(&spec, &bundle.dataset))
            .await
            .map_err(|e| ServerError::Rubric(e.to_string()))?
            .map_err(|e| ServerError::BadRequest(e.to_string()))?;
        Ok(view.to_client_json())
    }

    /// One score card per chart sent in a completed round, in send order.
    pub async fn score_round(
        &self,
        session: &str,
        group: usize,
        round: usize,
        params: RubricParams,
    ) -> Result<Vec<ScoredChart>, ServerError> {
        let handle = self.session(session)?;
        let (puzzle, charts) = {
            let rt = handle.runtime.lock().await;
            let g = rt.session.state.groups.get(group).ok_or(GameError::UnknownGroup(group))?;
            let r = g.rounds.get(round).ok_or_else(|| ServerError::NotFound(format!("round {round}")))?;
            if r.contract.is_none() {
                return Err(ServerError::RoundNotComplete);
            }
            let charts: Vec<(u64, String, usize, ChartSpec)> = r
                .messages
                .iter()
                .filter(|m| m.kind == disclosure_core::game_core::MessageKind::Response)
                .flat_map(|m| m.charts.iter().enumerate().map(|(i, c)| (m.seq, m.from.clone(), i, c.clone())))
                .collect();
            (r.puzzle.clone(), charts)
        };
        let bundle = self.catalog.get(&puzzle).cloned().ok_or_else(|| ServerError::NotFound(format!("puzzle {puzzle:?}")))?;
        tokio::task::spawn_blocking(move || {
            let truth = |b| ground_truth(&bundle.dataset, b, &params).map_err(|e| ServerError::Rubric(e.to_string()));
            let (need, constraint) = (truth(&bundle.puzzle.need)?, truth(&bundle.puzzle.constraint)?);
            charts
                .into_iter()
                .map(|(seq, sender, chart_index, spec)| {
                    score_with_truth(&spec, &bundle.dataset, &bundle.puzzle, &params, &need, &constraint)
                        .map(|card| ScoredChart { seq, sender, chart_index, card })
                        .map_err(|e| ServerError::Rubric(e.to_string()))
                })
                .collect()
        })
        .await
        .map_err(|e| ServerError::Rubric(e.to_string()))?
    }

    /// Anonymized line-delimited log of a session.
    pub async fn export(&self, session: &str, seed: u64) -> Result<String, ServerError> {
        let handle = self.session(session)?;
        let rt = handle.runtime.lock().await;
        Ok(to_ndjson(&anonymize(&rt.session.log, seed)))
    }

    pub fn subscribe(&self, session: &str) -> Result<broadcast::Receiver<u64>, ServerError> {
        Ok(self.session(session)?.updates.subscribe())
    }
}

/// Binds and serves until the process is stopped.
pub async fn run_server(config: ServerConfig) -> Result<(), ServerError> {
    let bind = config.bind;
    let app = App::start(config)?;
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| ServerError::Bind(e.to_string()))?;
    tracing::info!(addr = %bind, "listening");
    axum::serve(listener, http::router(app)).await?;
    Ok(())
}

/// Starts a server on a background task and returns its bound address.
/// Port 0 in the config picks a free port.
pub async fn spawn(config: ServerConfig) -> Result<(std::net::SocketAddr, Arc<App>), ServerError> {
    let bind = config.bind;
    let app = App::start(config)?;
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| ServerError::Bind(e.to_string()))?;
    let addr = listener.local_addr()?;
    let router = http::router(app.clone());
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok((addr, app))
}
