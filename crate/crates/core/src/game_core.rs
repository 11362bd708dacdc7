//! Event-sourced session state: groups of three, rotating roles, and the
//! query → response → follow-up → contract flow of each round.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Timelike, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chart_spec::ChartSpec;

/// Actor name used for events issued by the session administrator.
pub const ADMIN_ACTOR: &str = "admin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub puzzles: Vec<String>,
    #[serde(default = "default_responses")]
    pub responses_per_sender: u32,
    #[serde(default = "default_charts")]
    pub charts_per_message: u32,
    #[serde(default = "default_minutes")]
    pub round_minutes: u32,
    #[serde(default)]
    pub rotation_seed: u64,
}

fn default_responses() -> u32 {
    2
}
fn default_charts() -> u32 {
    3
}
fn default_minutes() -> u32 {
    20
}

impl SessionConfig {
    pub fn new(puzzles: Vec<String>, rotation_seed: u64) -> Self {
        Self {
            puzzles,
            responses_per_sender: default_responses(),
            charts_per_message: default_charts(),
            round_minutes: default_minutes(),
            rotation_seed,
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.puzzles.is_empty() {
            return Err(GameError::InvalidConfig("at least one puzzle is required".into()));
        }
        if self.responses_per_sender < 1 {
            return Err(GameError::InvalidConfig("responses_per_sender must be at least 1".into()));
        }
        if self.round_minutes < 1 {
            return Err(GameError::InvalidConfig("round_minutes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.puzzles.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub receiver: String,
    pub sender_a: String,
    pub sender_b: String,
}

impl Roles {
    pub fn senders(&self) -> [&str; 2] {
        [&self.sender_a, &self.sender_b]
    }

    pub fn is_sender(&self, player: &str) -> bool {
        self.sender_a == player || self.sender_b == player
    }

    pub fn role_of(&self, player: &str) -> Option<Role> {
        if self.receiver == player {
            Some(Role::Receiver)
        } else if self.sender_a == player {
            Some(Role::SenderA)
        } else if self.sender_b == player {
            Some(Role::SenderB)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Receiver,
    SenderA,
    SenderB,
}

impl Role {
    pub fn is_sender(self) -> bool {
        self != Role::Receiver
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    AwaitQuery,
    AwaitFirstResponses,
    AwaitFollowups,
    AwaitSecondResponses,
    AwaitContract,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Query,
    Response,
    Followup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub kind: MessageKind,
    pub from: String,
    pub to: Vec<String>,
    pub text: String,
    pub charts: Vec<ChartSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub winner: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub puzzle: String,
    pub roles: Roles,
    pub phase: Phase,
    pub responses: BTreeMap<String, u32>,
    pub followed_up: BTreeSet<String>,
    /// Senders who received a follow-up and have not answered it yet.
    pub awaiting: BTreeSet<String>,
    pub messages: Vec<Message>,
    pub contract: Option<Contract>,
    pub abandoned: bool,
    pub started_at: DateTime<Utc>,
}

impl RoundState {
    fn new(puzzle: String, roles: Roles, started_at: DateTime<Utc>) -> Self {
        let responses = roles.senders().iter().map(|s| (s.to_string(), 0)).collect();
        Self {
            puzzle,
            roles,
            phase: Phase::AwaitQuery,
            responses,
            followed_up: BTreeSet::new(),
            awaiting: BTreeSet::new(),
            messages: Vec::new(),
            contract: None,
            abandoned: false,
            started_at,
        }
    }

    pub fn response_count(&self, sender: &str) -> u32 {
        self.responses.get(sender).copied().unwrap_or(0)
    }

    /// Senders who may be named in a contract.
    pub fn eligible_winners(&self) -> Vec<String> {
        self.roles
            .senders()
            .iter()
            .filter(|s| self.response_count(s) > 0)
            .map(|s| s.to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub index: usize,
    pub members: Vec<String>,
    pub schedule: Vec<Roles>,
    pub puzzle_order: Vec<String>,
    pub rounds: Vec<RoundState>,
    pub finished: bool,
}

impl GroupState {
    pub fn current_round(&self) -> usize {
        self.rounds.len() - 1
    }

    pub fn current(&self) -> &RoundState {
        self.rounds.last().expect("a group always has a round")
    }

    fn current_mut(&mut self) -> &mut RoundState {
        self.rounds.last_mut().expect("a group always has a round")
    }

    fn advance(&mut self, ts: DateTime<Utc>) {
        let next = self.rounds.len();
        if next >= self.puzzle_order.len() {
            self.finished = true;
        } else {
            self.rounds.push(RoundState::new(
                self.puzzle_order[next].clone(),
                self.schedule[next].clone(),
                ts,
            ));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum GameEvent {
    SessionCreated { config: SessionConfig, roster: Vec<String> },
    QuerySent { text: String },
    ResponseSent { sender: String, text: String, charts: Vec<ChartSpec> },
    FollowupSent { target_sender: String, text: String },
    ContractSigned { winner: String, rationale: String },
    RoundAdvanced,
}

/// One line of the append-only session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub session: String,
    pub group: Option<usize>,
    pub round: Option<usize>,
    pub actor: String,
    pub event: GameEvent,
}

impl EventRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IllegalReason {
    WrongActor,
    WrongPhase,
    WrongGroup,
    StaleRound,
    LimitExceeded,
    TooManyCharts,
    EmptyMessage,
    EmptyRationale,
    WinnerNeverResponded,
    NotASender,
    DuplicateFollowup,
    UnknownPlayer,
    SeqOutOfOrder,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("roster of {0} players cannot be split into groups of three")]
    RosterSize(usize),
    #[error("duplicate or reserved player id {0:?}")]
    DuplicatePlayer(String),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("unknown player {0:?}")]
    UnknownPlayer(String),
    #[error("unknown group {0}")]
    UnknownGroup(usize),
    #[error("illegal event: {0:?}")]
    IllegalEvent(IllegalReason),
    #[error("corrupt log at seq {seq}: {message}")]
    CorruptLog { seq: u64, message: String },
}

fn illegal(reason: IllegalReason) -> GameError {
    GameError::IllegalEvent(reason)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub config: SessionConfig,
    pub roster: Vec<String>,
    pub groups: Vec<GroupState>,
    pub last_seq: u64,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    SendQuery,
    SendResponse { max_charts: u32 },
    SendFollowup { target: String },
    SignContract { eligible_winners: Vec<String> },
    AdvanceRound { group: usize },
}

pub type ActionSet = Vec<Action>;

fn form_groups(config: &SessionConfig, roster: &[String]) -> Vec<(Vec<String>, Vec<Roles>, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rotation_seed);
    let mut order: Vec<usize> = (0..roster.len()).collect();
    order.shuffle(&mut rng);
    order
        .chunks(3)
        .map(|chunk| {
            let members: Vec<String> = chunk.iter().map(|&i| roster[i].clone()).collect();
            let mut turn = members.clone();
            turn.shuffle(&mut rng);
            let mut puzzles = config.puzzles.clone();
            puzzles.shuffle(&mut rng);
            let schedule = (0..puzzles.len())
                .map(|r| Roles {
                    receiver: turn[r % 3].clone(),
                    sender_a: turn[(r + 1) % 3].clone(),
                    sender_b: turn[(r + 2) % 3].clone(),
                })
                .collect();
            (members, schedule, puzzles)
        })
        .collect()
}

impl SessionState {
    fn create(id: &str, config: SessionConfig, roster: Vec<String>, ts: DateTime<Utc>) -> Result<Self, GameError> {
        config.validate()?;
        if roster.is_empty() || roster.len() % 3 != 0 {
            return Err(GameError::RosterSize(roster.len()));
        }
        let mut seen = BTreeSet::new();
        for p in &roster {
            if p.is_empty() || p == ADMIN_ACTOR || !seen.insert(p) {
                return Err(GameError::DuplicatePlayer(p.clone()));
            }
        }
        let groups = form_groups(&config, &roster)
            .into_iter()
            .enumerate()
            .map(|(index, (members, schedule, puzzle_order))| {
                let first = RoundState::new(puzzle_order[0].clone(), schedule[0].clone(), ts);
                GroupState { index, members, schedule, puzzle_order, rounds: vec![first], finished: false }
            })
            .collect();
        Ok(Self { id: id.to_string(), config, roster, groups, last_seq: 1, created_at: ts })
    }

    pub fn group_of(&self, player: &str) -> Option<&GroupState> {
        self.groups.iter().find(|g| g.members.iter().any(|m| m == player))
    }

    pub fn role_of(&self, player: &str) -> Option<Role> {
        let g = self.group_of(player)?;
        if g.finished {
            return None;
        }
        g.current().roles.role_of(player)
    }

    pub fn is_finished(&self) -> bool {
        self.groups.iter().all(|g| g.finished)
    }

    /// True once the current round of `group` has run past its advisory timer.
    pub fn round_overdue(&self, group: usize, now: DateTime<Utc>) -> bool {
        self.groups.get(group).is_some_and(|g| {
            !g.finished && now - g.current().started_at > chrono::Duration::minutes(self.config.round_minutes as i64)
        })
    }

    pub fn legal_actions(&self, player: &str) -> Result<ActionSet, GameError> {
        let g = self.group_of(player).ok_or_else(|| GameError::UnknownPlayer(player.to_string()))?;
        let mut out = Vec::new();
        if g.finished {
            return Ok(out);
        }
        let r = g.current();
        let limit = self.config.responses_per_sender;
        let respond = Action::SendResponse { max_charts: self.config.charts_per_message };
        let followups = || {
            r.roles
                .senders()
                .into_iter()
                .filter(|s| !r.followed_up.contains(*s) && r.response_count(s) < limit)
                .map(|s| Action::SendFollowup { target: s.to_string() })
                .collect::<Vec<_>>()
        };
        let is_receiver = r.roles.receiver == player;
        match r.phase {
            Phase::AwaitQuery if is_receiver => out.push(Action::SendQuery),
            Phase::AwaitFirstResponses if !is_receiver && r.response_count(player) == 0 => out.push(respond),
            Phase::AwaitFollowups if is_receiver => {
                out.extend(followups());
                out.push(Action::SignContract { eligible_winners: r.eligible_winners() });
            }
            Phase::AwaitSecondResponses if is_receiver => out.extend(followups()),
            Phase::AwaitSecondResponses if r.awaiting.contains(player) && r.response_count(player) < limit => {
                out.push(respond)
            }
            Phase::AwaitContract if is_receiver => {
                out.push(Action::SignContract { eligible_winners: r.eligible_winners() })
            }
            _ => {}
        }
        Ok(out)
    }

    pub fn admin_actions(&self) -> ActionSet {
        self.groups
            .iter()
            .filter(|g| !g.finished)
            .map(|g| Action::AdvanceRound { group: g.index })
            .collect()
    }

    /// Builds the record `event` would produce if submitted now.
    pub fn stamp(&self, actor: &str, group: Option<usize>, event: GameEvent, ts: DateTime<Utc>) -> EventRecord {
        let group = group.or_else(|| self.group_of(actor).map(|g| g.index));
        let round = group.and_then(|i| self.groups.get(i)).map(|g| g.current_round());
        EventRecord {
            seq: self.last_seq + 1,
            ts,
            session: self.id.clone(),
            group,
            round,
            actor: actor.to_string(),
            event,
        }
    }
}

impl SessionState {
    /// Applies one stamped record. The state is left untouched on error.
    pub fn apply(&mut self, rec: &EventRecord) -> Result<(), GameError> {
        if rec.seq != self.last_seq + 1 {
            return Err(illegal(IllegalReason::SeqOutOfOrder));
        }
        let limit = self.config.responses_per_sender;
        let cap = self.config.charts_per_message as usize;
        let gi = if rec.actor == ADMIN_ACTOR {
            rec.group.ok_or(illegal(IllegalReason::WrongGroup))?
        } else {
            let g = self.group_of(&rec.actor).ok_or_else(|| GameError::UnknownPlayer(rec.actor.clone()))?;
            if rec.group != Some(g.index) {
                return Err(illegal(IllegalReason::WrongGroup));
            }
            g.index
        };
        let group = self.groups.get(gi).ok_or(GameError::UnknownGroup(gi))?;
        if matches!(rec.event, GameEvent::SessionCreated { .. }) || group.finished {
            return Err(illegal(IllegalReason::WrongPhase));
        }
        if rec.round != Some(group.current_round()) {
            return Err(illegal(IllegalReason::StaleRound));
        }
        let round = group.current();
        let roles = &round.roles;
        let is_receiver = roles.receiver == rec.actor;
        let mut next = round.clone();
        let mut advance = false;
        let message = |kind, to: Vec<String>, text: &str, charts: Vec<ChartSpec>| Message {
            seq: rec.seq,
            ts: rec.ts,
            kind,
            from: rec.actor.clone(),
            to,
            text: text.to_string(),
            charts,
        };
        match &rec.event {
            GameEvent::SessionCreated { .. } => unreachable!(),
            GameEvent::QuerySent { text } => {
                if !is_receiver {
                    return Err(illegal(IllegalReason::WrongActor));
                }
                if round.phase != Phase::AwaitQuery {
                    return Err(illegal(IllegalReason::WrongPhase));
                }
                if text.trim().is_empty() {
                    return Err(illegal(IllegalReason::EmptyMessage));
                }
                let to = vec![roles.sender_a.clone(), roles.sender_b.clone()];
                next.messages.push(message(MessageKind::Query, to, text, Vec::new()));
                next.phase = Phase::AwaitFirstResponses;
            }
            GameEvent::ResponseSent { sender, text, charts } => {
                if !roles.is_sender(&rec.actor) || sender != &rec.actor {
                    return Err(illegal(IllegalReason::WrongActor));
                }
                let count = round.response_count(sender);
                if count >= limit {
                    return Err(illegal(IllegalReason::LimitExceeded));
                }
                if charts.len() > cap {
                    return Err(illegal(IllegalReason::TooManyCharts));
                }
                if text.trim().is_empty() && charts.is_empty() {
                    return Err(illegal(IllegalReason::EmptyMessage));
                }
                match round.phase {
                    Phase::AwaitFirstResponses if count == 0 => {}
                    Phase::AwaitSecondResponses if round.awaiting.contains(sender) => {}
                    _ => return Err(illegal(IllegalReason::WrongPhase)),
                }
                next.responses.insert(sender.clone(), count + 1);
                next.awaiting.remove(sender);
                next.messages.push(message(MessageKind::Response, vec![roles.receiver.clone()], text, charts.clone()));
                if next.phase == Phase::AwaitFirstResponses && next.responses.values().all(|&c| c > 0) {
                    next.phase = Phase::AwaitFollowups;
                } else if next.phase == Phase::AwaitSecondResponses && next.awaiting.is_empty() {
                    next.phase = Phase::AwaitContract;
                }
            }
            GameEvent::FollowupSent { target_sender, text } => {
                if !is_receiver {
                    return Err(illegal(IllegalReason::WrongActor));
                }
                if !roles.is_sender(target_sender) {
                    return Err(illegal(IllegalReason::NotASender));
                }
                if !matches!(round.phase, Phase::AwaitFollowups | Phase::AwaitSecondResponses) {
                    return Err(illegal(IllegalReason::WrongPhase));
                }
                if round.followed_up.contains(target_sender) {
                    return Err(illegal(IllegalReason::DuplicateFollowup));
                }
                if round.response_count(target_sender) >= limit {
                    return Err(illegal(IllegalReason::LimitExceeded));
                }
                if text.trim().is_empty() {
                    return Err(illegal(IllegalReason::EmptyMessage));
                }
                next.followed_up.insert(target_sender.clone());
                next.awaiting.insert(target_sender.clone());
                next.messages.push(message(MessageKind::Followup, vec![target_sender.clone()], text, Vec::new()));
                next.phase = Phase::AwaitSecondResponses;
            }
            GameEvent::ContractSigned { winner, rationale } => {
                if !is_receiver {
                    return Err(illegal(IllegalReason::WrongActor));
                }
                if rationale.trim().is_empty() {
                    return Err(illegal(IllegalReason::EmptyRationale));
                }
                if !roles.is_sender(winner) {
                    return Err(illegal(IllegalReason::NotASender));
                }
                if round.response_count(winner) == 0 {
                    return Err(illegal(IllegalReason::WinnerNeverResponded));
                }
                if !matches!(round.phase, Phase::AwaitFollowups | Phase::AwaitContract) {
                    return Err(illegal(IllegalReason::WrongPhase));
                }
                next.contract = Some(Contract { winner: winner.clone(), rationale: rationale.clone() });
                next.phase = Phase::Complete;
                advance = true;
            }
            GameEvent::RoundAdvanced => {
                if rec.actor != ADMIN_ACTOR {
                    return Err(illegal(IllegalReason::WrongActor));
                }
                let waiting = matches!(
                    round.phase,
                    Phase::AwaitFirstResponses | Phase::AwaitFollowups | Phase::AwaitSecondResponses
                );
                if waiting && !round.eligible_winners().is_empty() {
                    next.phase = Phase::AwaitContract;
                    next.awaiting.clear();
                } else {
                    next.abandoned = true;
                    advance = true;
                }
            }
        }
        let group = &mut self.groups[gi];
        *group.current_mut() = next;
        if advance {
            group.advance(rec.ts);
        }
        self.last_seq = rec.seq;
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("session state serializes")
    }

    pub fn state_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Copy with every player id passed through `f` and timestamps cut to
    /// the minute.
    pub fn relabel(&self, f: impl Fn(&str) -> String) -> SessionState {
        let ids = |v: &[String]| v.iter().map(|s| f(s)).collect::<Vec<_>>();
        let roles = |r: &Roles| Roles { receiver: f(&r.receiver), sender_a: f(&r.sender_a), sender_b: f(&r.sender_b) };
        let mut out = self.clone();
        out.roster = ids(&self.roster);
        out.created_at = to_minute(self.created_at);
        for g in &mut out.groups {
            g.members = ids(&g.members);
            g.schedule = g.schedule.iter().map(roles).collect();
            for r in &mut g.rounds {
                r.roles = roles(&r.roles);
                r.responses = r.responses.iter().map(|(k, v)| (f(k), *v)).collect();
                r.followed_up = r.followed_up.iter().map(|s| f(s)).collect();
                r.awaiting = r.awaiting.iter().map(|s| f(s)).collect();
                r.started_at = to_minute(r.started_at);
                for m in &mut r.messages {
                    m.from = if m.from == ADMIN_ACTOR { m.from.clone() } else { f(&m.from) };
                    m.to = ids(&m.to);
                    m.ts = to_minute(m.ts);
                }
                if let Some(c) = &mut r.contract {
                    c.winner = f(&c.winner);
                }
            }
        }
        out
    }

    /// Hash of the state with players replaced by roster position, so two
    /// states that differ only in player ids hash equal.
    pub fn structure_hash(&self) -> String {
        let pos: BTreeMap<&str, usize> = self.roster.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        let mut s = self.relabel(|p| pos.get(p).map(|i| format!("#{i}")).unwrap_or_else(|| p.to_string()));
        s.id.clear();
        s.state_hash()
    }

    /// Every message of the player's group that the player sent or received.
    pub fn mailbox(&self, player: &str) -> Result<Vec<Message>, GameError> {
        let g = self.group_of(player).ok_or_else(|| GameError::UnknownPlayer(player.to_string()))?;
        Ok(g.rounds
            .iter()
            .flat_map(|r| r.messages.iter())
            .filter(|m| m.from == player || m.to.iter().any(|t| t == player))
            .cloned()
            .collect())
    }

    /// Checks the per-round invariants; returns the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let limit = self.config.responses_per_sender;
        for g in &self.groups {
            let mut receivers: BTreeMap<&str, usize> = BTreeMap::new();
            for roles in g.schedule.iter().take(3) {
                *receivers.entry(&roles.receiver).or_default() += 1;
            }
            if g.schedule.len() >= 3 && (receivers.len() != 3 || receivers.values().any(|&c| c != 1)) {
                return Err(format!("group {}: receiver rotation is uneven", g.index));
            }
            for (ri, r) in g.rounds.iter().enumerate() {
                let at = format!("group {} round {ri}", g.index);
                if r.responses.values().any(|&c| c > limit) {
                    return Err(format!("{at}: response limit exceeded"));
                }
                if r.contract.is_some() != (r.phase == Phase::Complete) {
                    return Err(format!("{at}: contract present iff complete"));
                }
                if let Some(c) = &r.contract {
                    if c.rationale.trim().is_empty() {
                        return Err(format!("{at}: empty rationale"));
                    }
                    if r.response_count(&c.winner) == 0 {
                        return Err(format!("{at}: winner never responded"));
                    }
                }
                let queries: Vec<_> = r.messages.iter().filter(|m| m.kind == MessageKind::Query).collect();
                if queries.len() > 1 || queries.iter().any(|q| q.to.len() != 2) {
                    return Err(format!("{at}: query not delivered once to both senders"));
                }
                if r.messages.windows(2).any(|w| w[0].seq >= w[1].seq) {
                    return Err(format!("{at}: messages out of order"));
                }
                if ri + 1 < g.rounds.len() && r.phase != Phase::Complete && !r.abandoned {
                    return Err(format!("{at}: left open"));
                }
            }
            if !g.finished {
                let r = g.current();
                let anyone = g.members.iter().any(|m| !self.legal_actions(m).unwrap_or_default().is_empty());
                if r.phase != Phase::Complete && !anyone {
                    return Err(format!("group {}: no player can act", g.index));
                }
            }
        }
        Ok(())
    }
}

fn to_minute(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_second(0).and_then(|t| t.with_nanosecond(0)).unwrap_or(ts)
}

/// A live session: the folded state plus the log that produced it.
#[derive(Debug, Clone)]
pub struct Session {
    pub state: SessionState,
    pub log: Vec<EventRecord>,
}

/// Forms groups and fixes role schedules and round order from the rotation seed.
pub fn new_session(id: &str, config: SessionConfig, roster: Vec<String>, ts: DateTime<Utc>) -> Result<Session, GameError> {
    let state = SessionState::create(id, config.clone(), roster.clone(), ts)?;
    let created = EventRecord {
        seq: 1,
        ts,
        session: id.to_string(),
        group: None,
        round: None,
        actor: ADMIN_ACTOR.to_string(),
        event: GameEvent::SessionCreated { config, roster },
    };
    Ok(Session { state, log: vec![created] })
}

impl Session {
    /// Stamps, applies and appends an event. Returns the appended record.
    pub fn submit(
        &mut self,
        actor: &str,
        group: Option<usize>,
        event: GameEvent,
        ts: DateTime<Utc>,
    ) -> Result<&EventRecord, GameError> {
        let rec = self.state.stamp(actor, group, event, ts);
        self.state.apply(&rec)?;
        self.log.push(rec);
        Ok(self.log.last().expect("just pushed"))
    }

    pub fn to_ndjson(&self) -> String {
        to_ndjson(&self.log)
    }
}

pub fn to_ndjson(events: &[EventRecord]) -> String {
    events.iter().map(|e| e.to_line() + "\n").collect()
}

/// Parses a line-delimited log; a malformed line is reported with the seq
/// it should have carried.
pub fn parse_ndjson(text: &str) -> Result<Vec<EventRecord>, GameError> {
    let mut out: Vec<EventRecord> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec = EventRecord::from_line(line).map_err(|e| GameError::CorruptLog {
            seq: out.last().map_or(1, |r| r.seq + 1),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Folds a log from its `SessionCreated` record.
pub fn replay(events: &[EventRecord]) -> Result<SessionState, GameError> {
    let corrupt = |seq, message: String| GameError::CorruptLog { seq, message };
    let first = events.first().ok_or_else(|| corrupt(1, "empty log".into()))?;
    let GameEvent::SessionCreated { config, roster } = &first.event else {
        return Err(corrupt(first.seq, "log does not start with SessionCreated".into()));
    };
    if first.seq != 1 {
        return Err(corrupt(first.seq, "first record must have seq 1".into()));
    }
    let mut state = SessionState::create(&first.session, config.clone(), roster.clone(), first.ts)
        .map_err(|e| corrupt(1, e.to_string()))?;
    for rec in &events[1..] {
        if rec.session != state.id {
            return Err(corrupt(rec.seq, format!("record belongs to session {:?}", rec.session)));
        }
        state.apply(rec).map_err(|e| corrupt(rec.seq, e.to_string()))?;
    }
    Ok(state)
}

/// Seeded pseudonym for a player id.
pub fn pseudonym(player: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(player.as_bytes());
    format!("p-{}", &hex::encode(h.finalize())[..10])
}

/// Replaces player ids with seeded pseudonyms and coarsens timestamps to the
/// minute. Free text is kept verbatim.
pub fn anonymize(events: &[EventRecord], seed: u64) -> Vec<EventRecord> {
    let f = |p: &str| if p == ADMIN_ACTOR { p.to_string() } else { pseudonym(p, seed) };
    events
        .iter()
        .map(|rec| {
            let event = match &rec.event {
                GameEvent::SessionCreated { config, roster } => GameEvent::SessionCreated {
                    config: config.clone(),
                    roster: roster.iter().map(|p| f(p)).collect(),
                },
                GameEvent::ResponseSent { sender, text, charts } => GameEvent::ResponseSent {
                    sender: f(sender),
                    text: text.clone(),
                    charts: charts.clone(),
                },
                GameEvent::FollowupSent { target_sender, text } => GameEvent::FollowupSent {
                    target_sender: f(target_sender),
                    text: text.clone(),
                },
                GameEvent::ContractSigned { winner, rationale } => GameEvent::ContractSigned {
                    winner: f(winner),
                    rationale: rationale.clone(),
                },
                other => other.clone(),
            };
            EventRecord { ts: to_minute(rec.ts), actor: f(&rec.actor), event, ..rec.clone() }
        })
        .collect()
}
