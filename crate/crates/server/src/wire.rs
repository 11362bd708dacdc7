//! Payloads exchanged with clients over HTTP and the websocket channel.

use disclosure_core::game_core::{Action, Message, Phase, Role};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Largest websocket envelope accepted from a client.
pub const MAX_ENVELOPE_BYTES: usize = 256 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub can_download_dataset: bool,
    pub can_preview: bool,
}

impl Capabilities {
    pub fn for_role(role: Option<Role>) -> Self {
        let sender = role.is_some_and(Role::is_sender);
        Self { can_download_dataset: sender, can_preview: sender }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinGrant {
    pub session: String,
    pub player: String,
    pub role: Option<Role>,
    pub token: String,
    pub capabilities: Capabilities,
}

/// What a player is told about the puzzle of their current round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuzzleBrief {
    pub id: String,
    pub title: String,
    pub setting: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MailboxEntry {
    #[serde(flatten)]
    pub message: Message,
    /// Client form of each chart, evaluated on the round's dataset.
    pub rendered: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerView {
    pub session: String,
    pub player: String,
    pub group: usize,
    pub round: usize,
    pub rounds_total: usize,
    pub finished: bool,
    pub phase: Phase,
    pub role: Option<Role>,
    pub capabilities: Capabilities,
    pub legal_actions: Vec<Action>,
    pub puzzle: Option<PuzzleBrief>,
    pub round_overdue: bool,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerState {
    #[serde(flatten)]
    pub view: PlayerView,
    pub mailbox: Vec<MailboxEntry>,
}

/// Client to server. `payload` carries the fields of the named game event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEnvelope {
    #[serde(rename = "type")]
    pub kind: String,
    pub session: String,
    pub token: String,
    /// Idempotency key; a repeated key is never applied twice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    /// Target group for admin events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerPush {
    #[serde(rename = "type")]
    pub kind: PushKind,
    pub session: String,
    pub seq: Option<u64>,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushKind {
    StateUpdate,
    MailboxUpdate,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChart {
    pub seq: u64,
    pub sender: String,
    pub chart_index: usize,
    pub card: disclosure_core::signal_rubric::ScoreCard,
}
