//! Live-server harness shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use disclosure_server::config::GenerateSpec;
use disclosure_server::{spawn, App, ServerConfig};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub const ADMIN: &str = "admin-token-for-tests";
pub const PUZZLES: [&str; 3] = ["peaks_gaps-7", "outliers_points-7", "saturation_locations-7"];
pub const ROSTER: [&str; 3] = ["ana", "bo", "cy"];

const PUSH_TIMEOUT: Duration = Duration::from_secs(5);

pub fn config(data_dir: &Path) -> ServerConfig {
    let mut c = ServerConfig::new(data_dir, ADMIN);
    c.bind = "127.0.0.1:0".parse().expect("loopback address");
    c.generate = PUZZLES
        .iter()
        .map(|id| {
            let (template, seed) = id.rsplit_once('-').expect("template-seed id");
            GenerateSpec { template: template.into(), seed: seed.parse().expect("numeric seed") }
        })
        .collect();
    c
}

/// One chart a sender would plausibly send for each puzzle.
pub fn chart_for(puzzle: &str) -> Value {
    let spec = match puzzle.rsplit_once('-').map(|p| p.0) {
        Some("peaks_gaps") => {
            r#"{"mark":"point","transforms":[{"op":"aggregate","groupby":["zone"],"ops":[
            {"op":"min","field":"pollutant_ppb","as":"min_ppb"},
            {"op":"max","field":"pollutant_ppb","as":"max_ppb"},
            {"op":"mean","field":"pollutant_ppb","as":"mean_ppb"}]}],
            "encoding":{"x":{"field":"zone"},"y":{"field":"max_ppb"}}}"#
        }
        Some("outliers_points") => r#"{"mark":"boxplot","encoding":{"y":{"field":"avg_daily_parcels"}}}"#,
        _ => r#"{"mark":"bar","encoding":{"x":{"field":"regions"},"y":{"aggregate":"count"}}}"#,
    };
    serde_json::from_str(spec).expect("fixture spec is json")
}

pub struct Live {
    pub addr: SocketAddr,
    pub app: Arc<App>,
    pub http: reqwest::Client,
    pub data_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or(Value::Null)
    }
}

impl Live {
    pub async fn start(data_dir: &Path) -> Live {
        Live::with_config(config(data_dir)).await
    }

    pub async fn with_config(config: ServerConfig) -> Live {
        let data_dir = config.data_dir.clone();
        let (addr, app) = spawn(config).await.expect("server starts");
        Live { addr, app, http: reqwest::Client::new(), data_dir }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    async fn send(&self, req: reqwest::RequestBuilder, token: Option<&str>) -> Reply {
        let req = match token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req.send().await.expect("http round trip");
        let status = resp.status().as_u16();
        Reply { status, body: resp.text().await.expect("body reads") }
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> Reply {
        self.send(self.http.get(self.url(path)), token).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: &Value) -> Reply {
        self.send(self.http.post(self.url(path)).json(body), token).await
    }

    /// Creates a session over HTTP and returns each player's join code.
    pub async fn create_session(&self, id: &str, roster: &[&str], puzzles: &[&str], seed: u64) -> BTreeMap<String, String> {
        let body = json!({
            "id": id,
            "config": { "puzzles": puzzles, "rotation_seed": seed },
            "roster": roster,
        });
        let r = self.post("/sessions", Some(ADMIN), &body).await;
        assert_eq!(r.status, 201, "create session: {}", r.body);
        serde_json::from_value(r.json()["codes"].clone()).expect("codes map")
    }

    pub async fn join(&self, session: &str, code: &str) -> Value {
        let r = self.post(&format!("/sessions/{session}/join"), None, &json!({ "code": code })).await;
        assert_eq!(r.status, 200, "join: {}", r.body);
        r.json()
    }

    /// Creates a session and joins every player, returning their tokens.
    pub async fn seated(&self, id: &str, seed: u64) -> BTreeMap<String, String> {
        let codes = self.create_session(id, &ROSTER, &PUZZLES, seed).await;
        let mut tokens = BTreeMap::new();
        for (player, code) in codes {
            let grant = self.join(id, &code).await;
            tokens.insert(player, grant["token"].as_str().expect("token").to_string());
        }
        tokens
    }

    pub async fn connect(&self, session: &str, token: &str) -> Client {
        let url = format!("ws://{}/ws?token={token}&session={session}", self.addr);
        let (ws, _) = connect_async(url).await.expect("websocket connects");
        Client { ws, session: session.into(), token: token.into(), view: Value::Null, mailbox: BTreeMap::new() }
    }

    /// Connects every token and waits for each first state update.
    pub async fn connect_all(&self, session: &str, tokens: &BTreeMap<String, String>) -> Vec<Client> {
        let mut out = Vec::new();
        for token in tokens.values() {
            let mut c = self.connect(session, token).await;
            c.until_seq(0).await.expect("first state arrives");
            out.push(c);
        }
        out
    }

    pub async fn admin_state(&self, session: &str) -> Value {
        let r = self.get(&format!("/sessions/{session}/state"), Some(ADMIN)).await;
        assert_eq!(r.status, 200, "admin state: {}", r.body);
        r.json()
    }
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    pub session: String,
    pub token: String,
    /// Latest state_update payload.
    pub view: Value,
    /// Mailbox entries by seq.
    pub mailbox: BTreeMap<u64, Value>,
}

impl Client {
    pub async fn send_text(&mut self, text: String) {
        self.ws.send(Message::Text(text)).await.expect("websocket send");
    }

    pub async fn send(&mut self, kind: &str, payload: Value, key: Option<&str>) {
        let mut env = json!({ "type": kind, "session": self.session, "token": self.token, "payload": payload });
        if let Some(k) = key {
            env["key"] = json!(k);
        }
        self.send_text(env.to_string()).await;
    }

    /// Next server push, recording state and mailbox updates as they pass.
    pub async fn next_push(&mut self) -> Value {
        loop {
            let msg = tokio::time::timeout(PUSH_TIMEOUT, self.ws.next())
                .await
                .expect("push arrives in time")
                .expect("socket open")
                .expect("frame reads");
            let Message::Text(text) = msg else { continue };
            let push: Value = serde_json::from_str(&text).expect("push is json");
            match push["type"].as_str() {
                Some("state_update") => self.view = push["payload"].clone(),
                Some("mailbox_update") => {
                    self.mailbox.insert(push["seq"].as_u64().unwrap_or(0), push["payload"].clone());
                }
                _ => {}
            }
            return push;
        }
    }

    /// Reads until a state update at `seq` or later. An error push ends the wait.
    pub async fn until_seq(&mut self, seq: u64) -> Result<Value, Value> {
        if !self.view.is_null() && self.seq() >= seq {
            return Ok(self.view.clone());
        }
        loop {
            let push = self.next_push().await;
            match push["type"].as_str() {
                Some("error") => return Err(push),
                Some("state_update") if push["seq"].as_u64().unwrap_or(0) >= seq => return Ok(push),
                _ => {}
            }
        }
    }

    pub async fn until_error(&mut self) -> Value {
        loop {
            let push = self.next_push().await;
            if push["type"] == "error" {
                return push;
            }
        }
    }

    pub fn seq(&self) -> u64 {
        self.view["last_seq"].as_u64().unwrap_or(0)
    }

    pub fn player(&self) -> String {
        self.view["player"].as_str().unwrap_or_default().to_string()
    }

    pub fn legal(&self) -> Vec<Value> {
        self.view["legal_actions"].as_array().cloned().unwrap_or_default()
    }

    pub fn finished(&self) -> bool {
        self.view["finished"].as_bool().unwrap_or(false)
    }

    pub fn role(&self) -> Option<String> {
        self.view["role"].as_str().map(str::to_string)
    }

    pub fn puzzle(&self) -> Option<String> {
        self.view["puzzle"]["id"].as_str().map(str::to_string)
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// Index of the client holding `role` in its current round.
pub fn by_role(clients: &[Client], role: &str) -> usize {
    clients.iter().position(|c| c.role().as_deref() == Some(role)).expect("role is seated")
}

#[derive(Debug, Default)]
pub struct PlayStats {
    pub events: usize,
    pub followups: usize,
    pub downloads: usize,
    pub previews: usize,
    pub matrix: Vec<MatrixCell>,
}

#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub round: u64,
    pub principal: String,
    pub endpoint: &'static str,
    pub status: u16,
    pub expected: Vec<u16>,
    pub leaked: bool,
}

impl MatrixCell {
    pub fn ok(&self) -> bool {
        self.expected.contains(&self.status) && !self.leaked
    }
}

fn rank(action: &Value) -> u8 {
    match action["action"].as_str() {
        Some("send_response") => 0,
        Some("send_query") => 1,
        Some("send_followup") => 2,
        _ => 3,
    }
}

/// Dataset rows that must never reach a receiver: the header and a sample of lines.
fn fingerprints(live: &Live, puzzle: &str) -> Vec<String> {
    let csv = live.app.puzzle(puzzle).expect("puzzle in catalog").dataset.to_csv();
    csv.lines().take(40).map(str::to_string).collect()
}

/// Probes every endpoint with every principal for the clients' current round.
pub async fn access_matrix(live: &Live, session: &str, clients: &[Client], round: u64) -> Vec<MatrixCell> {
    let Some(puzzle) = clients.iter().find_map(Client::puzzle) else { return Vec::new() };
    let prints = fingerprints(live, &puzzle);
    let mut principals: Vec<(String, Option<String>, &str)> = clients
        .iter()
        .map(|c| {
            let role = c.view["role"].as_str().unwrap_or("none");
            (format!("{role}:{}", c.player()), Some(c.token.clone()), if role == "receiver" { "receiver" } else { "sender" })
        })
        .collect();
    principals.push(("admin".into(), Some(ADMIN.into()), "admin"));
    principals.push(("anonymous".into(), None, "anonymous"));
    principals.push(("bogus".into(), Some("not-a-token".into()), "anonymous"));
    let mut cells = Vec::new();
    for (name, token, kind) in principals {
        let t = token.as_deref();
        let probes: Vec<(&'static str, Reply, Vec<u16>)> = vec![
            (
                "GET dataset.csv",
                live.get(&format!("/puzzles/{puzzle}/dataset.csv"), t).await,
                match kind {
                    "sender" => vec![200],
                    "anonymous" => vec![401],
                    _ => vec![403],
                },
            ),
            (
                "POST preview",
                live.post("/preview", t, &json!({ "puzzle": puzzle, "spec": chart_for(&puzzle) })).await,
                match kind {
                    "sender" => vec![200],
                    "anonymous" => vec![401],
                    _ => vec![403],
                },
            ),
            (
                "GET state",
                live.get(&format!("/sessions/{session}/state"), t).await,
                if kind == "anonymous" { vec![401] } else { vec![200] },
            ),
            (
                "GET export",
                live.get(&format!("/sessions/{session}/export"), t).await,
                match kind {
                    "admin" => vec![200],
                    "anonymous" => vec![401],
                    _ => vec![403],
                },
            ),
            (
                "POST score",
                live.post(&format!("/sessions/{session}/score"), t, &json!({ "group": 0, "round": 0 })).await,
                match kind {
                    "admin" => vec![200, 409],
                    "anonymous" => vec![401],
                    _ => vec![403],
                },
            ),
            (
                "POST sessions",
                live.post("/sessions", t, &json!({ "config": { "puzzles": [puzzle] }, "roster": ["x", "y", "z"] })).await,
                match kind {
                    "admin" => vec![201],
                    "anonymous" => vec![401],
                    _ => vec![403],
                },
            ),
        ];
        for (endpoint, reply, expected) in probes {
            let leaked = kind != "sender" && prints.iter().any(|p| reply.body.contains(p.as_str()));
            cells.push(MatrixCell { round, principal: name.clone(), endpoint, status: reply.status, expected, leaked });
        }
    }
    cells
}

/// Drives three connected players through every round of `session`. One
/// player acts at a time and only on a state at the latest seq. Senders
/// download the dataset and preview before answering. The receiver follows
/// up once in the second round. Probes the access matrix at each new round.
pub async fn play_through(live: &Live, session: &str, clients: &mut [Client]) -> Result<PlayStats, String> {
    let mut stats = PlayStats::default();
    let mut seq = live.admin_state(session).await["state"]["last_seq"].as_u64().unwrap_or(0);
    let mut probed_round = None;
    for _ in 0..200 {
        for c in clients.iter_mut() {
            c.until_seq(seq).await.map_err(|e| format!("while syncing: {e}"))?;
        }
        if clients.iter().all(Client::finished) {
            return Ok(stats);
        }
        let round = clients[0].view["round"].as_u64().unwrap_or(0);
        if probed_round != Some(round) {
            stats.matrix.extend(access_matrix(live, session, clients, round).await);
            probed_round = Some(round);
        }
        let Some((who, action)) = clients
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.legal().into_iter().map(move |a| (i, a)))
            .min_by_key(|(i, a)| (rank(a), *i))
        else {
            return Err(format!("nobody can act at seq {seq}"));
        };
        let c = &mut clients[who];
        let puzzle = c.puzzle().ok_or("acting player has no puzzle")?;
        let (kind, payload) = match action["action"].as_str() {
            Some("send_query") => ("QuerySent", json!({ "text": "What does the distribution look like?" })),
            Some("send_response") => {
                let csv = live.get(&format!("/puzzles/{puzzle}/dataset.csv"), Some(&c.token)).await;
                if csv.status != 200 {
                    return Err(format!("sender download failed: {}", csv.body));
                }
                stats.downloads += 1;
                let spec = chart_for(&puzzle);
                let pv = live.post("/preview", Some(&c.token), &json!({ "puzzle": puzzle, "spec": spec })).await;
                if pv.status != 200 {
                    return Err(format!("sender preview failed: {}", pv.body));
                }
                stats.previews += 1;
                ("ResponseSent", json!({ "text": "Here is a summary.", "charts": [spec] }))
            }
            _ => {
                let followup = c.legal().into_iter().find(|a| a["action"] == "send_followup");
                match followup {
                    Some(f) if round == 1 && stats.followups == 0 => {
                        stats.followups += 1;
                        ("FollowupSent", json!({ "target_sender": f["target"], "text": "Can you say more?" }))
                    }
                    _ => {
                        let sign = c
                            .legal()
                            .into_iter()
                            .find(|a| a["action"] == "sign_contract")
                            .ok_or_else(|| format!("receiver has no contract action: {}", c.view))?;
                        let winner = sign["eligible_winners"][0].clone();
                        ("ContractSigned", json!({ "winner": winner, "rationale": "Clearest answer to my question." }))
                    }
                }
            }
        };
        let key = format!("{}-{seq}", c.player());
        c.send(kind, payload, Some(&key)).await;
        c.until_seq(seq + 1).await.map_err(|e| format!("{kind} rejected: {e}"))?;
        seq += 1;
        stats.events += 1;
    }
    Err("session did not finish in 200 steps".into())
}
