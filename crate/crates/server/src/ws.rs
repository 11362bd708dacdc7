use std::sync::Arc;

use axum::extract::ws::{Message as WsMessage, WebSocket};
use disclosure_core::game_core::{GameEvent, ADMIN_ACTOR};
use futures::stream::SplitSink;
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::sync::broadcast::error::RecvError;

use crate::wire::{ClientEnvelope, PushKind, ServerPush, MAX_ENVELOPE_BYTES};
use crate::{App, Principal, ServerError};

type Sink = SplitSink<WebSocket, WsMessage>;

struct Conn {
    app: Arc<App>,
    principal: Principal,
    session: String,
    token: String,
    /// Highest mailbox seq already pushed to this client.
    sent_upto: u64,
}

pub(crate) async fn connection(app: Arc<App>, socket: WebSocket, principal: Principal, session: String, token: String) {
    let Ok(mut updates) = app.subscribe(&session) else {
        return;
    };
    let (mut sink, mut stream) = socket.split();
    let mut conn = Conn { app, principal, session, token, sent_upto: 0 };
    if conn.push_updates(&mut sink).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            incoming = stream.next() => {
                let outcome = match incoming {
                    Some(Ok(WsMessage::Text(text))) => conn.handle_text(&mut sink, &text).await,
                    Some(Ok(WsMessage::Binary(_))) => {
                        conn.push_error(&mut sink, &ServerError::BadRequest("binary frames are not accepted".into()), None).await
                    }
                    Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => Ok(()),
                };
                if outcome.is_err() {
                    break;
                }
            }
            update = updates.recv() => {
                match update {
                    Ok(_) | Err(RecvError::Lagged(_)) => {
                        if conn.push_updates(&mut sink).await.is_err() {
                            break;
                        }
                    }
                    Err(RecvError::Closed) => break,
                }
            }
        }
    }
}

impl Conn {
    async fn send(&self, sink: &mut Sink, kind: PushKind, seq: Option<u64>, payload: Value) -> Result<(), axum::Error> {
        let push = ServerPush { kind, session: self.session.clone(), seq, payload };
        let text = serde_json::to_string(&push).expect("push serializes");
        sink.send(WsMessage::Text(text)).await
    }

    async fn push_error(&self, sink: &mut Sink, err: &ServerError, key: Option<String>) -> Result<(), axum::Error> {
        let (_, mut body) = crate::http::error_body(err);
        body.key = key;
        let payload = serde_json::to_value(body).expect("error serializes");
        self.send(sink, PushKind::Error, None, payload).await
    }

    /// Pushes unseen mailbox entries in seq order, then the state they lead to.
    async fn push_updates(&mut self, sink: &mut Sink) -> Result<(), axum::Error> {
        match &self.principal {
            Principal::Admin => match self.app.admin_state(&self.session).await {
                Ok(state) => {
                    let seq = state["state"]["last_seq"].as_u64();
                    self.send(sink, PushKind::StateUpdate, seq, state).await
                }
                Err(e) => self.push_error(sink, &e, None).await,
            },
            Principal::Player { player, .. } => {
                let player = player.clone();
                match self.app.player_state(&self.session, &player).await {
                    Ok(state) => {
                        for entry in state.mailbox.iter().filter(|e| e.message.seq > self.sent_upto) {
                            let payload = serde_json::to_value(entry).expect("entry serializes");
                            self.send(sink, PushKind::MailboxUpdate, Some(entry.message.seq), payload).await?;
                        }
                        self.sent_upto = state.view.last_seq;
                        let payload = serde_json::to_value(&state.view).expect("view serializes");
                        self.send(sink, PushKind::StateUpdate, Some(state.view.last_seq), payload).await
                    }
                    Err(e) => self.push_error(sink, &e, None).await,
                }
            }
        }
    }

    async fn handle_text(&mut self, sink: &mut Sink, text: &str) -> Result<(), axum::Error> {
        if text.len() > MAX_ENVELOPE_BYTES {
            return self.push_error(sink, &ServerError::TooLarge(text.len()), None).await;
        }
        let env: ClientEnvelope = match serde_json::from_str(text) {
            Ok(env) => env,
            Err(e) => return self.push_error(sink, &ServerError::BadRequest(e.to_string()), None).await,
        };
        let key = env.key.clone();
        if env.token != self.token {
            return self.push_error(sink, &ServerError::Unauthorized, key).await;
        }
        if env.session != self.session {
            let err = ServerError::Forbidden("envelope names another session".into());
            return self.push_error(sink, &err, key).await;
        }
        if env.kind == "sync" {
            self.sent_upto = 0;
            return self.push_updates(sink).await;
        }
        let actor = match &self.principal {
            Principal::Admin => ADMIN_ACTOR.to_string(),
            Principal::Player { player, .. } => player.clone(),
        };
        let event = match build_event(&env, &actor) {
            Ok(ev) => ev,
            Err(e) => return self.push_error(sink, &e, key).await,
        };
        match self.app.submit(&self.session, &actor, env.group, event, key.clone()).await {
            Ok(Some(_)) => Ok(()),
            Ok(None) => self.push_updates(sink).await,
            Err(e) => self.push_error(sink, &e, key).await,
        }
    }
}

fn build_event(env: &ClientEnvelope, actor: &str) -> Result<GameEvent, ServerError> {
    let mut payload = match &env.payload {
        Value::Object(m) => m.clone(),
        Value::Null => serde_json::Map::new(),
        _ => return Err(ServerError::BadRequest("payload must be an object".into())),
    };
    if env.kind == "ResponseSent" && !payload.contains_key("sender") {
        payload.insert("sender".into(), Value::String(actor.to_string()));
    }
    payload.insert("type".into(), Value::String(env.kind.clone()));
    serde_json::from_value(Value::Object(payload)).map_err(|e| ServerError::BadRequest(e.to_string()))
}
