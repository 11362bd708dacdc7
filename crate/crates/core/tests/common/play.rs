//! Random legal play driven by `legal_actions`, plus the three canonical
//! illegal events.

use chrono::{DateTime, Duration, TimeZone, Utc};
use disclosure_core::chart_spec::{ChartSpec, Channel, Encoding, MarkType};
use disclosure_core::game_core::{
    new_session, parse_ndjson, replay, to_ndjson, Action, GameError, GameEvent, Session, SessionConfig, ADMIN_ACTOR,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 4, 9, 0, 0).unwrap()
}

fn chart(rng: &mut ChaCha8Rng) -> ChartSpec {
    let mark = *[MarkType::Point, MarkType::Bar, MarkType::Tick].choose(rng).unwrap();
    ChartSpec::new(mark).encode(Channel::X, Encoding::field("pollutant_ppb"))
}

fn words(rng: &mut ChaCha8Rng) -> String {
    let pool = ["where", "are", "the", "peaks", "?", "see chart", "zone North", "thanks", "gap"];
    (0..rng.gen_range(1..6)).map(|_| *pool.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Turns a legal action into a concrete event.
pub fn event_for(action: &Action, actor: &str, rng: &mut ChaCha8Rng) -> GameEvent {
    match action {
        Action::SendQuery => GameEvent::QuerySent { text: words(rng) },
        Action::SendResponse { max_charts } => {
            let n = rng.gen_range(0..=*max_charts);
            let charts = (0..n).map(|_| chart(rng)).collect::<Vec<_>>();
            let text = if charts.is_empty() { words(rng) } else { String::new() };
            GameEvent::ResponseSent { sender: actor.to_string(), text, charts }
        }
        Action::SendFollowup { target } => GameEvent::FollowupSent { target_sender: target.clone(), text: words(rng) },
        Action::SignContract { eligible_winners } => GameEvent::ContractSigned {
            winner: eligible_winners.choose(rng).cloned().unwrap_or_default(),
            rationale: words(rng),
        },
        Action::AdvanceRound { .. } => GameEvent::RoundAdvanced,
    }
}

pub fn roster(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("player{i}")).collect()
}

pub fn fresh(seed: u64, players: usize) -> Session {
    let cfg = SessionConfig::new(vec!["p1".into(), "p2".into(), "p3".into()], seed);
    new_session(&format!("sess-{seed}"), cfg, roster(players), start()).expect("valid session")
}

/// One random legal step. Returns false once nobody can act.
pub fn step(s: &mut Session, rng: &mut ChaCha8Rng, clock: &mut DateTime<Utc>) -> bool {
    let mut options: Vec<(String, Option<usize>, Action)> = Vec::new();
    for p in s.state.roster.clone() {
        for a in s.state.legal_actions(&p).expect("roster member") {
            options.push((p.clone(), None, a));
        }
    }
    if options.is_empty() || rng.gen_bool(0.02) {
        for a in s.state.admin_actions() {
            if let Action::AdvanceRound { group } = a {
                options.push((ADMIN_ACTOR.to_string(), Some(group), a));
            }
        }
    }
    let Some((actor, group, action)) = options.choose(rng).cloned() else {
        return false;
    };
    *clock += Duration::seconds(rng.gen_range(1..90));
    let ev = event_for(&action, &actor, rng);
    s.submit(&actor, group, ev, *clock).unwrap_or_else(|e| panic!("legal action {action:?} by {actor} rejected: {e}"));
    true
}

pub fn play(seed: u64, players: usize, max_steps: usize) -> Session {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut s = fresh(seed, players);
    let mut clock = start();
    for _ in 0..max_steps {
        if !step(&mut s, &mut rng, &mut clock) {
            break;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Illegal {
    ThirdResponse,
    ContractForSilentSender,
    EmptyRationale,
}

/// Builds the illegal event if the current state of `group` admits it.
pub fn illegal_event(s: &Session, group: usize, kind: Illegal) -> Option<(String, GameEvent)> {
    let g = &s.state.groups[group];
    if g.finished {
        return None;
    }
    let r = g.current();
    let limit = s.state.config.responses_per_sender;
    match kind {
        Illegal::ThirdResponse => r.roles.senders().into_iter().find(|x| r.response_count(x) >= limit).map(|x| {
            let ev = GameEvent::ResponseSent { sender: x.to_string(), text: "one more".into(), charts: vec![] };
            (x.to_string(), ev)
        }),
        Illegal::ContractForSilentSender => {
            r.roles.senders().into_iter().find(|x| r.response_count(x) == 0).map(|x| {
                let ev = GameEvent::ContractSigned { winner: x.to_string(), rationale: "looked fine".into() };
                (r.roles.receiver.clone(), ev)
            })
        }
        Illegal::EmptyRationale => {
            let winner = r.eligible_winners().first().cloned().unwrap_or_else(|| r.roles.sender_a.clone());
            Some((r.roles.receiver.clone(), GameEvent::ContractSigned { winner, rationale: "  ".into() }))
        }
    }
}

/// Submits the event and reports whether it was rejected without changing state.
pub fn rejected(s: &mut Session, actor: &str, ev: GameEvent) -> bool {
    let before = s.state.state_hash();
    let len = s.log.len();
    let res: Result<_, GameError> = s.submit(actor, None, ev, start() + Duration::hours(5)).map(|_| ());
    res.is_err() && s.state.state_hash() == before && s.log.len() == len
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Injections {
    pub attempted: usize,
    pub rejected: usize,
}

/// Plays one random legal sequence, checking invariants after every step
/// and injecting each canonical illegal event whenever the state admits it.
/// Ends by checking replay hash equality and the serialize/replay fixed point.
pub fn audited_run(seed: u64) -> Result<Injections, String> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let players = [3, 6, 9][(seed % 3) as usize];
    let mut s = fresh(seed, players);
    let mut clock = start();
    let mut inj = Injections::default();
    for _ in 0..400 {
        if rng.gen_bool(0.3) {
            let group = rng.gen_range(0..s.state.groups.len());
            for kind in [Illegal::ThirdResponse, Illegal::ContractForSilentSender, Illegal::EmptyRationale] {
                if let Some((actor, ev)) = illegal_event(&s, group, kind) {
                    inj.attempted += 1;
                    inj.rejected += rejected(&mut s, &actor, ev) as usize;
                }
            }
        }
        if !step(&mut s, &mut rng, &mut clock) {
            break;
        }
        s.state.check_invariants().map_err(|e| format!("seed {seed} after seq {}: {e}", s.state.last_seq))?;
    }
    let replayed = replay(&s.log).map_err(|e| format!("seed {seed}: replay failed: {e}"))?;
    if replayed.state_hash() != s.state.state_hash() {
        return Err(format!("seed {seed}: replay hash differs"));
    }
    let text = to_ndjson(&s.log);
    let reparsed = parse_ndjson(&text).map_err(|e| format!("seed {seed}: {e}"))?;
    if to_ndjson(&reparsed) != text || replay(&reparsed).map(|r| r.state_hash()).ok() != Some(replayed.state_hash()) {
        return Err(format!("seed {seed}: serialize/replay is not a fixed point"));
    }
    Ok(inj)
}
