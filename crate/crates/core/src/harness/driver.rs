use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::hintgen::{HintProvider, ProviderError};
use crate::session::{decode, encode, EngineConfig, Message, Role, Session, PROTO_VERSION};

/// Drives a [`Session`] on a simulated clock. Every inbound frame is passed
/// through the wire codec, provider calls are synchronous and their
/// completions are delivered `latency_ms` after the request.
pub struct Driver {
    session: Session,
    provider: Arc<dyn HintProvider>,
    latency_ms: u64,
    scheduled: VecDeque<(u64, u64, Result<String, ProviderError>)>,
    outbound: Vec<Message>,
    provider_time: Duration,
}

impl Driver {
    pub fn new(cfg: EngineConfig, provider: Arc<dyn HintProvider>) -> Self {
        let latency_ms = cfg.provider.mock_latency_ms;
        Self {
            session: Session::new(cfg).with_tick_recording(true),
            provider,
            latency_ms,
            scheduled: VecDeque::new(),
            outbound: Vec::new(),
            provider_time: Duration::ZERO,
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn outbound(&self) -> &[Message] {
        &self.outbound
    }

    pub fn into_parts(self) -> (Session, Vec<Message>) {
        (self.session, self.outbound)
    }

    /// Wall time spent inside provider calls so far.
    pub fn provider_time(&self) -> Duration {
        self.provider_time
    }

    pub fn hello(&mut self, t: u64) {
        self.deliver(Message::Hello {
            t,
            proto_version: PROTO_VERSION,
            role: Role::Driver,
        });
    }

    pub fn deliver(&mut self, msg: Message) {
        self.flush_due(msg.t());
        let wire = encode(&msg);
        let out = match decode(&wire) {
            Ok(m) => self.session.handle_inbound(m),
            Err(e) => vec![Message::error(self.session.now_ms(), "malformed", e.to_string())],
        };
        self.outbound.extend(out);
        self.dispatch();
    }

    /// Delivers due completions, then ticks at `now_ms`.
    pub fn advance(&mut self, now_ms: u64) {
        self.flush_due(now_ms);
        let out = self.session.tick(now_ms);
        self.outbound.extend(out);
        self.dispatch();
    }

    fn flush_due(&mut self, now_ms: u64) {
        while self.scheduled.front().is_some_and(|(due, _, _)| *due <= now_ms) {
            let (due, seq, result) = self.scheduled.pop_front().expect("front checked");
            let out = self.session.complete_request(due, seq, result);
            self.outbound.extend(out);
        }
    }

    fn dispatch(&mut self) {
        for req in self.session.take_requests() {
            let started = Instant::now();
            let result = self.provider.generate(self.session.system_prompt(), &req.window_text);
            self.provider_time += started.elapsed();
            if self.latency_ms == 0 {
                let now = self.session.now_ms();
                let out = self.session.complete_request(now, req.seq, result);
                self.outbound.extend(out);
            } else {
                self.scheduled
                    .push_back((req.issued_at_ms + self.latency_ms, req.seq, result));
            }
        }
    }
}
