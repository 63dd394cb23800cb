//! Agent-side protocol endpoint. The agent listens; the controller connects
//! (one inbound port per service). Commands are serviced serially per
//! session; events and heartbeats stream from a separate pump thread so
//! event consumption never blocks command replies.

use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::injection::{Agent, AgentEvent};
use crate::protocol::wire::{
    encode, read_message, Body, EventPayload, FrameError, Message, QueryWhat, ReportPayload,
    PROTOCOL_VERSION,
};
use crate::telemetry::sample_self;

#[derive(Clone)]
pub struct ServerOptions {
    pub agent_name: String,
    pub heartbeat_interval: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            agent_name: "agent".to_string(),
            heartbeat_interval: Duration::from_secs(5),
        }
    }
}

pub struct AgentServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl AgentServer {
    /// Bind and start serving sessions in the background.
    pub fn bind(addr: &str, agent: Agent, opts: ServerOptions) -> std::io::Result<AgentServer> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        {
            let stop = stop.clone();
            std::thread::spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                match listener.accept() {
                    Ok((stream, _)) => {
                        let agent = agent.clone();
                        let opts = opts.clone();
                        std::thread::spawn(move || {
                            let _ = serve_session(stream, agent, opts);
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(20));
                    }
                    Err(_) => break,
                }
            });
        }
        Ok(AgentServer { local_addr, stop })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

impl Drop for AgentServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn send(writer: &Mutex<TcpStream>, message: &Message) -> Result<(), FrameError> {
    let frame = encode(message)?;
    let mut stream = writer.lock().unwrap();
    stream.write_all(&frame)?;
    stream.flush()?;
    Ok(())
}

fn serve_session(stream: TcpStream, agent: Agent, opts: ServerOptions) -> Result<(), FrameError> {
    let mut reader = stream.try_clone()?;
    let writer = Arc::new(Mutex::new(stream));

    // HELLO exchange; version mismatch aborts the session
    let hello = read_message(&mut reader)?;
    match hello.body {
        Body::Hello { .. } if hello.version == PROTOCOL_VERSION => {
            send(
                &writer,
                &Message::new(hello.correlation_id, Body::Hello { peer: opts.agent_name.clone() }),
            )?;
        }
        _ => {
            send(
                &writer,
                &Message::new(
                    hello.correlation_id,
                    Body::Error { message: format!("expected HELLO v{PROTOCOL_VERSION}") },
                ),
            )?;
            return Ok(());
        }
    }

    // full point list, server-initiated with correlation 0
    send(
        &writer,
        &Message::new(0, Body::RegisterPoints { points: agent.points() }),
    )?;

    // event + heartbeat pump
    let session_open = Arc::new(AtomicBool::new(true));
    {
        let events = agent.subscribe();
        let writer = writer.clone();
        let session_open = session_open.clone();
        let interval = opts.heartbeat_interval;
        std::thread::spawn(move || {
            let mut seq = 0u64;
            let mut next_beat = std::time::Instant::now() + interval;
            loop {
                if !session_open.load(Ordering::Relaxed) {
                    break;
                }
                if std::time::Instant::now() >= next_beat {
                    seq += 1;
                    if send(
                        &writer,
                        &Message::new(0, Body::Event { event: EventPayload::Heartbeat { seq } }),
                    )
                    .is_err()
                    {
                        break;
                    }
                    next_beat = std::time::Instant::now() + interval;
                }
                let wait = next_beat
                    .saturating_duration_since(std::time::Instant::now())
                    .min(Duration::from_millis(100));
                let payload = match events.recv_timeout(wait) {
                    Ok(AgentEvent::Injection(injection)) => {
                        Some(EventPayload::Injection { injection })
                    }
                    Ok(AgentEvent::Warning { message, .. }) => {
                        Some(EventPayload::Warning { message })
                    }
                    Ok(AgentEvent::Entry { .. }) => None,
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                };
                if let Some(event) = payload {
                    if send(&writer, &Message::new(0, Body::Event { event })).is_err() {
                        break;
                    }
                }
            }
        });
    }

    // command loop: exactly one REPORT or ERROR per command correlation_id
    let result = loop {
        let msg = match read_message(&mut reader) {
            Ok(m) => m,
            Err(FrameError::Malformed(e)) => {
                send(&writer, &Message::new(0, Body::Error { message: e }))?;
                continue;
            }
            Err(e) => break Err(e),
        };
        let corr = msg.correlation_id;
        let reply = match msg.body {
            Body::Activate { point_id, duration_ms } => {
                match agent.set_active(&point_id, true, Duration::from_millis(duration_ms)) {
                    Ok(state) => Body::Report { result: ReportPayload::Ack { point_id, state } },
                    Err(e) => Body::Error { message: e.to_string() },
                }
            }
            Body::Deactivate { point_id } => {
                match agent.set_active(&point_id, false, Duration::ZERO) {
                    Ok(state) => Body::Report { result: ReportPayload::Ack { point_id, state } },
                    Err(e) => Body::Error { message: e.to_string() },
                }
            }
            Body::Query { what: QueryWhat::Counters { point_id } } => match point_id {
                Some(id) => match agent.snapshot_counters(&id) {
                    Ok(state) => Body::Report {
                        result: ReportPayload::Counters { counters: vec![(id, state)] },
                    },
                    Err(e) => Body::Error { message: e.to_string() },
                },
                None => Body::Report {
                    result: ReportPayload::Counters { counters: agent.snapshot_all() },
                },
            },
            Body::Query { what: QueryWhat::Metrics } => match sample_self() {
                Ok(snapshot) => Body::Report { result: ReportPayload::Metrics { snapshot } },
                Err(e) => Body::Error { message: e.to_string() },
            },
            Body::Bye => break Ok(()),
            other => Body::Error { message: format!("unexpected message: {other:?}") },
        };
        send(&writer, &Message::new(corr, reply))?;
    };
    session_open.store(false, Ordering::Relaxed);
    result
}
