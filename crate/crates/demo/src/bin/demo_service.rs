//! Request/response demo target: a line-JSON service (one JSON request line
//! in, one JSON response line out, one connection per request). Four
//! instrumented recovery blocks cover the reaction categories for the
//! request/response domain:
//!
//! - catalog/load_cache (CacheMiss): recovery rebuilds the catalog from
//!   source, byte-identical — resilient.
//! - auth/check_session (SessionStoreDown): recovery logs a warning and
//!   redirects to login (302) — observable and debuggable.
//! - pricing/load_options (OptionsUnavailable): recovery serves the quote
//!   with the options list empty, same status, no log — silent.
//! - search/index_query (IndexTimeout): recovery logs a warning and serves
//!   degraded, empty results with the same status — debuggable only.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use chaos_core::injection::{InjectionDecision, PointId};
use chaos_demo::{Instrumentation, Probes};
use serde_json::{json, Value};

struct Points {
    cache: Option<PointId>,
    auth: Option<PointId>,
    pricing: Option<PointId>,
    search: Option<PointId>,
}

struct Args {
    no_agent: bool,
    permute_options: bool,
}

fn parse_args() -> Args {
    let mut args = Args {
        no_agent: false,
        permute_options: false,
    };
    let mut it = std::env::args().skip(1);
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--no-agent" => args.no_agent = true,
            "--mutate" => match it.next().as_deref() {
                Some("permute-options") => args.permute_options = true,
                other => die(&format!("unknown mutation {other:?}")),
            },
            other => die(&format!("unknown argument {other:?}")),
        }
    }
    args
}

fn die(msg: &str) -> ! {
    eprintln!("demo-service: {msg}");
    std::process::exit(64);
}

fn handle(
    stream: TcpStream,
    instr: &Instrumentation,
    probes: &Probes,
    points: &Points,
    permute_options: bool,
) {
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut line = String::new();
    if reader.read_line(&mut line).is_err() {
        return;
    }
    let request: Value = match serde_json::from_str(line.trim()) {
        Ok(v) => v,
        Err(_) => return,
    };
    let path = request["path"].as_str().unwrap_or("");

    let (status, body) = match path {
        "/catalog" => match instr.enter(&points.cache) {
            InjectionDecision::Proceed => {
                probes.hit("catalog.load_cache");
                ("200", json!({"items": ["alpha", "beta", "gamma"]}))
            }
            InjectionDecision::Raise(_miss) => {
                // recovery: rebuild the catalog from source; same content
                ("200", json!({"items": ["alpha", "beta", "gamma"]}))
            }
        },
        "/account" => match instr.enter(&points.auth) {
            InjectionDecision::Proceed => {
                probes.hit("auth.check_session");
                ("200", json!({"account": "ok", "user": "demo"}))
            }
            InjectionDecision::Raise(e) => {
                // recovery: can't verify the session, send the user to login
                eprintln!("warn: {} during session check: {}", e.kind, e.message);
                ("302", json!({"redirect": "/login"}))
            }
        },
        "/quote" => match instr.enter(&points.pricing) {
            InjectionDecision::Proceed => {
                probes.hit("pricing.load_options");
                let options = if permute_options {
                    json!([14, 1])
                } else {
                    json!([1, 14])
                };
                ("200", json!({"options": options, "price": 17}))
            }
            InjectionDecision::Raise(_unavailable) => {
                // recovery: serve the quote without optional extras and tell
                // no one
                ("200", json!({"options": [], "price": 17}))
            }
        },
        "/search" => match instr.enter(&points.search) {
            InjectionDecision::Proceed => {
                probes.hit("search.index_query");
                ("200", json!({"results": ["alpha", "beta", "gamma"], "total": 3}))
            }
            InjectionDecision::Raise(e) => {
                // recovery: degrade to empty results but keep the page up
                eprintln!("warn: {} during index query: {}", e.kind, e.message);
                ("200", json!({"results": [], "total": 0}))
            }
        },
        _ => ("404", json!({"error": "not found"})),
    };

    let mut writer = stream;
    let response = json!({"status": status, "body": body});
    let _ = writer.write_all(response.to_string().as_bytes());
    let _ = writer.write_all(b"\n");
    let _ = writer.flush();
}

fn main() {
    let args = parse_args();
    let addr = std::env::var("CHAOS_SERVICE_ADDR")
        .unwrap_or_else(|_| die("CHAOS_SERVICE_ADDR must be set"));
    let probes = Arc::new(Probes::new(&[
        "catalog.load_cache",
        "auth.check_session",
        "pricing.load_options",
        "search.index_query",
    ]));
    let instr = Arc::new(Instrumentation::start("demo-service", &probes, args.no_agent));
    let points = Arc::new(Points {
        cache: instr.register("catalog", "load_cache", 0, "CacheMiss", 0),
        auth: instr.register("auth", "check_session", 0, "SessionStoreDown", 0),
        pricing: instr.register("pricing", "load_options", 0, "OptionsUnavailable", 0),
        search: instr.register("search", "index_query", 0, "IndexTimeout", 0),
    });

    let listener = TcpListener::bind(&addr)
        .unwrap_or_else(|e| die(&format!("cannot bind {addr}: {e}")));
    println!("serving on {addr}");

    for stream in listener.incoming() {
        let Ok(stream) = stream else { break };
        let instr = instr.clone();
        let probes = probes.clone();
        let points = points.clone();
        let permute = args.permute_options;
        std::thread::spawn(move || handle(stream, &instr, &probes, &points, permute));
    }
}
