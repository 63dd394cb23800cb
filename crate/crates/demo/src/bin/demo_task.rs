//! Bounded demo target: "download" a fixed number of chunks, announce
//! progress, and leave a completion artifact. Four instrumented recovery
//! blocks cover the four reaction categories:
//!
//! - fetcher/fetch_chunk (ChunkCorrupt): recovery retries silently until the
//!   chunk arrives — resilient.
//! - fetcher/announce (AnnounceTimeout): recovery logs a warning and moves
//!   on — resilient and debuggable. `--mutate drop-announce-log` removes the
//!   log call, the regression falsification mode should catch.
//! - decoder/parse_meta (MetaCorrupt): recovery reports the error on the
//!   console and aborts with exit code 13 — observable and debuggable.
//! - queue/enqueue (QueueInterrupted): recovery swallows the error and drops
//!   the chunk, so the task never completes and hangs without a trace —
//!   silent.

use std::sync::Arc;
use std::time::Duration;

use chaos_core::injection::{InjectionDecision, PointId};
use chaos_demo::{activation_wait, artifact_path, Instrumentation, Probes};
use sha2::{Digest, Sha256};

struct Args {
    chunks: usize,
    mutate_drop_announce_log: bool,
    no_agent: bool,
    spin: u64,
}

fn parse_args() -> Args {
    let mut args = Args {
        chunks: 8,
        mutate_drop_announce_log: false,
        no_agent: false,
        spin: 0,
    };
    let mut it = std::env::args().skip(1);
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--chunks" => {
                args.chunks = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or_else(|| die("--chunks needs a number"));
            }
            "--mutate" => match it.next().as_deref() {
                Some("drop-announce-log") => args.mutate_drop_announce_log = true,
                other => die(&format!("unknown mutation {other:?}")),
            },
            "--no-agent" => args.no_agent = true,
            "--spin" => {
                args.spin = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or_else(|| die("--spin needs a number"));
            }
            other => die(&format!("unknown argument {other:?}")),
        }
    }
    args
}

fn die(msg: &str) -> ! {
    eprintln!("demo-task: {msg}");
    std::process::exit(64);
}

fn chunk_data(i: usize) -> Vec<u8> {
    let mut hasher = Sha256::new();
    hasher.update(i.to_le_bytes());
    hasher.finalize().to_vec()
}

fn fetch_chunk(
    instr: &Instrumentation,
    probes: &Probes,
    point: &Option<PointId>,
    i: usize,
) -> Vec<u8> {
    loop {
        match instr.enter(point) {
            InjectionDecision::Proceed => {
                probes.hit("fetcher.fetch_chunk");
                std::thread::sleep(Duration::from_millis(20));
                return chunk_data(i);
            }
            InjectionDecision::Raise(_corrupt) => {
                // recovery: the chunk was corrupt, fetch it again
                std::thread::sleep(Duration::from_millis(25));
            }
        }
    }
}

fn announce(
    instr: &Instrumentation,
    probes: &Probes,
    point: &Option<PointId>,
    done: usize,
    drop_log: bool,
) {
    match instr.enter(point) {
        InjectionDecision::Proceed => {
            probes.hit("fetcher.announce");
        }
        InjectionDecision::Raise(e) => {
            // recovery: the tracker is unreachable; progress reporting is
            // best-effort, so log and carry on
            if !drop_log {
                eprintln!("warn: {} while announcing {done} chunk(s): {}", e.kind, e.message);
            }
        }
    }
}

fn main() {
    let args = parse_args();
    let probes = Arc::new(Probes::new(&[
        "fetcher.fetch_chunk",
        "fetcher.announce",
        "decoder.parse_meta",
        "queue.enqueue",
        "poller.tick",
    ]));
    let instr = Instrumentation::start("demo-task", &probes, args.no_agent);
    let p_fetch = instr.register("fetcher", "fetch_chunk", 0, "ChunkCorrupt", 0);
    let p_announce = instr.register("fetcher", "announce", 0, "AnnounceTimeout", 0);
    let p_meta = instr.register("decoder", "parse_meta", 0, "MetaCorrupt", 0);
    let p_queue = instr.register("queue", "enqueue", 0, "QueueInterrupted", 0);
    let p_poll = if args.spin > 0 {
        instr.register("poller", "tick", 0, "PollError", 0)
    } else {
        None
    };

    instr.wait_for_activation(activation_wait());

    match instr.enter(&p_meta) {
        InjectionDecision::Proceed => {
            probes.hit("decoder.parse_meta");
            println!("meta: {} chunks expected", args.chunks);
        }
        InjectionDecision::Raise(e) => {
            // recovery: bad metadata is unrecoverable; tell the user and quit
            eprintln!("error: {e}");
            println!("error: meta corrupt, aborting");
            instr.finish(Some(false));
            std::process::exit(13);
        }
    }

    // optional high-frequency instrumented polling, for load and overhead
    // measurements
    for _ in 0..args.spin {
        if instr.enter(&p_poll) == InjectionDecision::Proceed {
            probes.hit("poller.tick");
        }
    }

    let mut stored: Vec<Vec<u8>> = Vec::new();
    for i in 0..args.chunks {
        let data = fetch_chunk(&instr, &probes, &p_fetch, i);
        if i % 2 == 0 {
            announce(&instr, &probes, &p_announce, i, args.mutate_drop_announce_log);
        }
        match instr.enter(&p_queue) {
            InjectionDecision::Proceed => {
                probes.hit("queue.enqueue");
                stored.push(data);
                println!("stored chunk {i}");
            }
            InjectionDecision::Raise(_interrupted) => {
                // recovery: assume the writer will ask again; it never does
            }
        }
    }

    if stored.len() == args.chunks {
        let mut hasher = Sha256::new();
        for chunk in &stored {
            hasher.update(chunk);
        }
        let digest = format!("{:x}", hasher.finalize());
        if let Some(path) = artifact_path() {
            std::fs::write(path, &digest).expect("artifact path must be writable");
        }
        println!("done: {} chunks, digest {digest}", args.chunks);
        instr.finish(Some(true));
    } else {
        // some chunks were never stored; wait for them forever
        loop {
            std::thread::sleep(Duration::from_millis(200));
        }
    }
}
