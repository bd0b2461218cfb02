//! Cloud side: decodes feature blocks and answers with reconstruction
//! digests.

use std::fmt;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::wire::{read_message, write_message, Message, MessageKind};
use super::{block_cell, map_digest, SharedPlan};
use crate::codec::{decode, EncodedBlock};
use crate::error::{Error, Result};
use crate::planner::{parse_kv, PlanRecord};
use crate::quantizer::dequantize;

const POLL: Duration = Duration::from_millis(20);
const IO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct CloudConfig {
    pub bind: String,
    /// Seconds of cloud compute per split layer, `N+1` entries. The stub
    /// sleeps `cloud_suffix[i] * time_scale` per block.
    pub cloud_suffix: Option<Vec<f64>>,
    pub time_scale: f64,
}

impl CloudConfig {
    pub fn new(bind: impl Into<String>) -> Self {
        CloudConfig {
            bind: bind.into(),
            cloud_suffix: None,
            time_scale: 0.0,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    connections: AtomicU64,
    results: AtomicU64,
    errors: AtomicU64,
    epoch_rejections: AtomicU64,
    syncs: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CloudStats {
    pub connections: u64,
    pub results: u64,
    pub errors: u64,
    pub epoch_rejections: u64,
    pub syncs: u64,
    pub epoch: u64,
}

impl fmt::Display for CloudStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "connections={} results={} errors={} epoch_rejections={} syncs={} epoch={}",
            self.connections, self.results, self.errors, self.epoch_rejections, self.syncs, self.epoch
        )
    }
}

#[derive(Debug)]
struct Shared {
    config: CloudConfig,
    plan: SharedPlan,
    stop: AtomicBool,
    counters: Counters,
}

/// Controls a running service from other threads.
#[derive(Debug, Clone)]
pub struct CloudHandle {
    shared: Arc<Shared>,
    addr: SocketAddr,
}

impl CloudHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }

    pub fn plan(&self) -> SharedPlan {
        self.shared.plan.clone()
    }

    pub fn stats(&self) -> CloudStats {
        stats(&self.shared)
    }
}

fn stats(s: &Shared) -> CloudStats {
    let c = &s.counters;
    CloudStats {
        connections: c.connections.load(Ordering::Relaxed),
        results: c.results.load(Ordering::Relaxed),
        errors: c.errors.load(Ordering::Relaxed),
        epoch_rejections: c.epoch_rejections.load(Ordering::Relaxed),
        syncs: c.syncs.load(Ordering::Relaxed),
        epoch: s.plan.epoch(),
    }
}

pub struct CloudService {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl CloudService {
    pub fn bind(config: CloudConfig) -> Result<Self> {
        let listener = TcpListener::bind(&config.bind).map_err(|e| Error::net(&config.bind, e))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::net(&config.bind, e))?;
        Ok(CloudService {
            listener,
            shared: Arc::new(Shared {
                config,
                plan: SharedPlan::default(),
                stop: AtomicBool::new(false),
                counters: Counters::default(),
            }),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub fn handle(&self) -> CloudHandle {
        CloudHandle {
            shared: self.shared.clone(),
            addr: self.local_addr(),
        }
    }

    /// Serves until [`CloudHandle::stop`] is called, then waits for open
    /// connections to close.
    pub fn run(self) -> CloudStats {
        info!("cloud service listening on {}", self.local_addr());
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !self.shared.stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    self.shared.counters.connections.fetch_add(1, Ordering::Relaxed);
                    let shared = self.shared.clone();
                    workers.push(thread::spawn(move || serve_connection(stream, peer, &shared)));
                    workers.retain(|w| !w.is_finished());
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(POLL);
                }
            }
        }
        for w in workers {
            let _ = w.join();
        }
        let s = stats(&self.shared);
        info!("cloud service stopped: {s}");
        s
    }

    pub fn spawn(self) -> (CloudHandle, JoinHandle<CloudStats>) {
        let handle = self.handle();
        (handle, thread::spawn(move || self.run()))
    }
}

/// Waits for the next byte, giving up when the service stops.
fn wait_readable(stream: &TcpStream, shared: &Shared) -> bool {
    let mut probe = [0u8; 1];
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            return false;
        }
        match stream.peek(&mut probe) {
            Ok(0) => return false,
            Ok(_) => return true,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(_) => return false,
        }
    }
}

fn serve_connection(mut stream: TcpStream, peer: SocketAddr, shared: &Shared) {
    debug!("connection from {peer}");
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let _ = stream.set_write_timeout(Some(IO_TIMEOUT));
    loop {
        let _ = stream.set_read_timeout(Some(POLL));
        if !wait_readable(&stream, shared) {
            break;
        }
        let _ = stream.set_read_timeout(Some(IO_TIMEOUT));
        let msg = match read_message(&mut stream) {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) => {
                warn!("dropping {peer}: {e}");
                break;
            }
        };
        let reply = handle_message(shared, msg);
        if reply.kind == MessageKind::Error {
            shared.counters.errors.fetch_add(1, Ordering::Relaxed);
        }
        if let Err(e) = write_message(&mut stream, &reply) {
            warn!("write to {peer} failed: {e}");
            break;
        }
    }
    debug!("connection from {peer} closed");
}

fn error_reply(epoch: u64, request_id: u64, reason: &str, plan: Option<&PlanRecord>) -> Message {
    let mut body = format!("error={reason}\n");
    if let Some(p) = plan {
        body.push_str(&p.to_text());
    }
    Message::new(MessageKind::Error, epoch, request_id, body)
}

fn handle_message(shared: &Shared, msg: Message) -> Message {
    let id = msg.request_id;
    match msg.kind {
        MessageKind::Hello => {
            let plan = shared.plan.snapshot();
            let body = plan.as_ref().map(PlanRecord::to_text).unwrap_or_default();
            Message::new(MessageKind::Hello, shared.plan.epoch(), id, body)
        }
        MessageKind::PlanSync => match PlanRecord::parse(&msg.text()) {
            Ok(rec) if rec.epoch == msg.epoch => {
                let cur = shared.plan.offer(rec);
                shared.counters.syncs.fetch_add(1, Ordering::Relaxed);
                info!(
                    "plan sync: offered epoch {}, in force epoch {}",
                    msg.epoch, cur.epoch
                );
                Message::new(MessageKind::PlanSync, cur.epoch, id, cur.to_text())
            }
            Ok(_) => error_reply(shared.plan.epoch(), id, "plan record epoch disagrees with header", None),
            Err(e) => error_reply(shared.plan.epoch(), id, &e.to_string(), None),
        },
        MessageKind::FeatureBlock => handle_block(shared, &msg),
        MessageKind::Result | MessageKind::Error => {
            error_reply(shared.plan.epoch(), id, "unexpected message type", None)
        }
    }
}

fn handle_block(shared: &Shared, msg: &Message) -> Message {
    let id = msg.request_id;
    let Some(plan) = shared.plan.snapshot() else {
        shared.counters.epoch_rejections.fetch_add(1, Ordering::Relaxed);
        return error_reply(0, id, "epoch mismatch", None);
    };
    if msg.epoch != plan.epoch {
        shared.counters.epoch_rejections.fetch_add(1, Ordering::Relaxed);
        return error_reply(plan.epoch, id, "epoch mismatch", Some(&plan));
    }
    let block = match EncodedBlock::from_bytes(&msg.body) {
        Ok(b) => b,
        Err(e) => return error_reply(plan.epoch, id, &e.to_string(), None),
    };
    let (layer, bits) = block_cell(&plan.decision);
    if block.header.layer_index as usize != layer || block.header.bit_depth != bits {
        return error_reply(plan.epoch, id, "plan mismatch", Some(&plan));
    }
    let fm = match decode(&block)
        .map_err(Error::from)
        .and_then(|q| dequantize(&q))
    {
        Ok(fm) => fm,
        Err(e) => return error_reply(plan.epoch, id, &e.to_string(), None),
    };
    let digest = map_digest(&fm);
    let cloud_s = shared
        .config
        .cloud_suffix
        .as_ref()
        .and_then(|v| v.get(layer).copied())
        .unwrap_or(0.0);
    let pause = cloud_s * shared.config.time_scale;
    if pause > 0.0 {
        thread::sleep(Duration::from_secs_f64(pause));
    }
    shared.counters.results.fetch_add(1, Ordering::Relaxed);
    Message::new(
        MessageKind::Result,
        msg.epoch,
        id,
        format!("digest={digest}\nsplit_layer={layer}\nbit_depth={bits}\ncloud_s={cloud_s}\n"),
    )
}

/// Reads the `error=` reason from an ERROR body.
pub fn error_reason(body: &str) -> String {
    parse_kv(body)
        .into_iter()
        .find(|(k, _)| *k == "error")
        .map_or_else(|| "unspecified".to_string(), |(_, v)| v.to_string())
}
