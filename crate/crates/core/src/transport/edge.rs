//! Edge side: runs the prefix stub, ships blocks and keeps the plan in sync.

use std::fmt;
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};

use super::cloud::error_reason;
use super::wire::{read_message, write_message, Message, MessageKind};
use super::{block_cell, edge_payload, reconstruct_digest};
use crate::codec::encode;
use crate::error::{Error, Result};
use crate::planner::{parse_kv, PlanRecord, ReplanController, ReplanOutcome};
use crate::synthetic::GeneratorSpec;

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub cloud_addr: String,
    pub spec: GeneratorSpec,
    /// Multiplier on modeled edge seconds for the stub sleep; 0 disables it.
    pub time_scale: f64,
    pub io_timeout: Duration,
    /// Attempts per request, counting reconnects and retransmissions.
    pub max_attempts: u32,
    pub retry_backoff: Duration,
    /// Decode each block locally and compare with the cloud's digest.
    pub verify_local: bool,
}

impl EdgeConfig {
    pub fn new(cloud_addr: impl Into<String>, spec: GeneratorSpec) -> Self {
        EdgeConfig {
            cloud_addr: cloud_addr.into(),
            spec,
            time_scale: 0.0,
            io_timeout: Duration::from_secs(10),
            max_attempts: 50,
            retry_backoff: Duration::from_millis(50),
            verify_local: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub requests: u64,
    pub results: u64,
    pub retransmissions: u64,
    pub connects: u64,
    pub syncs: u64,
    /// Results answered under an epoch other than the one the block was
    /// sent with.
    pub epoch_violations: u64,
    pub digest_mismatches: u64,
    pub bytes_sent: u64,
}

impl fmt::Display for EdgeStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "requests={} results={} retransmissions={} connects={} syncs={} epoch_violations={} digest_mismatches={} bytes_sent={}",
            self.requests,
            self.results,
            self.retransmissions,
            self.connects,
            self.syncs,
            self.epoch_violations,
            self.digest_mismatches,
            self.bytes_sent
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestOutcome {
    pub request_id: u64,
    pub epoch: u64,
    pub split_layer: usize,
    pub bit_depth: Option<u8>,
    pub bytes: u64,
    pub digest: String,
    pub local_digest: Option<String>,
    pub edge_s: f64,
    pub trans_s: f64,
    pub cloud_s: f64,
    pub wall_s: f64,
}

enum Attempt {
    Done(RequestOutcome),
    Retransmit,
}

pub struct EdgeAgent {
    config: EdgeConfig,
    controller: ReplanController,
    conn: Option<TcpStream>,
    /// Whether the cloud is known to hold our current epoch.
    synced: bool,
    stats: EdgeStats,
}

impl EdgeAgent {
    pub fn new(config: EdgeConfig, controller: ReplanController) -> Result<Self> {
        config.spec.check_model(controller.model())?;
        Ok(EdgeAgent {
            config,
            controller,
            conn: None,
            synced: false,
            stats: EdgeStats::default(),
        })
    }

    pub fn controller(&self) -> &ReplanController {
        &self.controller
    }

    pub fn stats(&self) -> EdgeStats {
        self.stats
    }

    pub fn epoch(&self) -> u64 {
        self.controller.epoch()
    }

    fn record(&self) -> Option<PlanRecord> {
        self.controller.current().map(|d| PlanRecord {
            epoch: self.controller.epoch(),
            decision: d.clone(),
        })
    }

    /// Re-plans for a new bandwidth and pushes any change to the cloud.
    pub fn set_bandwidth(&mut self, bytes_per_second: f64) -> Result<bool> {
        match self.controller.replan(bytes_per_second)? {
            ReplanOutcome::Changed { decision, epoch } => {
                info!("new plan epoch={epoch} {decision}");
                self.synced = false;
                self.with_retries(|agent| agent.ensure_synced())?;
                Ok(true)
            }
            ReplanOutcome::Unchanged => Ok(false),
        }
    }

    fn with_retries<T>(&mut self, mut f: impl FnMut(&mut Self) -> Result<T>) -> Result<T> {
        let mut last = None;
        for attempt in 0..self.config.max_attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.config.retry_backoff);
            }
            match f(self) {
                Ok(v) => return Ok(v),
                Err(e @ (Error::Net { .. } | Error::Protocol(_))) => {
                    warn!("attempt {} failed: {e}", attempt + 1);
                    self.conn = None;
                    self.synced = false;
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn exchange(&mut self, msg: &Message) -> Result<Message> {
        let peer = self.config.cloud_addr.clone();
        let stream = self
            .conn
            .as_mut()
            .ok_or_else(|| Error::Protocol("not connected".into()))?;
        let res = write_message(stream, msg).and_then(|_| read_message(stream));
        match res {
            Ok(Some(reply)) => Ok(reply),
            Ok(None) => {
                self.conn = None;
                Err(Error::net(
                    peer,
                    std::io::Error::new(std::io::ErrorKind::ConnectionAborted, "connection closed"),
                ))
            }
            Err(e) => {
                self.conn = None;
                Err(Error::net(peer, e))
            }
        }
    }

    fn ensure_connected(&mut self) -> Result<()> {
        if self.conn.is_some() {
            return Ok(());
        }
        let addr = &self.config.cloud_addr;
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| Error::net(addr, e))?
            .next()
            .ok_or_else(|| Error::Invalid(format!("{addr} resolves to no address")))?;
        let stream =
            TcpStream::connect_timeout(&sock, self.config.io_timeout).map_err(|e| Error::net(addr, e))?;
        let setup = stream
            .set_read_timeout(Some(self.config.io_timeout))
            .and_then(|_| stream.set_write_timeout(Some(self.config.io_timeout)))
            .and_then(|_| stream.set_nodelay(true));
        setup.map_err(|e| Error::net(addr, e))?;
        self.conn = Some(stream);
        self.stats.connects += 1;

        let hello = Message::new(MessageKind::Hello, self.epoch(), 0, "role=edge\n");
        let reply = self.exchange(&hello)?;
        if reply.kind != MessageKind::Hello {
            return Err(Error::Protocol(format!("expected HELLO, got {:?}", reply.kind)));
        }
        self.absorb_remote(reply.epoch, &reply.text());
        Ok(())
    }

    /// Takes a newer plan held by the cloud and records whether the cloud
    /// agrees with our epoch.
    fn absorb_remote(&mut self, epoch: u64, body: &str) {
        if epoch > self.epoch() {
            if let Ok(rec) = PlanRecord::parse(body) {
                info!("adopting cloud plan epoch={} {}", rec.epoch, rec.decision);
                self.controller.adopt(rec.decision, rec.epoch);
            }
        }
        self.synced = epoch == self.epoch() && epoch > 0;
    }

    fn ensure_synced(&mut self) -> Result<()> {
        self.ensure_connected()?;
        if self.synced {
            return Ok(());
        }
        let rec = self
            .record()
            .ok_or_else(|| Error::Invalid("no plan yet; set a bandwidth first".into()))?;
        let reply = self.exchange(&Message::new(MessageKind::PlanSync, rec.epoch, 0, rec.to_text()))?;
        match reply.kind {
            MessageKind::PlanSync => {
                self.stats.syncs += 1;
                self.absorb_remote(reply.epoch, &reply.text());
                if !self.synced {
                    return Err(Error::Protocol(format!(
                        "cloud holds epoch {} after sync of {}",
                        reply.epoch, rec.epoch
                    )));
                }
                Ok(())
            }
            MessageKind::Error => Err(Error::Remote(error_reason(&reply.text()))),
            other => Err(Error::Protocol(format!("expected PLAN_SYNC, got {other:?}"))),
        }
    }

    /// Runs one request end to end, retrying across reconnects and epoch
    /// changes.
    pub fn request(&mut self, request_id: u64) -> Result<RequestOutcome> {
        self.stats.requests += 1;
        let max = self.config.max_attempts.max(1);
        for _ in 0..max {
            match self.with_retries(|agent| agent.attempt(request_id))? {
                Attempt::Done(outcome) => {
                    info!(
                        "request={} epoch={} split={} bits={} bytes={} edge_ms={:.3} trans_ms={:.3} cloud_ms={:.3} wall_ms={:.3}",
                        outcome.request_id,
                        outcome.epoch,
                        outcome.split_layer,
                        outcome.bit_depth.map_or_else(|| "-".to_string(), |c| c.to_string()),
                        outcome.bytes,
                        outcome.edge_s * 1e3,
                        outcome.trans_s * 1e3,
                        outcome.cloud_s * 1e3,
                        outcome.wall_s * 1e3
                    );
                    return Ok(outcome);
                }
                Attempt::Retransmit => self.stats.retransmissions += 1,
            }
        }
        Err(Error::Protocol(format!(
            "request {request_id} still rejected after {max} retransmissions"
        )))
    }

    fn attempt(&mut self, request_id: u64) -> Result<Attempt> {
        self.ensure_synced()?;
        let rec = self.record().expect("synced plan");
        let started = Instant::now();
        let qm = edge_payload(&self.config.spec, self.controller.model(), &rec.decision, request_id)?;
        let (layer, _) = block_cell(&rec.decision);
        let pause = self.controller.latency().edge(layer) * self.config.time_scale;
        if pause > 0.0 {
            thread::sleep(Duration::from_secs_f64(pause));
        }
        let body = encode(&qm, layer as u32)?.to_bytes();
        let local = if self.config.verify_local {
            Some(reconstruct_digest(&body)?)
        } else {
            None
        };
        let edge_s = started.elapsed().as_secs_f64();
        let bytes = body.len() as u64;

        let sent = Instant::now();
        let reply = self.exchange(&Message::new(MessageKind::FeatureBlock, rec.epoch, request_id, body))?;
        let round_trip = sent.elapsed().as_secs_f64();
        self.stats.bytes_sent += bytes;

        match reply.kind {
            MessageKind::Result => {
                let text = reply.text();
                let kv = parse_kv(&text);
                let field = |k: &str| kv.iter().find(|(key, _)| *key == k).map(|(_, v)| *v);
                let digest = field("digest")
                    .ok_or_else(|| Error::Protocol("RESULT without digest".into()))?
                    .to_string();
                let cloud_s: f64 = field("cloud_s").and_then(|v| v.parse().ok()).unwrap_or(0.0);
                if reply.epoch != rec.epoch || reply.request_id != request_id {
                    self.stats.epoch_violations += 1;
                }
                if local.as_ref().is_some_and(|l| *l != digest) {
                    self.stats.digest_mismatches += 1;
                }
                self.stats.results += 1;
                let stub_cloud = cloud_s * self.config.time_scale;
                Ok(Attempt::Done(RequestOutcome {
                    request_id,
                    epoch: rec.epoch,
                    split_layer: rec.decision.split_layer,
                    bit_depth: rec.decision.bit_depth,
                    bytes,
                    digest,
                    local_digest: local,
                    edge_s,
                    trans_s: (round_trip - stub_cloud).max(0.0),
                    cloud_s: stub_cloud,
                    wall_s: started.elapsed().as_secs_f64(),
                }))
            }
            MessageKind::Error => {
                let text = reply.text();
                let reason = error_reason(&text);
                if reason == "epoch mismatch" {
                    info!(
                        "request {request_id} rejected: sent epoch {}, cloud holds {}",
                        rec.epoch, reply.epoch
                    );
                    self.absorb_remote(reply.epoch, &text);
                    Ok(Attempt::Retransmit)
                } else {
                    Err(Error::Remote(reason))
                }
            }
            other => Err(Error::Protocol(format!("expected RESULT, got {other:?}"))),
        }
    }
}
