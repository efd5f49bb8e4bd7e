//! Event-driven simulation of buffered asynchronous training.
//!
//! `C` users train concurrently on virtual time. When one finishes at server
//! round `t`, its download round is `t - tau` with `tau` uniform on
//! `{0, ..., min(tau_max, t)}` over rounds that user has not used yet, and it
//! trains from the model the server held at that round. A finished or dropped
//! user is replaced immediately by a uniformly chosen idle one. Both schemes
//! consume the scheduler stream identically, so for a given seed they see the
//! same arrivals, staleness values and dropouts.

pub mod config;
pub mod data;
pub mod metrics;
pub mod model;

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use thiserror::Error;

pub use config::{Scheme, SimConfig, SweepAxis, SweepChild};
pub use data::{Dataset, Samples};
pub use metrics::{RoundDetail, RoundMetrics, RunMetrics, CSV_COLUMNS};
pub use model::{grad_oracle, Model};

use crate::field::FieldVector;
use crate::masking::{MaskError, UserId};
use crate::protocol::{fedbuff_global_update, local_train, ProtocolError, ProtocolParams, Server, User};
use crate::rng::{self, Stream, StreamRng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("no upload accepted in {arrivals} consecutive arrivals at round {round}; every update overflows the wrap guard")]
    Stalled { round: u64, arrivals: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

// One per run, so the size gap does not matter.
#[allow(clippy::large_enum_variant)]
enum Backend {
    Secure { server: Server, users: Vec<User> },
    Float { model: Vec<f64>, buffer: Vec<(Vec<f64>, u64)> },
}

struct InFlight {
    user: usize,
    finish: f64,
}

struct Scheduler {
    rng: StreamRng,
    busy: Vec<bool>,
    in_flight: Vec<InFlight>,
    min: f64,
    max: f64,
}

impl Scheduler {
    fn start_one(&mut self, now: f64) {
        let idle: Vec<usize> = (0..self.busy.len()).filter(|&u| !self.busy[u]).collect();
        let user = idle[self.rng.gen_range(0..idle.len())];
        let u: f64 = self.rng.gen();
        self.busy[user] = true;
        self.in_flight.push(InFlight {
            user,
            finish: now + self.min + u * (self.max - self.min),
        });
    }

    /// Earliest finisher, ties broken by user id.
    fn next_finish(&mut self) -> InFlight {
        let k = (0..self.in_flight.len())
            .min_by(|&a, &b| {
                let (x, y) = (&self.in_flight[a], &self.in_flight[b]);
                x.finish.total_cmp(&y.finish).then(x.user.cmp(&y.user))
            })
            .expect("concurrency is at least one");
        let f = self.in_flight.swap_remove(k);
        self.busy[f.user] = false;
        f
    }

    /// Drops a uniform number in `[0, max_drop]` of in-flight users and
    /// replaces them. Returns the dropped ids.
    fn drop_some(&mut self, max_drop: usize, now: f64) -> BTreeSet<usize> {
        let k = self.rng.gen_range(0..=max_drop).min(self.in_flight.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut self.rng, self.in_flight.len(), k).into_vec();
        picked.sort_unstable_by(|a, b| b.cmp(a));
        let mut dropped = BTreeSet::new();
        for i in picked {
            let f = self.in_flight.swap_remove(i);
            self.busy[f.user] = false;
            dropped.insert(f.user);
        }
        for _ in 0..k {
            self.start_one(now);
        }
        dropped
    }
}

pub fn run(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    run_scheme(cfg, cfg.scheme)
}

/// Same schedule as [`run`], aggregated in floating point without masking.
pub fn run_baseline_fedbuff(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    run_scheme(cfg, Scheme::FedbuffFloat)
}

pub fn run_scheme(cfg: &SimConfig, scheme: Scheme) -> Result<RunMetrics, SimError> {
    let params = cfg.validate()?;
    let seed = cfg.seed;
    let n = params.sharing.users;
    let data = data::load(&cfg.data, n, seed)?;
    let model = Model::from_section(&cfg.model, data.train.features());
    let x0 = model.init(&mut rng::stream(seed, Stream::ModelInit, &[]));

    let mut backend = match scheme {
        Scheme::Basecagg => Backend::Secure {
            server: Server::new(params, x0.clone(), seed)?,
            users: (0..n).map(|u| User::new(UserId(u as u32), params.field, seed)).collect(),
        },
        Scheme::FedbuffFloat => Backend::Float {
            model: x0.clone(),
            buffer: Vec::new(),
        },
    };

    let mut sched = Scheduler {
        rng: rng::stream(seed, Stream::Scheduler, &[]),
        busy: vec![false; n],
        in_flight: Vec::new(),
        min: cfg.scheduler.train_time_min,
        max: cfg.scheduler.train_time_max,
    };
    for _ in 0..cfg.scheduler.concurrency {
        sched.start_one(0.0);
    }

    // history[len - 1 - tau] is the model at round t - tau.
    let mut history: VecDeque<Vec<f64>> = VecDeque::from([x0]);
    let mut used: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); n];
    let mut round = 0u64;
    let mut out = RunMetrics::default();
    let mut detail = RoundDetail::default();
    let mut overflow = 0usize;
    let mut fruitless = 0usize;
    let stall_limit = 100 * params.buffer_size.max(n);

    while out.rows.len() < cfg.rounds {
        let done = sched.next_finish();
        let now = done.finish;
        let u = done.user;

        let hi = params.tau_max.min(round);
        let candidates: Vec<u64> = (0..=hi).filter(|tau| !used[u].contains(&(round - tau))).collect();
        let mut flush = false;
        if candidates.is_empty() {
            detail.skipped_uploads += 1;
            fruitless += 1;
        } else {
            let tau = candidates[sched.rng.gen_range(0..candidates.len())];
            let t_i = round - tau;
            used[u].insert(t_i);
            let base = &history[history.len() - 1 - tau as usize];
            let mut train_rng = rng::stream(seed, Stream::Training, &[u as u64, t_i]);
            let rows = &data.partitions[u];
            let delta = local_train(base, params.local_steps, params.eta_l, |x| {
                grad_oracle(&model, x, &data.train, rows, cfg.model.batch_size, cfg.model.lambda, &mut train_rng)
            });
            match &mut backend {
                Backend::Secure { server, users } => {
                    match secure_upload(server, users, &params, u, t_i, &delta, &mut overflow, &mut detail)? {
                        Some(full) => {
                            flush = full;
                            fruitless = 0;
                        }
                        None => fruitless += 1,
                    }
                }
                Backend::Float { buffer, .. } => {
                    buffer.push((delta, tau));
                    flush = buffer.len() == params.buffer_size;
                    fruitless = 0;
                }
            }
        }
        if fruitless >= stall_limit {
            return Err(SimError::Stalled {
                round,
                arrivals: fruitless,
            });
        }
        sched.start_one(now);
        if !flush {
            continue;
        }

        let dropped = sched.drop_some(cfg.max_dropouts(), now);
        let (current, staleness) = match &mut backend {
            Backend::Secure { server, users } => {
                let req = server.pending_request().cloned().ok_or(ProtocolError::NoPendingRequest)?;
                let staleness: Vec<u64> = req.members.iter().map(|m| req.staleness(m)).collect();
                let eligible = server.eligible_responders(&req);
                let survivors: Vec<UserId> = eligible.iter().copied().filter(|j| !dropped.contains(&j.index())).collect();
                detail.responders = survivors.len();
                let need = params.sharing.survivors;
                let answer = |ids: &[UserId]| -> Result<Vec<(UserId, FieldVector)>, ProtocolError> {
                    ids.iter().map(|&j| Ok((j, users[j.index()].respond_recovery(&req)?))).collect()
                };
                let first = answer(&survivors[..survivors.len().min(need)])?;
                match server.finalize(&first) {
                    Ok(_) => {}
                    Err(ProtocolError::Mask(MaskError::InsufficientResponses { .. })) => {
                        // Dropped users come back online and answer the retry.
                        detail.failed_recoveries += 1;
                        let all: Vec<UserId> = eligible.iter().copied().collect();
                        let retry = answer(&all[..all.len().min(need)])?;
                        server.finalize(&retry)?;
                    }
                    Err(e) => return Err(e.into()),
                }
                for user in users.iter_mut() {
                    user.evict(server.round(), params.tau_max);
                }
                (server.model().to_vec(), staleness)
            }
            Backend::Float { model, buffer } => {
                fedbuff_global_update(model, buffer, &params.staleness, params.eta_g);
                let staleness = buffer.iter().map(|&(_, tau)| tau).collect();
                buffer.clear();
                (model.clone(), staleness)
            }
        };

        round += 1;
        let cutoff = round.saturating_sub(params.tau_max);
        for r in &mut used {
            r.retain(|&x| x >= cutoff);
        }
        history.push_back(current);
        while history.len() > params.tau_max as usize + 1 {
            history.pop_front();
        }
        let x = history.back().expect("history is never empty");
        let mean_staleness = staleness.iter().sum::<u64>() as f64 / staleness.len().max(1) as f64;
        out.rows.push(RoundMetrics {
            round,
            wallclock_virtual: now,
            accuracy: model.accuracy(x, &data.test),
            loss: model.loss(x, &data.train, cfg.model.lambda),
            mean_staleness,
            dropouts: dropped.len(),
            overflow_warnings: overflow,
        });
        detail.staleness = staleness;
        out.details.push(std::mem::take(&mut detail));
        overflow = 0;
    }
    out.final_model = history.pop_back().expect("history is never empty");
    Ok(out)
}

/// Download, share delivery and upload for one arrival. Returns whether the
/// buffer filled, or `None` when the update could not be quantized; such
/// uploads are counted as overflow warnings and skipped.
#[allow(clippy::too_many_arguments)]
fn secure_upload(
    server: &mut Server,
    users: &mut [User],
    params: &ProtocolParams,
    u: usize,
    t_i: u64,
    delta: &[f64],
    overflow: &mut usize,
    detail: &mut RoundDetail,
) -> Result<Option<bool>, SimError> {
    let owner = UserId(u as u32);
    let shares = users[u].download(t_i, delta.len(), params)?.shares().to_vec();
    for (j, share) in shares.into_iter().enumerate() {
        users[j].receive_share(owner, t_i, share)?;
        server.record_share(owner, t_i, UserId(j as u32));
    }
    let outcome = match users[u].upload(t_i, delta, params) {
        Ok(o) => o,
        Err(ProtocolError::Quant(_)) => {
            *overflow += 1;
            return Ok(None);
        }
        Err(e) => return Err(e.into()),
    };
    if outcome.wrapped {
        *overflow += 1;
        detail.wrapped_uploads += 1;
    }
    Ok(Some(server.receive(outcome.update)?.is_some()))
}
