//! Discrete-event replay of a workload under a placement/routing policy.
//!
//! Each arrival is routed against the current server states. By default the
//! chosen route's caches are reserved at decision time for the interval the
//! session will run, which is exactly the earliest start the waiting times
//! promise. Without reservation, the start is re-checked when it comes due
//! and the request is re-routed if capacity was taken in the meantime.

pub mod event;
pub mod policy;
pub mod report;
pub mod workload;

use std::collections::BinaryHeap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{route_total_time, Cluster, Request, TokenCost};
use crate::routing::{admit_session, initial_states, CacheAccounting, RoutingOutcome, ServerState};

pub use event::{EventKind, SimEvent};
pub use policy::{auto_target, PolicyConfig, PolicyKind, PreparedPolicy};
pub use report::{
    csv_rows, mean_std, write_csv, Aggregates, Completion, CsvRow, DecisionTiming, MetricSummary,
    MonteCarloReport, RequestRecord, SimReport,
};
pub use workload::{ArrivalProcess, LengthModel, WorkloadSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    #[serde(default)]
    pub accounting: CacheAccounting,
    /// Reserve caches when the route is chosen (otherwise re-check at start).
    #[serde(default = "yes")]
    pub reserve: bool,
    /// Start blocked sessions on a doubling backoff schedule instead of at
    /// the exact moment capacity frees up.
    #[serde(default)]
    pub retry: bool,
    #[serde(default = "default_max_backoff")]
    pub max_backoff: f64,
    /// Check physical cache occupancy after every event.
    #[serde(default = "yes")]
    pub check_invariants: bool,
}

fn yes() -> bool {
    true
}

fn default_max_backoff() -> f64 {
    60.0
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            accounting: CacheAccounting::Slots,
            reserve: true,
            retry: false,
            max_backoff: default_max_backoff(),
            check_invariants: true,
        }
    }
}

/// First retry instant at or after `available`, trying at `now + 1`,
/// `now + 3`, `now + 7`, ... with the step capped at `max_backoff`.
pub fn backoff_start(now: f64, available: f64, max_backoff: f64) -> f64 {
    if available <= now {
        return now;
    }
    let mut at = now;
    let mut step: f64 = 1.0;
    while at < available {
        at += step;
        step = (step * 2.0).min(max_backoff);
    }
    at
}

/// Report and decision timing of one run.
#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub report: SimReport,
    pub timing: DecisionTiming,
}

struct Active {
    outcome: RoutingOutcome,
    duration: f64,
    started: bool,
    reroutes: u32,
    attempt: u32,
}

/// Generates the workload, prepares the policy and simulates.
pub fn run(
    cluster: &Cluster,
    workload: &WorkloadSpec,
    config: &PolicyConfig,
    options: &SimOptions,
) -> Result<SimOutcome> {
    let requests = workload.generate(cluster)?;
    let clock = Instant::now();
    let policy = PreparedPolicy::prepare(cluster, workload, config, workload.seed)?;
    let placement_seconds = clock.elapsed().as_secs_f64();
    let mut out = simulate(cluster, &policy, &requests, workload.seed, options)?;
    out.timing.placement_seconds = placement_seconds;
    Ok(out)
}

/// Independent runs with seeds `seed, seed + 1, ...`, executed in parallel
/// and reduced in run order.
pub fn run_monte_carlo(
    cluster: &Cluster,
    workload: &WorkloadSpec,
    config: &PolicyConfig,
    options: &SimOptions,
    runs: usize,
) -> Result<(MonteCarloReport, Vec<DecisionTiming>)> {
    if runs == 0 {
        return Err(Error::Contract(
            "at least one Monte Carlo run is needed".into(),
        ));
    }
    let outcomes: Vec<SimOutcome> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            run(
                cluster,
                &workload.with_seed(workload.seed.wrapping_add(i)),
                config,
                options,
            )
        })
        .collect::<Result<_>>()?;
    let timing = outcomes.iter().map(|o| o.timing).collect();
    let reports = outcomes.into_iter().map(|o| o.report).collect();
    Ok((
        MonteCarloReport::from_reports(config.kind, workload.seed, reports),
        timing,
    ))
}

struct Engine<'a> {
    cluster: &'a Cluster,
    policy: &'a PreparedPolicy,
    requests: &'a [Request],
    options: &'a SimOptions,
    states: Vec<ServerState>,
    used: Vec<u64>,
    active: Vec<Option<Active>>,
    records: Vec<RequestRecord>,
    queue: BinaryHeap<SimEvent>,
    in_system: u64,
    timing: DecisionTiming,
}

/// Replays `requests` (sorted by arrival) under a prepared policy.
pub fn simulate(
    cluster: &Cluster,
    policy: &PreparedPolicy,
    requests: &[Request],
    seed: u64,
    options: &SimOptions,
) -> Result<SimOutcome> {
    if requests.iter().enumerate().any(|(i, r)| r.id != i as u64) {
        return Err(Error::Contract(
            "request ids must be 0, 1, 2, ... in order".into(),
        ));
    }
    let states = initial_states(cluster, &policy.placement, options.accounting);
    let mut engine = Engine {
        cluster,
        policy,
        requests,
        options,
        used: vec![0; states.len()],
        states,
        active: (0..requests.len()).map(|_| None).collect(),
        records: requests
            .iter()
            .map(|r| RequestRecord {
                id: r.id,
                client: r.client,
                arrival: r.arrival,
                input_len: r.input_len,
                output_len: r.output_len,
                concurrent: 0,
                completion: None,
            })
            .collect(),
        queue: requests
            .iter()
            .map(|r| SimEvent {
                time: r.arrival,
                kind: EventKind::Arrival,
                request: r.id,
            })
            .collect(),
        in_system: 0,
        timing: DecisionTiming::default(),
    };
    while let Some(ev) = engine.queue.pop() {
        engine.handle(ev)?;
        if options.check_invariants {
            engine.check_memory(ev)?;
        }
    }
    let aggregates = Aggregates::from_records(&engine.records);
    let report = SimReport {
        policy: policy.config.kind,
        seed,
        target: policy.target,
        placement: policy.placement.clone(),
        aggregates,
        records: engine.records,
    };
    Ok(SimOutcome {
        report,
        timing: engine.timing,
    })
}

impl Engine<'_> {
    fn push(&mut self, time: f64, kind: EventKind, request: u64) {
        self.queue.push(SimEvent {
            time,
            kind,
            request,
        });
    }

    fn decide(&mut self, request: &Request, now: f64) -> Result<Option<RoutingOutcome>> {
        let clock = Instant::now();
        let decision = self.policy.decide(self.cluster, &self.states, request, now);
        self.timing.total_seconds += clock.elapsed().as_secs_f64();
        self.timing.decisions += 1;
        match decision {
            Ok(o) => Ok(Some(o)),
            Err(Error::NoFeasiblePath(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn handle(&mut self, ev: SimEvent) -> Result<()> {
        let i = ev.request as usize;
        let now = ev.time;
        let request = self.requests[i].clone();
        match ev.kind {
            EventKind::Arrival => {
                self.records[i].concurrent = self.in_system + 1;
                let Some(outcome) = self.decide(&request, now)? else {
                    return Ok(());
                };
                self.in_system += 1;
                let duration = route_total_time(
                    self.cluster,
                    &outcome.route,
                    request.input_len,
                    request.output_len,
                );
                self.plan_start(i, now, outcome, duration, 0)?;
            }
            EventKind::RetryWake | EventKind::SessionStart => {
                let act = self.active[i].as_ref().expect("start of a routed request");
                if !self.options.reserve {
                    let ready =
                        act.outcome
                            .route
                            .hops
                            .iter()
                            .zip(&act.outcome.demands)
                            .all(|(h, &d)| {
                                self.states[h.server]
                                    .available_at(now, d)
                                    .is_ok_and(|t| t <= now)
                            });
                    if !ready {
                        if ev.kind == EventKind::RetryWake {
                            let attempt = act.attempt + 1;
                            let step = 2f64
                                .powi(attempt.min(62) as i32)
                                .min(self.options.max_backoff);
                            self.active[i].as_mut().expect("checked").attempt = attempt;
                            self.push(now + step, EventKind::RetryWake, ev.request);
                            return Ok(());
                        }
                        // capacity was taken since the decision: route again
                        let reroutes = act.reroutes + 1;
                        let Some(outcome) = self.decide(&request, now)? else {
                            self.active[i] = None;
                            self.in_system -= 1;
                            return Ok(());
                        };
                        let duration = route_total_time(
                            self.cluster,
                            &outcome.route,
                            request.input_len,
                            request.output_len,
                        );
                        return self.plan_start(i, now, outcome, duration, reroutes);
                    }
                    let mut outcome = act.outcome.clone();
                    outcome.start = now;
                    let duration = act.duration;
                    admit_session(&mut self.states, ev.request, &outcome, duration)?;
                    self.active[i].as_mut().expect("checked").outcome.start = now;
                }
                self.start_session(i, now);
            }
            EventKind::SessionEnd => {
                let act = self.active[i].take().expect("end of a started session");
                for (h, &d) in act.outcome.route.hops.iter().zip(&act.outcome.demands) {
                    self.used[h.server] -= d;
                    self.states[h.server].release(ev.request);
                }
                self.in_system -= 1;
                let route = &act.outcome.route;
                let first = TokenCost::Prefill {
                    input_len: request.input_len,
                }
                .route_time(self.cluster, route);
                let decode = TokenCost::Decode.route_time(self.cluster, route);
                let wait = act.outcome.start - request.arrival;
                self.records[i].completion = Some(Completion {
                    hops: route.hops.clone(),
                    start: act.outcome.start,
                    end: now,
                    wait,
                    ttft: wait + first,
                    total: now - request.arrival,
                    per_remaining: decode,
                    path_cost: act.outcome.path_cost,
                    completion_estimate: act.outcome.completion_estimate,
                    reroutes: act.reroutes,
                });
            }
        }
        Ok(())
    }

    fn plan_start(
        &mut self,
        i: usize,
        now: f64,
        mut outcome: RoutingOutcome,
        duration: f64,
        reroutes: u32,
    ) -> Result<()> {
        let id = i as u64;
        if self.options.reserve {
            if self.options.retry {
                outcome.start = backoff_start(now, outcome.start, self.options.max_backoff);
            }
            admit_session(&mut self.states, id, &outcome, duration)?;
            let start = outcome.start;
            self.active[i] = Some(Active {
                outcome,
                duration,
                started: false,
                reroutes,
                attempt: 0,
            });
            self.push(start, EventKind::SessionStart, id);
        } else if self.options.retry && outcome.start > now {
            self.active[i] = Some(Active {
                outcome,
                duration,
                started: false,
                reroutes,
                attempt: 0,
            });
            self.push(now + 1.0, EventKind::RetryWake, id);
        } else {
            let start = outcome.start;
            self.active[i] = Some(Active {
                outcome,
                duration,
                started: false,
                reroutes,
                attempt: 0,
            });
            self.push(start, EventKind::SessionStart, id);
        }
        Ok(())
    }

    fn start_session(&mut self, i: usize, now: f64) {
        let act = self.active[i].as_mut().expect("start of a routed request");
        debug_assert!(!act.started);
        act.started = true;
        for (h, &d) in act.outcome.route.hops.iter().zip(&act.outcome.demands) {
            self.used[h.server] += d;
        }
        let end = act.outcome.start + act.duration;
        debug_assert!(act.outcome.start == now);
        self.queue.push(SimEvent {
            time: end,
            kind: EventKind::SessionEnd,
            request: i as u64,
        });
    }

    fn check_memory(&self, ev: SimEvent) -> Result<()> {
        for (j, (&used, state)) in self.used.iter().zip(&self.states).enumerate() {
            if used > state.capacity {
                return Err(Error::CapacityViolated(format!(
                    "server `{}` holds {used} units over capacity {} after {:?} of request {} at t = {}",
                    self.cluster.server(j).id,
                    state.capacity,
                    ev.kind,
                    ev.request,
                    ev.time
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{BlockRange, Placement};

    #[test]
    fn backoff_schedule() {
        assert_eq!(backoff_start(0.0, 0.0, 60.0), 0.0);
        assert_eq!(backoff_start(0.0, 5.0, 60.0), 7.0);
        assert_eq!(backoff_start(10.0, 11.0, 60.0), 11.0);
        // 1, 2, 4, 4, 4 with a cap of 4
        assert_eq!(backoff_start(0.0, 12.0, 4.0), 15.0);
    }

    fn one_slot() -> (Cluster, PreparedPolicy) {
        // one server, whole model, room for exactly one session
        let model = unit_model(2, 1.0, 1.0);
        let c = cluster(model, vec![server("a", 4.0, 0.1)], &[&[0.2]]);
        let placement = Placement::new(2, vec![Some(BlockRange::new(1, 2))]).unwrap();
        let policy = PreparedPolicy {
            config: PolicyConfig::new(PolicyKind::Proposed),
            target: 1,
            placement,
            plan: None,
        };
        (c, policy)
    }

    fn req(id: u64, arrival: f64) -> Request {
        Request {
            id,
            client: 0,
            arrival,
            input_len: 1,
            output_len: 4,
        }
    }

    #[test]
    fn simultaneous_arrivals_at_one_slot() {
        let (c, policy) = one_slot();
        let out = simulate(
            &c,
            &policy,
            &[req(0, 0.0), req(1, 0.0)],
            0,
            &SimOptions::default(),
        )
        .unwrap();
        let a = out.report.records[0].completion.clone().unwrap();
        let b = out.report.records[1].completion.clone().unwrap();
        // per-token hop time 0.2 + 2 * 0.1 = 0.4, prefill identical here
        assert!((a.total - 1.6).abs() < 1e-12);
        assert_eq!(a.wait, 0.0);
        assert_eq!(b.wait, a.end);
        assert!((b.total - 3.2).abs() < 1e-12);
        assert_eq!(out.report.aggregates.completed, 2);
        assert_eq!(out.report.records[1].concurrent, 2);
    }

    #[test]
    fn non_reserve_mode_gives_same_trace_here() {
        let (c, policy) = one_slot();
        let reqs = [req(0, 0.0), req(1, 0.5), req(2, 0.7)];
        let a = simulate(&c, &policy, &reqs, 0, &SimOptions::default()).unwrap();
        let opts = SimOptions {
            reserve: false,
            ..SimOptions::default()
        };
        let b = simulate(&c, &policy, &reqs, 0, &opts).unwrap();
        for (x, y) in a.report.records.iter().zip(&b.report.records) {
            let (x, y) = (
                x.completion.as_ref().unwrap(),
                y.completion.as_ref().unwrap(),
            );
            assert!((x.end - y.end).abs() < 1e-12);
        }
    }

    #[test]
    fn retry_never_waits_less() {
        let (c, policy) = one_slot();
        let reqs = [req(0, 0.0), req(1, 0.1), req(2, 0.2)];
        let exact = simulate(&c, &policy, &reqs, 0, &SimOptions::default()).unwrap();
        for reserve in [true, false] {
            let opts = SimOptions {
                retry: true,
                reserve,
                ..SimOptions::default()
            };
            let retry = simulate(&c, &policy, &reqs, 0, &opts).unwrap();
            for (x, y) in exact.report.records.iter().zip(&retry.report.records) {
                assert!(y.completion.as_ref().unwrap().wait >= x.completion.as_ref().unwrap().wait);
            }
        }
    }

    #[test]
    fn unroutable_requests_are_dropped() {
        let (c, mut policy) = one_slot();
        policy.placement = Placement::new(2, vec![Some(BlockRange::new(1, 1))]).unwrap();
        let out = simulate(&c, &policy, &[req(0, 0.0)], 0, &SimOptions::default()).unwrap();
        assert_eq!(out.report.aggregates.dropped, 1);
        assert!(out.report.records[0].dropped());
    }
}
