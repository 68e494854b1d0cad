//! Second-by-second microscopic traffic simulation.
//!
//! Each second: newly due vehicles join their origin queue, queue heads
//! are injected where an entry gap exists, every vehicle advances with an
//! IDM acceleration under a ballistic update, vehicles at link ends
//! consult guidance and transfer (or wait at the end at speed 0 when the
//! chosen lane has no entry gap), and per-second emissions and link
//! samples are accumulated. Every 60 seconds the per-link samples close
//! into [`LinkIntervalRecord`]s.
//!
//! Boundary behavior is resolved by clamps, never by errors: speeds clamp
//! to `[0, v0]`, positions clamp to the link end, and a follower is never
//! allowed closer than a minimum separation to its leader.

mod idm;

pub use idm::{idm_acceleration, IdmDefaults, IdmParams};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::emissions::OpModeTable;
use crate::error::{Error, Result};
use crate::linkstate::{aggregate, fill_inlink_speeds, LinkIntervalRecord, SecondSample, INTERVAL_S};
use crate::net::{DemandTable, LinkId, Network, VehicleId};

/// Hard floor on the follower-leader separation enforced after each
/// ballistic update, m. Entry rules keep gaps at `s0 > MIN_SEP_M`; this
/// clamp only catches extreme single-step braking overshoot.
pub const MIN_SEP_M: f64 = 0.5;

/// Next-hop lookup the simulator consults when a vehicle stands at a node.
/// Implemented by the routing layer's guidance table.
pub trait GuidanceView {
    /// Out-link index to take from `node_idx` toward `dest_idx`, or `None`
    /// if the destination is currently unserved from this node.
    fn next_link(&self, node_idx: usize, dest_idx: usize) -> Option<usize>;
}

/// Simulation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub idm: IdmDefaults,
    /// Abort when a vehicle's elapsed time exceeds this multiple of its
    /// free-flow origin-destination time.
    pub guard_multiple: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            idm: IdmDefaults::default(),
            guard_multiple: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pending,
    Queued,
    OnLink,
    Retired,
}

/// Per-second kinematic and emission state of one vehicle.
#[derive(Debug, Clone)]
pub struct VehicleState {
    pub id: VehicleId,
    origin: usize,
    destination: usize,
    departure_s: f64,
    phase: Phase,
    /// Current link index while on-link.
    pub link: usize,
    pub lane: usize,
    /// Longitudinal position from link start, m.
    pub pos_m: f64,
    /// Speed, m/s.
    pub speed_ms: f64,
    /// Realized acceleration of the last second, m/s^2.
    pub accel_ms2: f64,
    speed_at_second_start: f64,
    /// Cumulative distance, m.
    pub dist_m: f64,
    pub ghg_g: f64,
    pub nox_g: f64,
    path: Vec<(LinkId, u64)>,
    arrival_s: Option<u64>,
}

/// Completed-trip summary of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSummary {
    pub id: VehicleId,
    pub departure_s: f64,
    pub arrival_s: u64,
    pub tt_s: f64,
    pub vkt_m: f64,
    pub ghg_g: f64,
    pub nox_g: f64,
    /// Traversed links with entry seconds, in order.
    pub path: Vec<(LinkId, u64)>,
}

/// Network-level per-minute series point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinutePoint {
    pub minute: u32,
    /// Mean over all vehicle-second speed samples, km/h (0 when empty).
    pub avg_speed_kmh: f64,
    pub ghg_g: f64,
    pub nox_g: f64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct SimulationLog {
    pub vehicles: Vec<VehicleSummary>,
    pub records: Vec<LinkIntervalRecord>,
    pub series: Vec<MinutePoint>,
    pub n_minutes: u32,
}

impl SimulationLog {
    /// Per-vehicle summary CSV:
    /// `vehicle_id,departure_s,arrival_s,tt_s,vkt_m,ghg_g,nox_g,path`
    /// with the path as `;`-joined link ids.
    pub fn vehicles_to_csv(&self) -> String {
        let mut s = String::from("vehicle_id,departure_s,arrival_s,tt_s,vkt_m,ghg_g,nox_g,path\n");
        for v in &self.vehicles {
            let path = v
                .path
                .iter()
                .map(|(l, _)| l.to_string())
                .collect::<Vec<_>>()
                .join(";");
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                v.id, v.departure_s, v.arrival_s, v.tt_s, v.vkt_m, v.ghg_g, v.nox_g, path
            ));
        }
        s
    }

    pub fn total_ghg_g(&self) -> f64 {
        self.vehicles.iter().map(|v| v.ghg_g).sum()
    }

    pub fn total_nox_g(&self) -> f64 {
        self.vehicles.iter().map(|v| v.nox_g).sum()
    }

    pub fn mean_tt_s(&self) -> f64 {
        self.vehicles.iter().map(|v| v.tt_s).sum::<f64>() / self.vehicles.len() as f64
    }

    pub fn mean_vkt_m(&self) -> f64 {
        self.vehicles.iter().map(|v| v.vkt_m).sum::<f64>() / self.vehicles.len() as f64
    }
}

#[derive(Clone)]
struct LinkRt {
    /// Vehicle indices per lane, front (largest position) first.
    lanes: Vec<Vec<usize>>,
    length_m: f64,
    v0_ms: f64,
    idm: IdmParams,
}

/// Min-heap entry for pending departures: earliest departure first, demand
/// order as tie-break.
#[derive(Clone, PartialEq)]
struct Pending {
    departure_s: f64,
    order: usize,
    veh: usize,
}
impl Eq for Pending {}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .departure_s
            .partial_cmp(&self.departure_s)
            .unwrap_or(Ordering::Equal)
            .then(other.order.cmp(&self.order))
    }
}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One simulation instance. Owns all mutable state; cloning yields an
/// independent shadow that can be stepped without affecting the original.
#[derive(Clone)]
pub struct Sim {
    network: Arc<Network>,
    opmodes: Arc<OpModeTable>,
    cfg: SimConfig,
    second: u64,
    vehicles: Vec<VehicleState>,
    links: Vec<LinkRt>,
    pending: BinaryHeap<Pending>,
    origin_queues: Vec<std::collections::VecDeque<usize>>,
    n_queued: usize,
    n_active: usize,
    n_retired: usize,
    n_due: usize,
    rng: ChaCha8Rng,
    acc: Vec<Vec<SecondSample>>,
    records: Vec<LinkIntervalRecord>,
    series: Vec<MinutePoint>,
    free_flow_tt: Vec<f64>,
    transfer_buf: Vec<(usize, usize)>,
}

impl Sim {
    pub fn new(
        network: Arc<Network>,
        demand: &DemandTable,
        opmodes: Arc<OpModeTable>,
        cfg: SimConfig,
        seed: u64,
    ) -> Result<Sim> {
        network.validate_demand(demand)?;
        let links: Vec<LinkRt> = network
            .links()
            .iter()
            .map(|l| LinkRt {
                lanes: vec![Vec::new(); l.lanes as usize],
                length_m: l.length_m,
                v0_ms: l.speed_limit_ms(),
                idm: cfg.idm.for_link(l.speed_limit_ms()),
            })
            .collect();

        let mut vehicles = Vec::with_capacity(demand.trips.len());
        let mut pending = BinaryHeap::with_capacity(demand.trips.len());
        let mut free_flow_tt = Vec::with_capacity(demand.trips.len());
        let mut ff_cache: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        for (i, t) in demand.trips.iter().enumerate() {
            let o = network.node_index(t.origin).expect("validated");
            let d = network.node_index(t.destination).expect("validated");
            let dist = ff_cache
                .entry(o)
                .or_insert_with(|| free_flow_times(&network, o));
            let ff = dist[d];
            if !ff.is_finite() {
                return Err(Error::Validation(format!(
                    "vehicle {}: destination unreachable from origin",
                    t.vehicle
                )));
            }
            free_flow_tt.push(ff);
            vehicles.push(VehicleState {
                id: t.vehicle,
                origin: o,
                destination: d,
                departure_s: t.departure_s,
                phase: Phase::Pending,
                link: usize::MAX,
                lane: 0,
                pos_m: 0.0,
                speed_ms: 0.0,
                accel_ms2: 0.0,
                speed_at_second_start: 0.0,
                dist_m: 0.0,
                ghg_g: 0.0,
                nox_g: 0.0,
                path: Vec::new(),
                arrival_s: None,
            });
            pending.push(Pending {
                departure_s: t.departure_s,
                order: i,
                veh: i,
            });
        }

        let n_links = network.n_links();
        let n_nodes = network.n_nodes();
        Ok(Sim {
            network,
            opmodes,
            cfg,
            second: 0,
            vehicles,
            links,
            pending,
            origin_queues: vec![Default::default(); n_nodes],
            n_queued: 0,
            n_active: 0,
            n_retired: 0,
            n_due: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            acc: vec![vec![SecondSample::default(); INTERVAL_S]; n_links],
            records: Vec::new(),
            series: Vec::new(),
            free_flow_tt,
            transfer_buf: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn second(&self) -> u64 {
        self.second
    }

    /// All vehicles have completed their trips.
    pub fn done(&self) -> bool {
        self.n_retired == self.vehicles.len()
    }

    /// Records of one closed interval, in link-index order.
    pub fn interval_records(&self, interval: u32) -> &[LinkIntervalRecord] {
        let n = self.network.n_links();
        let lo = interval as usize * n;
        &self.records[lo..lo + n]
    }

    pub fn closed_intervals(&self) -> u32 {
        (self.records.len() / self.network.n_links()) as u32
    }

    /// Advances one second. Returns the interval index that closed at the
    /// end of this second, if any.
    pub fn step(&mut self, guidance: &dyn GuidanceView) -> Result<Option<u32>> {
        let s = self.second;
        self.release_departures(s);
        self.inject(guidance, s);
        self.advance_vehicles();
        self.resolve_transfers(guidance, s);
        self.sample_and_emit(s);
        self.audit(s)?;
        self.second += 1;

        let mut closed = None;
        if self.second % INTERVAL_S as u64 == 0 {
            closed = Some(self.close_interval()?);
        }
        Ok(closed)
    }

    /// Runs to completion under a fixed guidance view.
    pub fn run_to_completion(&mut self, guidance: &dyn GuidanceView) -> Result<()> {
        loop {
            let closed = self.step(guidance)?;
            if closed.is_some() && self.done() {
                return Ok(());
            }
        }
    }

    pub fn into_log(self) -> SimulationLog {
        assert!(self.done(), "into_log on an unfinished simulation");
        let mut vehicles: Vec<VehicleSummary> = self
            .vehicles
            .into_iter()
            .map(|v| {
                let arrival = v.arrival_s.expect("retired");
                VehicleSummary {
                    id: v.id,
                    departure_s: v.departure_s,
                    arrival_s: arrival,
                    tt_s: arrival as f64 - v.departure_s,
                    vkt_m: v.dist_m,
                    ghg_g: v.ghg_g,
                    nox_g: v.nox_g,
                    path: v.path,
                }
            })
            .collect();
        vehicles.sort_by_key(|v| v.id);
        let n_minutes = (self.records.len() / self.network.n_links()) as u32;
        SimulationLog {
            vehicles,
            records: self.records,
            series: self.series,
            n_minutes,
        }
    }

    fn release_departures(&mut self, s: u64) {
        // Vehicles become eligible once the clock reaches their departure
        // time; same-second arrivals join their origin queues in seeded
        // random order.
        let mut batch = Vec::new();
        while let Some(p) = self.pending.peek() {
            if p.departure_s <= s as f64 {
                batch.push(self.pending.pop().unwrap().veh);
            } else {
                break;
            }
        }
        if batch.len() > 1 {
            batch.shuffle(&mut self.rng);
        }
        for veh in batch {
            self.vehicles[veh].phase = Phase::Queued;
            self.origin_queues[self.vehicles[veh].origin].push_back(veh);
            self.n_queued += 1;
            self.n_due += 1;
        }
    }

    /// Least-occupied lane of a link; ties broken by seeded draw.
    fn choose_lane(&mut self, link: usize) -> usize {
        let min = self.links[link]
            .lanes
            .iter()
            .map(Vec::len)
            .min()
            .expect("links have >= 1 lane");
        let tied: Vec<usize> = self.links[link]
            .lanes
            .iter()
            .enumerate()
            .filter(|(_, l)| l.len() == min)
            .map(|(i, _)| i)
            .collect();
        if tied.len() == 1 {
            tied[0]
        } else {
            tied[self.rng.random_range(0..tied.len())]
        }
    }

    /// Entry gap of a lane: distance from link start to its rearmost
    /// vehicle, or the full length when empty.
    fn entry_gap(&self, link: usize, lane: usize) -> f64 {
        match self.links[link].lanes[lane].last() {
            Some(&rear) => self.vehicles[rear].pos_m,
            None => self.links[link].length_m,
        }
    }

    fn inject(&mut self, guidance: &dyn GuidanceView, s: u64) {
        let s0 = self.cfg.idm.s0_m;
        for node in 0..self.origin_queues.len() {
            loop {
                let Some(&veh) = self.origin_queues[node].front() else {
                    break;
                };
                let dest = self.vehicles[veh].destination;
                let Some(link) = guidance.next_link(node, dest) else {
                    break; // no route this epoch; hold and retry
                };
                let lane = self.choose_lane(link);
                if self.entry_gap(link, lane) <= s0 {
                    break;
                }
                self.origin_queues[node].pop_front();
                self.n_queued -= 1;
                self.n_active += 1;
                let v = &mut self.vehicles[veh];
                v.phase = Phase::OnLink;
                v.link = link;
                v.lane = lane;
                v.pos_m = 0.0;
                v.speed_ms = 0.0;
                v.speed_at_second_start = 0.0;
                v.path.push((self.network.link(link).id, s));
                self.links[link].lanes[lane].push(veh);
            }
        }
    }

    fn advance_vehicles(&mut self) {
        self.transfer_buf.clear();
        let mut updates: Vec<(f64, f64)> = Vec::new();
        for li in 0..self.links.len() {
            let length = self.links[li].length_m;
            let idm = self.links[li].idm;
            for lane in 0..self.links[li].lanes.len() {
                if self.links[li].lanes[lane].is_empty() {
                    continue;
                }
                updates.clear();
                // Accelerations from the start-of-second snapshot.
                for rank in 0..self.links[li].lanes[lane].len() {
                    let veh = self.links[li].lanes[lane][rank];
                    let v = self.vehicles[veh].speed_ms;
                    let leader = if rank > 0 {
                        let lead = self.links[li].lanes[lane][rank - 1];
                        let gap = self.vehicles[lead].pos_m - self.vehicles[veh].pos_m;
                        Some((self.vehicles[lead].speed_ms, gap))
                    } else {
                        None
                    };
                    let a = idm_acceleration(v, leader, &idm);
                    // Ballistic update: clamp speed into [0, v0], advance
                    // with the trapezoidal displacement, stop at link end.
                    let v_new = (v + a).clamp(0.0, idm.v0_ms);
                    let pos_new = (self.vehicles[veh].pos_m + 0.5 * (v + v_new)).min(length);
                    updates.push((v_new, pos_new));
                }
                // Never let a follower close within MIN_SEP_M of its leader.
                for rank in 1..updates.len() {
                    let limit = updates[rank - 1].1 - MIN_SEP_M;
                    if updates[rank].1 > limit {
                        updates[rank].1 = limit;
                        updates[rank].0 = updates[rank].0.min(updates[rank - 1].0);
                    }
                }
                for (rank, &(v_new, pos_new)) in updates.iter().enumerate() {
                    let veh = self.links[li].lanes[lane][rank];
                    let state = &mut self.vehicles[veh];
                    state.speed_at_second_start = state.speed_ms;
                    state.speed_ms = v_new;
                    state.pos_m = pos_new;
                }
                let front = self.links[li].lanes[lane][0];
                if self.vehicles[front].pos_m >= length {
                    self.transfer_buf.push((li, lane));
                }
            }
        }
    }

    fn resolve_transfers(&mut self, guidance: &dyn GuidanceView, s: u64) {
        let s0 = self.cfg.idm.s0_m;
        let transfers = std::mem::take(&mut self.transfer_buf);
        for (li, lane) in transfers {
            let veh = self.links[li].lanes[lane][0];
            let node = self
                .network
                .node_index(self.network.link(li).to_node)
                .expect("link endpoint");
            let dest = self.vehicles[veh].destination;

            if node == dest {
                self.links[li].lanes[lane].remove(0);
                let length = self.links[li].length_m;
                let state = &mut self.vehicles[veh];
                state.phase = Phase::Retired;
                state.dist_m += length;
                state.pos_m = length;
                state.speed_ms = 0.0;
                state.arrival_s = Some(s);
                self.acc[li][(s % INTERVAL_S as u64) as usize].exits += 1;
                self.n_active -= 1;
                self.n_retired += 1;
                continue;
            }

            let next = guidance.next_link(node, dest);
            let mut entered = false;
            if let Some(nl) = next {
                let nlane = self.choose_lane(nl);
                let gap = self.entry_gap(nl, nlane);
                if gap > s0 {
                    self.links[li].lanes[lane].remove(0);
                    let old_length = self.links[li].length_m;
                    let v0_next = self.links[nl].v0_ms;
                    let state = &mut self.vehicles[veh];
                    state.dist_m += old_length;
                    // Entry speed never outruns the available gap, so the
                    // new follower cannot reach its leader within one step.
                    state.speed_ms = state.speed_ms.min(v0_next).min(gap - s0);
                    state.pos_m = 0.0;
                    state.link = nl;
                    state.lane = nlane;
                    state.path.push((self.network.link(nl).id, s));
                    self.links[nl].lanes[nlane].push(veh);
                    self.acc[li][(s % INTERVAL_S as u64) as usize].exits += 1;
                    entered = true;
                }
            }
            if !entered {
                // Wait at the link end at speed 0 and retry next second.
                let length = self.links[li].length_m;
                let state = &mut self.vehicles[veh];
                state.pos_m = length;
                state.speed_ms = 0.0;
            }
        }
    }

    fn sample_and_emit(&mut self, s: u64) {
        let k = (s % INTERVAL_S as u64) as usize;
        for li in 0..self.links.len() {
            for lane in 0..self.links[li].lanes.len() {
                for rank in 0..self.links[li].lanes[lane].len() {
                    let veh = self.links[li].lanes[lane][rank];
                    let state = &mut self.vehicles[veh];
                    let accel = state.speed_ms - state.speed_at_second_start;
                    state.accel_ms2 = accel;
                    let (ghg, nox) = self.opmodes.emission_rates(state.speed_ms, accel);
                    state.ghg_g += ghg;
                    state.nox_g += nox;
                    let sample = &mut self.acc[li][k];
                    sample.n_vehicles += 1;
                    sample.speed_sum_ms += state.speed_ms;
                    sample.ghg_g += ghg;
                    sample.nox_g += nox;
                }
            }
        }
    }

    /// Always-on invariants: conservation, collision-freedom, speed
    /// bounds, and the non-termination guard.
    fn audit(&self, s: u64) -> Result<()> {
        assert_eq!(
            self.n_due,
            self.n_queued + self.n_active + self.n_retired,
            "vehicle conservation violated at second {s}"
        );
        for (li, link) in self.links.iter().enumerate() {
            for lane in &link.lanes {
                for w in lane.windows(2) {
                    let gap = self.vehicles[w[0]].pos_m - self.vehicles[w[1]].pos_m;
                    assert!(
                        gap > 0.0,
                        "collision on link {li} at second {s}: gap {gap}"
                    );
                }
                for &veh in lane {
                    let v = self.vehicles[veh].speed_ms;
                    assert!(
                        (0.0..=link.v0_ms + 1e-9).contains(&v),
                        "speed bound violated on link {li}: {v} vs v0 {}",
                        link.v0_ms
                    );
                    let p = self.vehicles[veh].pos_m;
                    assert!((0.0..=link.length_m).contains(&p));
                }
            }
        }
        // Non-termination guard, checked once per minute.
        if (s + 1) % INTERVAL_S as u64 == 0 {
            for (i, v) in self.vehicles.iter().enumerate() {
                if matches!(v.phase, Phase::Queued | Phase::OnLink) {
                    let spent = s as f64 - v.departure_s;
                    let budget = self.cfg.guard_multiple * self.free_flow_tt[i].max(60.0);
                    if spent > budget {
                        return Err(Error::NonTermination {
                            vehicle: v.id.0,
                            multiple: self.cfg.guard_multiple,
                            spent_s: spent as u64,
                            free_flow_s: self.free_flow_tt[i],
                            second: s,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn close_interval(&mut self) -> Result<u32> {
        let interval = self.closed_intervals();
        let mut minute_speed_sum = 0.0;
        let mut minute_samples = 0u64;
        let mut minute_ghg = 0.0;
        let mut minute_nox = 0.0;
        let mut recs = Vec::with_capacity(self.links.len());
        for (li, acc) in self.acc.iter_mut().enumerate() {
            for s in acc.iter() {
                minute_speed_sum += s.speed_sum_ms;
                minute_samples += s.n_vehicles as u64;
                minute_ghg += s.ghg_g;
                minute_nox += s.nox_g;
            }
            recs.push(aggregate(self.network.link(li), interval, acc)?);
            acc.fill(SecondSample::default());
        }
        fill_inlink_speeds(&self.network, &mut recs);
        self.records.append(&mut recs);
        self.series.push(MinutePoint {
            minute: interval,
            avg_speed_kmh: if minute_samples == 0 {
                0.0
            } else {
                minute_speed_sum / minute_samples as f64 * 3.6
            },
            ghg_g: minute_ghg,
            nox_g: minute_nox,
        });
        Ok(interval)
    }
}

/// One-to-all free-flow travel times from `origin` (node index), seconds.
fn free_flow_times(network: &Network, origin: usize) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> Ordering {
            other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    let mut dist = vec![f64::INFINITY; network.n_nodes()];
    let mut heap = BinaryHeap::new();
    dist[origin] = 0.0;
    heap.push(Item(0.0, origin));
    while let Some(Item(d, n)) = heap.pop() {
        if d > dist[n] {
            continue;
        }
        for &li in network.out_links(n) {
            let link = network.link(li);
            let m = network.node_index(link.to_node).expect("endpoint");
            let nd = d + link.free_flow_tt_s();
            if nd < dist[m] {
                dist[m] = nd;
                heap.push(Item(nd, m));
            }
        }
    }
    dist
}

/// Guidance that always follows free-flow shortest paths. Used for tests
/// and as the first-epoch table before any link state exists.
#[derive(Debug, Clone)]
pub struct StaticGuidance {
    next: Vec<Vec<Option<usize>>>,
}

impl StaticGuidance {
    /// Builds next-hop rows from per-link weights (free-flow times if
    /// `None`), smallest-link-id tie-break.
    pub fn from_weights(network: &Network, weights: Option<&[f64]>) -> StaticGuidance {
        let n_nodes = network.n_nodes();
        let mut next = vec![vec![None; n_nodes]; n_nodes];
        for dest in 0..n_nodes {
            let dist = reverse_costs(network, dest, weights);
            for node in 0..n_nodes {
                if node == dest {
                    continue;
                }
                let mut best: Option<(f64, usize)> = None;
                for &li in network.out_links(node) {
                    let link = network.link(li);
                    let m = network.node_index(link.to_node).expect("endpoint");
                    let w = match weights {
                        Some(ws) => ws[li],
                        None => link.free_flow_tt_s(),
                    };
                    let total = w + dist[m];
                    if total.is_finite() {
                        let better = match best {
                            None => true,
                            Some((bw, _)) => total < bw - 1e-12,
                        };
                        if better {
                            best = Some((total, li));
                        }
                    }
                }
                next[node][dest] = best.map(|(_, li)| li);
            }
        }
        StaticGuidance { next }
    }
}

impl GuidanceView for StaticGuidance {
    fn next_link(&self, node_idx: usize, dest_idx: usize) -> Option<usize> {
        self.next[node_idx][dest_idx]
    }
}

fn reverse_costs(network: &Network, dest: usize, weights: Option<&[f64]>) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> Ordering {
            other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    let mut dist = vec![f64::INFINITY; network.n_nodes()];
    let mut heap = BinaryHeap::new();
    dist[dest] = 0.0;
    heap.push(Item(0.0, dest));
    while let Some(Item(d, n)) = heap.pop() {
        if d > dist[n] {
            continue;
        }
        for &li in network.in_links(n) {
            let link = network.link(li);
            let m = network.node_index(link.from_node).expect("endpoint");
            let w = match weights {
                Some(ws) => ws[li],
                None => link.free_flow_tt_s(),
            };
            let nd = d + w;
            if nd < dist[m] {
                dist[m] = nd;
                heap.push(Item(nd, m));
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{generate_grid_network, DemandTable, Link, NodeId, Trip};

    fn two_link_net() -> Network {
        Network::from_links(vec![
            Link {
                id: LinkId(0),
                from_node: NodeId(0),
                to_node: NodeId(1),
                length_m: 400.0,
                lanes: 2,
                speed_limit_kmh: 40,
            },
            Link {
                id: LinkId(1),
                from_node: NodeId(1),
                to_node: NodeId(2),
                length_m: 300.0,
                lanes: 2,
                speed_limit_kmh: 40,
            },
        ])
        .unwrap()
    }

    fn demand_one(dest: u64) -> DemandTable {
        DemandTable {
            trips: vec![Trip {
                vehicle: VehicleId(0),
                origin: NodeId(0),
                destination: NodeId(dest),
                departure_s: 0.0,
            }],
        }
    }

    fn run_simple(network: Network, demand: &DemandTable, seed: u64) -> SimulationLog {
        let network = Arc::new(network);
        let guidance = StaticGuidance::from_weights(&network, None);
        let mut sim = Sim::new(
            network,
            demand,
            Arc::new(OpModeTable::default_table()),
            SimConfig::default(),
            seed,
        )
        .unwrap();
        sim.run_to_completion(&guidance).unwrap();
        sim.into_log()
    }

    /// Independent oracle for the single-vehicle free link: integrate the
    /// same ballistic IDM update directly.
    fn idm_traverse_oracle(length_m: f64, v0_kmh: f64) -> u64 {
        let p = IdmDefaults::default().for_link(v0_kmh / 3.6);
        let mut v = 0.0f64;
        let mut x = 0.0f64;
        let mut t = 0u64;
        loop {
            let a = p.a_max * (1.0 - (v / p.v0_ms).powf(p.delta));
            let v_new = (v + a).clamp(0.0, p.v0_ms);
            x += 0.5 * (v + v_new);
            v = v_new;
            if x >= length_m {
                return t;
            }
            t += 1;
        }
    }

    #[test]
    fn single_vehicle_traversal_matches_oracle() {
        let net = Network::from_links(vec![Link {
            id: LinkId(0),
            from_node: NodeId(0),
            to_node: NodeId(1),
            length_m: 400.0,
            lanes: 2,
            speed_limit_kmh: 40,
        }])
        .unwrap();
        let log = run_simple(net, &demand_one(1), 1);
        let oracle_arrival = idm_traverse_oracle(400.0, 40.0);
        assert_eq!(log.vehicles[0].arrival_s, oracle_arrival);
        // Strictly slower than the 36 s free-flow time because of the
        // standing start.
        assert!(log.vehicles[0].tt_s > 36.0);
        assert_eq!(log.vehicles[0].vkt_m, 400.0);
    }

    #[test]
    fn empty_demand_is_vacuous() {
        let network = Arc::new(two_link_net());
        let guidance = StaticGuidance::from_weights(&network, None);
        let mut sim = Sim::new(
            network,
            &DemandTable::default(),
            Arc::new(OpModeTable::default_table()),
            SimConfig::default(),
            0,
        )
        .unwrap();
        for _ in 0..61 {
            sim.step(&guidance).unwrap();
        }
        assert_eq!(sim.second(), 61);
        assert!(sim.done());
        assert_eq!(sim.closed_intervals(), 1);
        let rec = &sim.interval_records(0)[0];
        assert_eq!(rec.v_kmh, 40.0);
        assert_eq!(rec.ghg_total(), 0.0);
    }

    #[test]
    fn two_link_path_recorded() {
        let log = run_simple(two_link_net(), &demand_one(2), 1);
        let v = &log.vehicles[0];
        assert_eq!(v.path.len(), 2);
        assert_eq!(v.path[0].0, LinkId(0));
        assert_eq!(v.path[1].0, LinkId(1));
        assert!(v.path[1].1 > v.path[0].1);
        assert!((v.vkt_m - 700.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let net = generate_grid_network(4, 4, 3).unwrap();
        let demand = crate::net::generate_demand(
            &net,
            120,
            crate::net::DepartureDistribution::Uniform,
            300.0,
            9,
        )
        .unwrap();
        let a = run_simple(net.clone(), &demand, 42);
        let b = run_simple(net, &demand, 42);
        assert_eq!(a.vehicles_to_csv(), b.vehicles_to_csv());
        assert_eq!(a.series.len(), b.series.len());
    }

    #[test]
    fn standing_queue_stays_stopped() {
        // Leader blocked at link end, follower queued behind it: both must
        // settle at speed 0.
        let net = Arc::new(two_link_net());
        let demand = DemandTable {
            trips: vec![
                Trip {
                    vehicle: VehicleId(0),
                    origin: NodeId(0),
                    destination: NodeId(2),
                    departure_s: 0.0,
                },
                Trip {
                    vehicle: VehicleId(1),
                    origin: NodeId(0),
                    destination: NodeId(2),
                    departure_s: 0.0,
                },
            ],
        };
        let mut sim = Sim::new(
            net,
            &demand,
            Arc::new(OpModeTable::default_table()),
            SimConfig::default(),
            7,
        )
        .unwrap();
        // Guidance that routes out of node 0 but strands vehicles at node 1.
        struct FirstLinkOnly;
        impl GuidanceView for FirstLinkOnly {
            fn next_link(&self, node: usize, _d: usize) -> Option<usize> {
                (node == 0).then_some(0)
            }
        }
        for _ in 0..120 {
            sim.step(&FirstLinkOnly).unwrap();
        }
        // Both vehicles queued on link 0 (possibly different lanes), the
        // leaders waiting at the end at speed 0.
        let stopped: Vec<&VehicleState> = sim
            .vehicles
            .iter()
            .filter(|v| matches!(v.phase, Phase::OnLink))
            .collect();
        assert_eq!(stopped.len(), 2);
        for v in stopped {
            assert_eq!(v.speed_ms, 0.0);
        }
    }

    #[test]
    fn conservation_and_replication_spread() {
        let net = generate_grid_network(4, 4, 11).unwrap();
        let demand = crate::net::generate_demand(
            &net,
            200,
            crate::net::DepartureDistribution::Uniform,
            300.0,
            5,
        )
        .unwrap();
        let mut means = Vec::new();
        let mut csvs = Vec::new();
        for seed in 0..5 {
            let log = run_simple(net.clone(), &demand, seed);
            assert_eq!(log.vehicles.len(), 200);
            means.push(log.mean_tt_s());
            csvs.push(log.vehicles_to_csv());
        }
        // Different seeds must actually change the trajectories.
        assert!(
            csvs.windows(2).any(|w| w[0] != w[1]),
            "seeds produced identical logs"
        );
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        let sd = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (means.len() - 1) as f64)
            .sqrt();
        assert!(sd / mean < 0.20, "CoV {:.3} too large", sd / mean);
    }

    #[test]
    fn vkt_additivity() {
        let net = generate_grid_network(4, 4, 2).unwrap();
        let demand = crate::net::generate_demand(
            &net,
            80,
            crate::net::DepartureDistribution::Exponential,
            240.0,
            3,
        )
        .unwrap();
        let log = run_simple(net.clone(), &demand, 1);
        for v in &log.vehicles {
            let sum: f64 = v
                .path
                .iter()
                .map(|(lid, _)| net.link(net.link_index(*lid).unwrap()).length_m)
                .sum();
            assert!(
                (sum - v.vkt_m).abs() < 1e-9,
                "vehicle {}: path sum {sum} vs vkt {}",
                v.id,
                v.vkt_m
            );
        }
    }

    #[test]
    fn guard_aborts_gridlock() {
        // Single link, guidance that never lets anyone leave node 1, and a
        // queue long enough to hold vehicles beyond the budget.
        let net = Arc::new(two_link_net());
        struct FirstLinkOnly;
        impl GuidanceView for FirstLinkOnly {
            fn next_link(&self, node: usize, _d: usize) -> Option<usize> {
                (node == 0).then_some(0)
            }
        }
        let demand = demand_one(2);
        let mut sim = Sim::new(
            net,
            &demand,
            Arc::new(OpModeTable::default_table()),
            SimConfig {
                guard_multiple: 2.0,
                ..SimConfig::default()
            },
            0,
        )
        .unwrap();
        let mut result = Ok(None);
        for _ in 0..100_000 {
            result = sim.step(&FirstLinkOnly);
            if result.is_err() {
                break;
            }
        }
        assert!(matches!(result, Err(Error::NonTermination { .. })));
    }
}
