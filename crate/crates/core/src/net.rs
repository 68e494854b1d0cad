//! Road network and demand data model, synthetic grid generation, and
//! scenario file I/O.
//!
//! Scenario files are plain CSV (UTF-8, LF, base-10 numbers):
//!
//! * network: `link_id,from_node,to_node,length_m,lanes,speed_limit_kmh`
//! * demand:  `vehicle_id,origin,destination,departure_s`

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed limits observed in the case-study network, km/h.
pub const SPEED_LIMITS_KMH: [u32; 5] = [10, 30, 40, 60, 80];
/// Sampling probabilities for [`SPEED_LIMITS_KMH`] in generated networks.
pub const SPEED_LIMIT_PROBS: [f64; 5] = [0.02, 0.01, 0.30, 0.59, 0.08];
/// Lane counts and their sampling probabilities in generated networks.
pub const LANE_COUNTS: [u32; 4] = [1, 2, 3, 4];
pub const LANE_PROBS: [f64; 4] = [0.07, 0.71, 0.15, 0.07];
/// Link length range for generated networks, meters.
pub const LINK_LENGTH_RANGE_M: (f64, f64) = (100.0, 450.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One directed road link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    /// Length in meters, > 0.
    pub length_m: f64,
    /// Lane count, 1..=4.
    pub lanes: u32,
    /// Speed limit in km/h, one of [`SPEED_LIMITS_KMH`].
    pub speed_limit_kmh: u32,
}

impl Link {
    pub fn speed_limit_ms(&self) -> f64 {
        self.speed_limit_kmh as f64 / 3.6
    }

    /// Free-flow traversal time in seconds.
    pub fn free_flow_tt_s(&self) -> f64 {
        self.length_m / self.speed_limit_ms()
    }

    fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) || !self.length_m.is_finite() {
            return Err(Error::Validation(format!(
                "link {}: length must be positive and finite, got {}",
                self.id, self.length_m
            )));
        }
        if !LANE_COUNTS.contains(&self.lanes) {
            return Err(Error::Validation(format!(
                "link {}: lanes must be in 1..=4, got {}",
                self.id, self.lanes
            )));
        }
        if !SPEED_LIMITS_KMH.contains(&self.speed_limit_kmh) {
            return Err(Error::Validation(format!(
                "link {}: speed limit must be one of {:?} km/h, got {}",
                self.id, SPEED_LIMITS_KMH, self.speed_limit_kmh
            )));
        }
        if self.from_node == self.to_node {
            return Err(Error::Validation(format!(
                "link {}: from_node equals to_node ({})",
                self.id, self.from_node
            )));
        }
        Ok(())
    }
}

/// Directed road network with adjacency views.
///
/// Nodes and links are kept sorted by id so that every derived index is
/// deterministic. Internal indices (`usize`) are positions in the sorted
/// vectors and are what the simulator and router use.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<NodeId>,
    links: Vec<Link>,
    node_pos: HashMap<NodeId, usize>,
    link_pos: HashMap<LinkId, usize>,
    out: Vec<Vec<usize>>,
    inl: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a network from a link list. Node set is the union of link
    /// endpoints. Fails on duplicate link ids or invalid link attributes.
    pub fn from_links(mut links: Vec<Link>) -> Result<Network> {
        links.sort_by_key(|l| l.id);
        for w in links.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Validation(format!("duplicate link id {}", w[0].id)));
            }
        }
        for l in &links {
            l.validate()?;
        }
        let mut nodes: Vec<NodeId> = links
            .iter()
            .flat_map(|l| [l.from_node, l.to_node])
            .collect();
        nodes.sort();
        nodes.dedup();
        let node_pos: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let link_pos: HashMap<LinkId, usize> =
            links.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        let mut out = vec![Vec::new(); nodes.len()];
        let mut inl = vec![Vec::new(); nodes.len()];
        for (i, l) in links.iter().enumerate() {
            out[node_pos[&l.from_node]].push(i);
            inl[node_pos[&l.to_node]].push(i);
        }
        Ok(Network {
            nodes,
            links,
            node_pos,
            link_pos,
            out,
            inl,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn node(&self, idx: usize) -> NodeId {
        self.nodes[idx]
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.node_pos.get(&id).copied()
    }

    pub fn link_index(&self, id: LinkId) -> Option<usize> {
        self.link_pos.get(&id).copied()
    }

    /// Outgoing link indices of a node index.
    pub fn out_links(&self, node_idx: usize) -> &[usize] {
        &self.out[node_idx]
    }

    /// Incoming link indices of a node index.
    pub fn in_links(&self, node_idx: usize) -> &[usize] {
        &self.inl[node_idx]
    }

    /// Node indices reachable from `origin` (by index), including itself.
    pub fn reachable_from(&self, origin: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::new();
        seen[origin] = true;
        queue.push_back(origin);
        while let Some(n) = queue.pop_front() {
            for &li in &self.out[n] {
                let m = self.node_pos[&self.links[li].to_node];
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    /// Checks that every trip's destination is reachable from its origin.
    pub fn validate_demand(&self, demand: &DemandTable) -> Result<()> {
        let mut reach_cache: HashMap<usize, Vec<bool>> = HashMap::new();
        for trip in &demand.trips {
            let o = self.node_index(trip.origin).ok_or_else(|| {
                Error::Validation(format!(
                    "vehicle {}: origin node {} not in network",
                    trip.vehicle, trip.origin
                ))
            })?;
            let d = self.node_index(trip.destination).ok_or_else(|| {
                Error::Validation(format!(
                    "vehicle {}: destination node {} not in network",
                    trip.vehicle, trip.destination
                ))
            })?;
            let reach = reach_cache
                .entry(o)
                .or_insert_with(|| self.reachable_from(o));
            if !reach[d] {
                return Err(Error::Validation(format!(
                    "vehicle {}: destination {} unreachable from origin {}",
                    trip.vehicle, trip.destination, trip.origin
                )));
            }
        }
        Ok(())
    }

    /// Canonical CSV serialization (links sorted by id).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("link_id,from_node,to_node,length_m,lanes,speed_limit_kmh\n");
        for l in &self.links {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.id, l.from_node, l.to_node, l.length_m, l.lanes, l.speed_limit_kmh
            ));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// One trip request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trip {
    pub vehicle: VehicleId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub departure_s: f64,
}

/// Vehicle demand: who departs where and when.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemandTable {
    pub trips: Vec<Trip>,
}

impl DemandTable {
    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.trips {
            if !seen.insert(t.vehicle) {
                return Err(Error::Validation(format!(
                    "duplicate vehicle id {}",
                    t.vehicle
                )));
            }
            if t.origin == t.destination {
                return Err(Error::Validation(format!(
                    "vehicle {}: origin equals destination ({})",
                    t.vehicle, t.origin
                )));
            }
            if !(t.departure_s >= 0.0) || !t.departure_s.is_finite() {
                return Err(Error::Validation(format!(
                    "vehicle {}: departure time must be finite and non-negative, got {}",
                    t.vehicle, t.departure_s
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("vehicle_id,origin,destination,departure_s\n");
        for t in &self.trips {
            s.push_str(&format!(
                "{},{},{},{}\n",
                t.vehicle, t.origin, t.destination, t.departure_s
            ));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.trim_end_matches('\r').split(',').map(str::trim).collect()
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line_no: usize,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| Error::parse(path, line_no, format!("bad {name} value '{raw}'")))
}

/// Loads and validates a network CSV.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let expected = "link_id,from_node,to_node,length_m,lanes,speed_limit_kmh";
    if split_csv_line(header).join(",") != expected {
        return Err(Error::parse(
            path,
            1,
            format!("bad header, expected '{expected}'"),
        ));
    }
    let mut links = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_csv_line(line);
        if f.len() != 6 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 6 fields, got {}", f.len()),
            ));
        }
        links.push(Link {
            id: LinkId(parse_field(path, line_no, "link_id", f[0])?),
            from_node: NodeId(parse_field(path, line_no, "from_node", f[1])?),
            to_node: NodeId(parse_field(path, line_no, "to_node", f[2])?),
            length_m: parse_field(path, line_no, "length_m", f[3])?,
            lanes: parse_field(path, line_no, "lanes", f[4])?,
            speed_limit_kmh: parse_field(path, line_no, "speed_limit_kmh", f[5])?,
        });
    }
    Network::from_links(links)
}

/// Loads and validates a demand CSV.
pub fn load_demand(path: impl AsRef<Path>) -> Result<DemandTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let expected = "vehicle_id,origin,destination,departure_s";
    if split_csv_line(header).join(",") != expected {
        return Err(Error::parse(
            path,
            1,
            format!("bad header, expected '{expected}'"),
        ));
    }
    let mut trips = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_csv_line(line);
        if f.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 fields, got {}", f.len()),
            ));
        }
        trips.push(Trip {
            vehicle: VehicleId(parse_field(path, line_no, "vehicle_id", f[0])?),
            origin: NodeId(parse_field(path, line_no, "origin", f[1])?),
            destination: NodeId(parse_field(path, line_no, "destination", f[2])?),
            departure_s: parse_field(path, line_no, "departure_s", f[3])?,
        });
    }
    let table = DemandTable { trips };
    table.validate()?;
    Ok(table)
}

/// Generates a bidirectional `rows x cols` grid network.
///
/// Each undirected grid edge becomes two directed links sharing a length
/// drawn uniformly from [`LINK_LENGTH_RANGE_M`]; lanes and speed limit are
/// sampled independently per direction from the case-study marginals.
/// Node ids are `row * cols + col`; link ids are consecutive from 0.
pub fn generate_grid_network(rows: u32, cols: u32, seed: u64) -> Result<Network> {
    if rows < 2 || cols < 2 {
        return Err(Error::Validation(format!(
            "grid must be at least 2x2, got {rows}x{cols}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed_dist = WeightedIndex::new(SPEED_LIMIT_PROBS).expect("static weights");
    let lane_dist = WeightedIndex::new(LANE_PROBS).expect("static weights");
    let node_id = |r: u32, c: u32| NodeId((r * cols + c) as u64);

    let mut links = Vec::new();
    let mut next_id = 0u64;
    let mut push_pair = |rng: &mut ChaCha8Rng, links: &mut Vec<Link>, a: NodeId, b: NodeId| {
        let length_m = rng.random_range(LINK_LENGTH_RANGE_M.0..=LINK_LENGTH_RANGE_M.1);
        for (from, to) in [(a, b), (b, a)] {
            links.push(Link {
                id: LinkId(next_id),
                from_node: from,
                to_node: to,
                length_m,
                lanes: LANE_COUNTS[lane_dist.sample(rng)],
                speed_limit_kmh: SPEED_LIMITS_KMH[speed_dist.sample(rng)],
            });
            next_id += 1;
        }
    };

    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                push_pair(&mut rng, &mut links, node_id(r, c), node_id(r, c + 1));
            }
            if r + 1 < rows {
                push_pair(&mut rng, &mut links, node_id(r, c), node_id(r + 1, c));
            }
        }
    }
    Network::from_links(links)
}

/// Departure time distribution for demand generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepartureDistribution {
    /// Uniform on [0, horizon].
    Uniform,
    /// Normal(horizon/2, horizon/6), rejection-truncated to [0, horizon].
    Normal,
    /// Exponential with mean horizon/3, rejection-truncated to [0, horizon].
    Exponential,
}

impl std::str::FromStr for DepartureDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "normal" => Ok(Self::Normal),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::Config(format!(
                "unknown departure distribution '{other}' (expected uniform, normal, or exponential)"
            ))),
        }
    }
}

/// Generates `n_vehicles` trips with OD pairs uniform over reachable node
/// pairs and departure times from the given distribution on [0, horizon].
pub fn generate_demand(
    network: &Network,
    n_vehicles: u32,
    distribution: DepartureDistribution,
    horizon_s: f64,
    seed: u64,
) -> Result<DemandTable> {
    if n_vehicles < 1 {
        return Err(Error::Validation("n_vehicles must be >= 1".into()));
    }
    if !(horizon_s > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    if network.n_nodes() < 2 {
        return Err(Error::Validation("network must have at least 2 nodes".into()));
    }

    // All ordered reachable pairs, in deterministic node order.
    let mut pairs = Vec::new();
    for o in 0..network.n_nodes() {
        let reach = network.reachable_from(o);
        for (d, ok) in reach.iter().enumerate() {
            if *ok && d != o {
                pairs.push((o, d));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoReachablePair);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(horizon_s / 2.0, horizon_s / 6.0).expect("valid sd");
    let exp = Exp::new(3.0 / horizon_s).expect("valid rate");
    let mut trips = Vec::with_capacity(n_vehicles as usize);
    for v in 0..n_vehicles {
        let (o, d) = pairs[rng.random_range(0..pairs.len())];
        let departure_s = match distribution {
            DepartureDistribution::Uniform => rng.random_range(0.0..=horizon_s),
            DepartureDistribution::Normal => loop {
                let x: f64 = normal.sample(&mut rng);
                if (0.0..=horizon_s).contains(&x) {
                    break x;
                }
            },
            DepartureDistribution::Exponential => loop {
                let x: f64 = exp.sample(&mut rng);
                if x <= horizon_s {
                    break x;
                }
            },
        };
        trips.push(Trip {
            vehicle: VehicleId(v as u64),
            origin: network.node(o),
            destination: network.node(d),
            departure_s,
        });
    }
    let table = DemandTable { trips };
    table.validate()?;
    Ok(table)
}
