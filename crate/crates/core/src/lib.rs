//! Microscopic traffic and emission simulation with a distributed,
//! anticipatory, multi-objective eco-routing layer.
//!
//! The crate is organized around the pipeline that produces routing
//! decisions:
//!
//! * [`net`] — road network and demand model, synthetic grid generation,
//!   scenario file I/O.
//! * [`microsim`] — second-by-second car-following simulation (IDM) with
//!   node transfers, origin queues, and per-vehicle statistics.
//! * [`emissions`] — vehicle-specific-power based per-second GHG/NOx rates
//!   from an operating-mode bin table.
//! * [`linkstate`] — per-minute aggregation of link indicators and the six
//!   link cost formulas used for routing.
//! * [`forecast`] — lagged correlation analysis, sequence datasets, and
//!   t+1 predictors (from-scratch LSTM, linear AR, identity, oracle).
//! * [`routing`] — per-minute cost refresh, weighted multi-objective
//!   shortest paths, per-intersection next-hop guidance.
//! * [`experiment`] — seeded replication runner, performance indicators,
//!   report files, and strategy comparisons.

pub mod emissions;
pub mod error;
pub mod experiment;
pub mod forecast;
pub mod linkstate;
pub mod microsim;
pub mod net;
pub mod routing;

pub use error::{Error, Result};
