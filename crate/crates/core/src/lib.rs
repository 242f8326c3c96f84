//! An embedded real-time data warehouse.
//!
//! Historical data lives in immutable, epoch-versioned segments. Fresh data
//! arrives through one of several load strategies: periodic batch loads,
//! continuous trickle inserts into a real-time partition, trickle-and-flip
//! through staging tables, or an external in-memory data cache. Queries see
//! all of it as one logical table under snapshot isolation. The planner
//! picks a merge direction per query: the real-time slice can be imaged next
//! to historical data, or a historical slice can be loaded into the cache.
//! Threshold alerts run on cycle schedules or on commits, with one event at
//! most per rule and cycle.
//!
//! Module map:
//!
//! - [`model`]: schemas, validation, slowly changing dimensions
//! - [`storage`]: segments, real-time partition, staging, cache, snapshots, log
//! - [`etl`]: extract / clean / transform and the load-strategy registry
//! - [`query`]: query specs, text grammar, planner, merge routes, execution
//! - [`alerting`]: rules, cycle scheduling, dedup, delivery

pub mod alerting;
pub mod clock;
pub mod etl;
pub mod model;
pub mod query;
pub mod storage;
pub mod value;

pub use clock::{Clock, SimClock, WallClock};
pub use value::{Fixed, ScalarKind, Timestamp, Value};
