//! Small-signal dq admittance identification for heterogeneous
//! inverter-based resources (IBRs).
//!
//! The crate covers the offline and online phases of a cluster-specialized
//! identification pipeline:
//!
//! * [`ssmodel`]: state-space blocks, interconnection and frequency response
//! * [`ibr`]: linearized grid-following / grid-forming inverter models
//! * [`dataset`]: operating-point and frequency grids, sample generation, CSV
//! * [`clustering`]: |Y_dd| features, K-means, silhouette, K selection, assignment
//! * [`fnn`]: feed-forward regression networks trained with Adam

pub mod clustering;
pub mod dataset;
pub mod fnn;
pub mod ibr;
pub mod ssmodel;
