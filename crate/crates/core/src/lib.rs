//! Control plane for programmable hexagonal photonic meshes.
//!
//! A mesh is a honeycomb of hexagonal cells whose edges are programmable unit
//! cells (PUCs): 2x2 Mach-Zehnder couplers that can be set to bar, cross, or a
//! tunable intermediate coupling. By programming the PUCs, the mesh acts as a
//! reconfigurable optical device: point-to-point interconnects, N x N circuit
//! switches, and 1 x N multicast splitters.
//!
//! The crate is organised bottom-up:
//!
//! * [`topology`] — hardware description: PUCs, waveguide links, external
//!   I/O ports, a parametric generator, and a JSON file format.
//! * [`graph`] — the weighted directed routing graph (eight artificial nodes
//!   per PUC) and path/state bookkeeping.
//! * [`interconnect`] — single-pair shortest-path routing, batch routing,
//!   exhaustive path enumeration (test oracle), and self-healing re-routes.
//! * [`switching`] — N x N switch synthesis with conflict detection, the
//!   edge-penalty and sequential solvers, and permutation feasibility sweeps.
//! * [`multicast`] — 1 x N multicast trees with loss-compensated splitting
//!   ratios, plus a fabrication-spread deviation study.
//! * [`powersim`] — incoherent optical power propagation used as an
//!   independent verification oracle for every synthesized configuration.

pub mod graph;
pub mod interconnect;
pub mod multicast;
pub mod powersim;
pub mod switching;
pub mod topology;
pub mod units;
