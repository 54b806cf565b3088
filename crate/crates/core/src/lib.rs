pub mod error;
pub mod excursion;
pub mod field;
pub mod green;
pub mod lattice;
pub mod linalg;
pub mod potential;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod coarse;
pub mod tilt;

pub use error::{Error, Result};
pub use green::{GreenOracle, GreenTable};
pub use lattice::{Adjacency, BoxSpec, Grid, LatticePath, Point, PointSet, Region, RenormLattice, TubeSpec};
pub use potential::{CapacityReport, EquilibriumMeasure, EscapeEstimate, Kernel, KilledGreen, Method};
pub use field::{DecompositionRecord, FieldSample, Law, MidpointExtension};
pub use excursion::{ClusterLabeling, EventKind, EventReport, Witness};
pub use coarse::{AdmissibleCollection, CgParams, Lambda, LambdaKind};
pub use tilt::{EntropyBoundRecord, ImportanceEstimate, TiltSpec};
