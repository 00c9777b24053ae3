//! Layered (deep) sparse coding toolkit.
//!
//! A signal `y` is modelled as `y ≈ D_1 x_1`, `x_1 ≈ D_2 x_2`, … with every
//! `x_j` sparse. The crate provides
//!
//! * dictionaries, instances and seeded generators ([`model`]),
//! * mutual and generalized mutual coherence via linear programming ([`coherence`]),
//! * reference pursuit solvers ([`pursuit`]) and LISTA-CP schedules ([`lista`]),
//! * compilation of a schedule into an affine + activation network ([`network`]),
//! * uniqueness and stability certificates ([`guarantees`]),
//! * top-down layered solving ([`pipeline`]) and seeded suites ([`suite`]).

pub mod coherence;
pub mod conv;
pub mod error;
pub mod guarantees;
pub mod io;
pub mod linalg;
pub mod lista;
pub mod lp;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod pursuit;
pub mod suite;

pub use coherence::{generalized_mutual_coherence, mutual_coherence, CoherenceCertificate, CoherenceMode};
pub use error::{DscError, Result};
pub use guarantees::{stability_ledger, InstanceCertificate, StabilityLedger};
pub use lista::{compute_schedule, Activation, EnvelopeRule, ListaSchedule, ScheduleOptions};
pub use model::{
    generate_instance, ChainMode, Dictionary, DictionaryKind, DscInstance, InstanceRecipe, LayeredDictionary,
    SignalClass, SparseCode,
};
pub use network::{compile, AffineNetwork};
pub use pipeline::{solve_layered, LayeredRun, Method, SolveOptions};
pub use suite::{run_suite, verify, SuiteConfig, Tolerances};

pub use nalgebra::{DMatrix, DVector};
