//! Seeded fixtures shared by the benchmarks.

use dsc_core::coherence::{generalized_mutual_coherence, CoherenceMode};
use dsc_core::lista::{schedule_from_certificate, EnvelopeRule, ListaSchedule, ScheduleOptions};
use dsc_core::model::{incoherent_dictionary, random_sparse_vector, seeded_rng, Dictionary, SignalClass};
use dsc_core::DVector;

/// Dictionary plus one noiseless observation of an `s`-sparse code.
pub struct Fixture {
    pub dict: Dictionary,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

pub fn fixture(rows: usize, cols: usize, s: usize, seed: u64) -> Fixture {
    let mut rng = seeded_rng(seed);
    let dict = incoherent_dictionary(&mut rng, rows, cols).expect("valid shape");
    let x = random_sparse_vector(&mut rng, cols, s, 1.0);
    let y = dict.matrix() * &x;
    Fixture { dict, x, y }
}

/// Support-aware ReLU schedule for a noiseless `s`-sparse class.
pub fn schedule(f: &Fixture, s: usize, iters: usize) -> ListaSchedule {
    let cert = generalized_mutual_coherence(&f.dict, CoherenceMode::Exact).expect("lp solves");
    let class = SignalClass::new(1.0, s, 0.0).expect("valid class");
    let opts = ScheduleOptions {
        mode: CoherenceMode::Exact,
        rule: EnvelopeRule::SupportAware,
        ..ScheduleOptions::default()
    };
    schedule_from_certificate(&f.dict, &cert, class, iters, opts).expect("schedule")
}
