//! Shared setup for the criterion benchmarks.

use ubpf_core::feeder::{synthetic_feeder, SyntheticSpec};
use ubpf_core::scenario::{generate_scenarios, ScenarioConfig};
use ubpf_core::{
    build_admittance, rotation_vector, train_svr, AdmittanceSystem, ErrorModel, Exec, Feeder, OperatingPoint,
    RotationVector, SvrParams, TargetKind, TrainingSet,
};

pub struct Fixture {
    pub name: &'static str,
    pub feeder: Feeder,
    pub sys: AdmittanceSystem,
    pub t: RotationVector,
    pub op: OperatingPoint,
    pub train: TrainingSet,
    pub model: ErrorModel,
}

impl Fixture {
    fn build(name: &'static str, feeder: Feeder, n_train: usize) -> Self {
        let sys = build_admittance(&feeder.network).expect("fixture network");
        let t = rotation_vector(&sys.phase_index);
        let cfg = ScenarioConfig {
            seed: 1,
            n_train,
            n_test: 1,
            bad_sample_fraction: 0.0,
            ..Default::default()
        };
        let (train, test) = generate_scenarios(&feeder, &cfg, Exec::Parallel).expect("fixture data");
        let train = train.error_training_set();
        let model =
            train_svr(&train, TargetKind::LinearizationError, &SvrParams::default(), Exec::Parallel).expect("fixture model");
        let op = test.samples[0].op.clone();
        Fixture {
            name,
            feeder,
            sys,
            t,
            op,
            train,
            model,
        }
    }

    pub fn ieee13() -> Self {
        Self::build("ieee13", Feeder::ieee13_like(), 200)
    }

    pub fn synthetic123() -> Self {
        let feeder = synthetic_feeder(&SyntheticSpec::ieee123_scale(7)).into_feeder().expect("synthetic feeder");
        Self::build("synthetic123", feeder, 60)
    }
}
