#![allow(dead_code)]

use std::sync::OnceLock;

use nonunique::asymptotics::{AsymptoticCoefficients, McSettings};
use nonunique::harness::ExperimentContext;
use nonunique::population::{covariance, find_optima};
use nonunique::{CovarianceMatrix, ModelSpec, OptimumSet, SearchConfig};

pub struct Fixture {
    pub spec: ModelSpec,
    pub optima: OptimumSet,
    pub v: CovarianceMatrix,
    pub coefficients: AsymptoticCoefficients,
}

impl Fixture {
    pub fn context(&self) -> ExperimentContext {
        ExperimentContext {
            spec: self.spec.clone(),
            optima: self.optima.clone(),
            coefficients: self.coefficients.clone(),
        }
    }
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = ModelSpec::default();
        let optima = find_optima(&spec, &SearchConfig::default()).expect("optima");
        let v = covariance(&optima, &spec).expect("covariance");
        let coefficients = AsymptoticCoefficients::compute(&optima, &v, 1.0, McSettings::default()).expect("coefficients");
        Fixture {
            spec,
            optima,
            v,
            coefficients,
        }
    })
}
