//! Latency profiles for the simulated stand-ins of the four hosted document stores.
//!
//! Each profile holds mean per-workload latencies (ms) measured against the
//! hosted services, in [`test_matrix`](crate::model::test_matrix) order.

use serde::{Deserialize, Serialize};

use crate::adapters::{DelayModel, DelayModelError, DelaySpec};
use crate::model::{test_matrix, TestKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimProfile {
    Mongodb,
    Dynamodb,
    Firebase,
    Couchdb,
}

impl SimProfile {
    pub const ALL: [SimProfile; 4] = [
        SimProfile::Mongodb,
        SimProfile::Dynamodb,
        SimProfile::Firebase,
        SimProfile::Couchdb,
    ];

    /// Default registry id, e.g. `sim_couchdb`.
    pub fn default_id(self) -> &'static str {
        match self {
            SimProfile::Mongodb => "sim_mongodb",
            SimProfile::Dynamodb => "sim_dynamodb",
            SimProfile::Firebase => "sim_firebase",
            SimProfile::Couchdb => "sim_couchdb",
        }
    }

    fn means(self) -> [f64; 6] {
        match self {
            SimProfile::Mongodb => [250.0, 1200.0, 160.0, 740.0, 250.0, 1280.0],
            SimProfile::Dynamodb => [210.0, 680.0, 150.0, 300.0, 210.0, 680.0],
            SimProfile::Firebase => [70.0, 500.0, 55.0, 540.0, 40.0, 380.0],
            SimProfile::Couchdb => [470.0, 2800.0, 366.0, 700.0, 520.0, 2800.0],
        }
    }

    pub fn mean_ms(self, kind: TestKind) -> f64 {
        self.means()[kind.matrix_index()]
    }

    /// Delay model with `base = mean * scale` and `jitter = base * jitter_fraction`.
    pub fn delay_model(self, scale: f64, jitter_fraction: f64) -> Result<DelayModel, DelayModelError> {
        let mut model = DelayModel::default();
        for kind in test_matrix() {
            let base = self.mean_ms(kind) * scale;
            model.set(kind, DelaySpec::new(base, base * jitter_fraction))?;
        }
        Ok(model)
    }
}
