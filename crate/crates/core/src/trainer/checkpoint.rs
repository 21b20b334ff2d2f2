use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AblationFlags, TrainError};
use crate::encoder::{Dept, EncoderConfig};
use crate::numerics::{ParamStore, Tensor};
use crate::sim::Scenario;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub scenario: Scenario,
    pub encoder: EncoderConfig,
    pub ablation: AblationFlags,
    pub mean_speed: f64,
    pub seed: u64,
    /// Rounds completed when the checkpoint was taken.
    pub rounds: usize,
    pub parameters: Vec<NamedTensor>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        store: &ParamStore,
        scenario: &Scenario,
        encoder: &EncoderConfig,
        ablation: AblationFlags,
        mean_speed: f64,
        seed: u64,
        rounds: usize,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            scenario: scenario.clone(),
            encoder: encoder.clone(),
            ablation,
            mean_speed,
            seed,
            rounds,
            parameters: store
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model layout and loads every parameter by name.
    pub fn restore(&self) -> Result<(Dept, ParamStore), TrainError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let network = self.scenario.network()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (model, _) = Dept::new(&mut store, self.encoder.clone(), Arc::clone(&network.graph), self.mean_speed, None, &mut rng)?;
        if store.len() != self.parameters.len() {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.parameters.len(),
                store.len()
            )));
        }
        for saved in &self.parameters {
            let id = store
                .find(&saved.name)
                .ok_or_else(|| TrainError::Checkpoint(format!("unknown parameter {}", saved.name)))?;
            let slot = store.value_mut(id);
            if slot.shape() != saved.value.shape() {
                return Err(TrainError::Checkpoint(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    saved.name,
                    saved.value.shape(),
                    slot.shape()
                )));
            }
            slot.clone_from(&saved.value);
        }
        Ok((model, store))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json()).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
