use std::collections::BTreeMap;

use rand::Rng;

use super::config::{EncodingMode, Sharing};
use crate::blocks::PositionEncodingParams;
use crate::error::Result;
use crate::tensor::ParamStore;

/// Parameter table plus the position-encoding sharing table.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry {
    pub store: ParamStore,
    sharing: BTreeMap<String, PositionEncodingParams>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The encoding for a block named `block` at `level`. In shared mode
    /// every caller at one level receives the instance keyed `pe{level}`;
    /// otherwise the block gets a fresh one under its own name.
    pub fn encoding(
        &mut self,
        sharing: Sharing,
        mode: EncodingMode,
        level: usize,
        block: &str,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<PositionEncodingParams> {
        let key = match sharing {
            Sharing::Shared => format!("pe{level}"),
            Sharing::Unshared => format!("{block}.pe"),
        };
        if let Some(pe) = self.sharing.get(&key) {
            return Ok(pe.clone());
        }
        let pe = match mode {
            EncodingMode::Bias => PositionEncodingParams::bias(&mut self.store, &key, width, rng)?,
            EncodingMode::Enhanced => PositionEncodingParams::enhanced(&mut self.store, &key, width, rng)?,
        };
        self.sharing.insert(key, pe.clone());
        Ok(pe)
    }

    /// Sharing key to encoding parameters, in key order.
    pub fn sharing_table(&self) -> &BTreeMap<String, PositionEncodingParams> {
        &self.sharing
    }

    /// Distinct scalars; a shared tensor is stored, and counted, once.
    pub fn total_parameters(&self) -> usize {
        self.store.total_elements()
    }
}
