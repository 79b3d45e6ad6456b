//! Round-robin manifest sharding for independent worker processes.

use std::path::PathBuf;

use resyn_core::manifest::AudioItem;

use crate::error::{Error, Result};

/// Items of one shard, each with its index in the full manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardManifest {
    pub items: Vec<(usize, AudioItem)>,
    pub shard_index: usize,
    pub num_shards: usize,
}

impl ShardManifest {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.items.iter().map(|(_, i)| &i.path)
    }
}

/// Item `i` goes to shard `i mod num_shards`.
pub fn shard(manifest: &[AudioItem], shard_index: usize, num_shards: usize) -> Result<ShardManifest> {
    if num_shards == 0 || shard_index >= num_shards {
        return Err(Error::Shard {
            index: shard_index,
            count: num_shards,
        });
    }
    Ok(ShardManifest {
        items: manifest
            .iter()
            .enumerate()
            .filter(|(i, _)| i % num_shards == shard_index)
            .map(|(i, item)| (i, item.clone()))
            .collect(),
        shard_index,
        num_shards,
    })
}
