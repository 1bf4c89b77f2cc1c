use std::sync::Arc;

use nalgebra::Vector3;

use crate::cache::{BlockCache, CacheError};
use crate::volume::{Block, BlockKey, VolumeMeta};

const MEMO_CAPACITY: usize = 32;

/// Per-ray memo of block lookups, so a ray resolves each block through the
/// cache once instead of once per tap. `None` records a block that was not
/// resident at its own level.
#[derive(Default)]
pub struct BlockMemo {
    entries: Vec<(BlockKey, Option<Arc<Block>>)>,
}

impl BlockMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    fn lookup(&mut self, cache: &BlockCache, key: BlockKey) -> Result<Option<Arc<Block>>, CacheError> {
        if let Some((_, b)) = self.entries.iter().rev().find(|(k, _)| *k == key) {
            return Ok(b.clone());
        }
        let resolved = cache.resolve_block(&key)?;
        let block = resolved.is_exact().then_some(resolved.block);
        if self.entries.len() == MEMO_CAPACITY {
            self.entries.clear();
        }
        self.entries.push((key, block.clone()));
        Ok(block)
    }
}

/// Trilinear sample at `position` (volume-local physical units).
///
/// The eight taps surrounding the position are clamped to the level bounds.
/// If any tap's block is not resident at `level`, the whole sample moves one
/// level coarser and tries again, so a sample never mixes levels. The pinned
/// coarsest level ends the search. Returns the normalized scalar and the
/// level actually used.
pub fn sample_trilinear(
    meta: &VolumeMeta,
    cache: &BlockCache,
    position: &Vector3<f64>,
    level: u32,
    channel: u32,
    timepoint: u32,
    memo: &mut BlockMemo,
) -> Result<(f64, u32), CacheError> {
    let norm = meta.dtype.max_value() as f64;
    let bs = meta.block_size as u64;
    let mut level = level.min(meta.coarsest_level());
    'levels: loop {
        let dims = meta.level_dims(level);
        let scale = (1u64 << level) as f64;
        let mut lo = [0u64; 3];
        let mut hi = [0u64; 3];
        let mut w = [0f64; 3];
        for a in 0..3 {
            let u = position[a] / (meta.voxel_size[a] * scale) - 0.5;
            let f = u.floor();
            w[a] = u - f;
            let max = (dims[a] - 1) as f64;
            lo[a] = f.clamp(0.0, max) as u64;
            hi[a] = (f + 1.0).clamp(0.0, max) as u64;
        }
        let mut taps = [0u16; 8];
        for (n, tap) in taps.iter_mut().enumerate() {
            let v = [0, 1, 2].map(|a| if n >> a & 1 == 1 { hi[a] } else { lo[a] });
            let key = BlockKey::new(level, v.map(|c| c / bs), channel, timepoint);
            match memo.lookup(cache, key)? {
                Some(block) => *tap = block.voxel(v[0] % bs, v[1] % bs, v[2] % bs),
                None => {
                    level += 1;
                    continue 'levels;
                }
            }
        }
        let t = |n: usize| taps[n] as f64;
        let x00 = t(0) + (t(1) - t(0)) * w[0];
        let x10 = t(2) + (t(3) - t(2)) * w[0];
        let x01 = t(4) + (t(5) - t(4)) * w[0];
        let x11 = t(6) + (t(7) - t(6)) * w[0];
        let y0 = x00 + (x10 - x00) * w[1];
        let y1 = x01 + (x11 - x01) * w[1];
        let value = y0 + (y1 - y0) * w[2];
        return Ok((value / norm, level));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheConfig;
    use crate::volume::{BlockSource, ProceduralSource, ProceduralSpec};

    fn warm(spec: ProceduralSpec) -> BlockCache {
        let cache = BlockCache::new(Arc::new(ProceduralSource::new(spec).unwrap()), CacheConfig::with_mib(64)).unwrap();
        for key in cache.meta().clone().all_keys() {
            cache.request(&key).unwrap();
        }
        cache.pump_all().unwrap();
        cache
    }

    #[test]
    fn constant_everywhere() {
        let cache = warm(ProceduralSpec::constant(64, 7));
        let meta = cache.meta().clone();
        let mut memo = BlockMemo::new();
        for level in 0..2 {
            for p in [[0.0, 0.0, 0.0], [31.9, 32.1, 5.0], [64.0, 64.0, 64.0]] {
                let (v, l) = sample_trilinear(&meta, &cache, &Vector3::from(p), level, 0, 0, &mut memo).unwrap();
                assert_eq!(v, 7.0 / 255.0);
                assert_eq!(l, level);
            }
        }
    }

    #[test]
    fn voxel_center_is_exact() {
        let spec = ProceduralSpec::noise(64, 9);
        let src = ProceduralSource::new(spec.clone()).unwrap();
        let cache = warm(spec);
        let meta = src.meta().clone();
        let mut memo = BlockMemo::new();
        for v in [[0u64, 0, 0], [31, 32, 33], [63, 10, 40]] {
            let p = Vector3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5);
            let (s, _) = sample_trilinear(&meta, &cache, &p, 0, 0, 0, &mut memo).unwrap();
            assert_eq!(s, src.value(0, v, 0, 0) as f64 / 255.0);
        }
    }

    #[test]
    fn cold_sample_falls_back_to_pinned_level() {
        let spec = ProceduralSpec::radial(128);
        let cache = BlockCache::new(Arc::new(ProceduralSource::new(spec).unwrap()), CacheConfig::with_mib(8)).unwrap();
        let meta = cache.meta().clone();
        let (_, level) =
            sample_trilinear(&meta, &cache, &Vector3::repeat(40.0), 0, 0, 0, &mut BlockMemo::new()).unwrap();
        assert_eq!(level, meta.coarsest_level());
        assert!(cache.pending_loads() > 0);
    }
}
