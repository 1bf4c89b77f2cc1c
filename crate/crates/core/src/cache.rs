//! Bounded block residency with missing-data fallback.
//!
//! The coarsest pyramid level is loaded up front and pinned, so every request
//! can be answered immediately: if the requested block is not resident the
//! cache hands out its finest resident ancestor and queues the missing blocks.
//! Loading only ever happens in [`BlockCache::pump_loads`]; resolving never
//! touches the source.
//!
//! Blocks are handed out as `Arc<Block>`. Evicting a block removes it from the
//! index at once, but its memory lives until the last frame holding it drops
//! the handle.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Block, BlockKey, BlockSource, VolumeError, VolumeMeta};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache capacity {capacity} bytes cannot hold the coarsest level ({required} bytes)")]
    CapacityTooSmall { capacity: u64, required: u64 },
    #[error("block key out of range: {0}")]
    KeyOutOfRange(BlockKey),
    #[error("loading {key} failed: {source}")]
    Load { key: BlockKey, source: VolumeError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    /// Upper bound on resident block bytes.
    pub capacity: u64,
}

impl CacheConfig {
    pub fn with_mib(mib: u64) -> Self {
        Self { capacity: mib * 1024 * 1024 }
    }
}

/// The answer to a block request.
#[derive(Debug, Clone)]
pub struct ResolvedBlock {
    pub block: Arc<Block>,
    pub requested_level: u32,
    /// Level of `block`; greater than `requested_level` when a fallback ancestor was used.
    pub effective_level: u32,
}

impl ResolvedBlock {
    pub fn is_exact(&self) -> bool {
        self.effective_level == self.requested_level
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub resident_bytes: u64,
    pub peak_resident_bytes: u64,
    pub capacity: u64,
    pub pending_loads: u64,
    pub max_fallback_depth: u64,
    pub failed_loads: u64,
}

struct Entry {
    block: Arc<Block>,
    /// `None` for pinned blocks, which never enter the recency order.
    tick: Option<u64>,
}

#[derive(Default)]
struct State {
    entries: HashMap<BlockKey, Entry>,
    /// Unpinned blocks by last use; the first entry is the eviction victim.
    recency: BTreeMap<u64, BlockKey>,
    tick: u64,
    /// Pending loads ordered by (level, arrival): finest first, FIFO among equals.
    queue: BTreeMap<(u32, u64), BlockKey>,
    pending: HashSet<BlockKey>,
    seq: u64,
    resident_bytes: u64,
    peak_resident_bytes: u64,
    pinned_bytes: u64,
    max_fallback_depth: u64,
}

impl State {
    fn touch(&mut self, key: &BlockKey) {
        self.tick += 1;
        let tick = self.tick;
        if let Some(Entry { tick: Some(old), .. }) = self.entries.get_mut(key) {
            self.recency.remove(old);
            self.recency.insert(tick, *key);
            *old = tick;
        }
    }

    fn enqueue(&mut self, key: BlockKey) -> bool {
        if self.entries.contains_key(&key) || !self.pending.insert(key) {
            return false;
        }
        self.seq += 1;
        self.queue.insert((key.level, self.seq), key);
        true
    }
}

pub struct BlockCache {
    source: Arc<dyn BlockSource>,
    meta: VolumeMeta,
    capacity: u64,
    state: Mutex<State>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    failed_loads: AtomicU64,
}

impl std::fmt::Debug for BlockCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockCache").field("meta", &self.meta).field("stats", &self.stats()).finish()
    }
}

impl BlockCache {
    /// Create a cache and synchronously load (and pin) the coarsest level of
    /// every channel and timepoint.
    pub fn new(source: Arc<dyn BlockSource>, config: CacheConfig) -> Result<Self, CacheError> {
        let meta = source.meta().clone();
        let required = meta.coarsest_level_bytes();
        if config.capacity < required {
            return Err(CacheError::CapacityTooSmall { capacity: config.capacity, required });
        }
        let mut state = State::default();
        let coarsest = meta.coarsest_level();
        for t in 0..meta.timepoints {
            for c in 0..meta.channels {
                for key in meta.keys_in_level(coarsest, c, t) {
                    let block = source.read_block(&key).map_err(|source| CacheError::Load { key, source })?;
                    state.pinned_bytes += block.byte_len();
                    state.entries.insert(key, Entry { block: Arc::new(block), tick: None });
                }
            }
        }
        state.resident_bytes = state.pinned_bytes;
        state.peak_resident_bytes = state.pinned_bytes;
        Ok(Self {
            source,
            meta,
            capacity: config.capacity,
            state: Mutex::new(state),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            failed_loads: AtomicU64::new(0),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn source(&self) -> &Arc<dyn BlockSource> {
        &self.source
    }

    /// Answer a block request without blocking on IO.
    ///
    /// A resident block is a hit and becomes most recently used. Otherwise the
    /// finest resident ancestor is returned (and marked used), a miss is
    /// counted, and the block plus every missing ancestor in between is queued.
    pub fn resolve_block(&self, key: &BlockKey) -> Result<ResolvedBlock, CacheError> {
        self.meta.check_key(key).map_err(|_| CacheError::KeyOutOfRange(*key))?;
        let mut state = self.lock();
        if let Some(entry) = state.entries.get(key) {
            let block = entry.block.clone();
            state.touch(key);
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ResolvedBlock { block, requested_level: key.level, effective_level: key.level });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let (ancestor, block) = (key.level + 1..self.meta.levels)
            .map(|l| key.ancestor(l))
            .find_map(|a| state.entries.get(&a).map(|e| (a, e.block.clone())))
            .expect("coarsest level is pinned");
        state.touch(&ancestor);
        for level in key.level..ancestor.level {
            state.enqueue(key.ancestor(level));
        }
        let depth = (ancestor.level - key.level) as u64;
        state.max_fallback_depth = state.max_fallback_depth.max(depth);
        Ok(ResolvedBlock { block, requested_level: key.level, effective_level: ancestor.level })
    }

    /// Queue a block for loading without resolving it. Returns whether it was newly queued.
    pub fn request(&self, key: &BlockKey) -> Result<bool, CacheError> {
        self.meta.check_key(key).map_err(|_| CacheError::KeyOutOfRange(*key))?;
        Ok(self.lock().enqueue(*key))
    }

    pub fn is_resident(&self, key: &BlockKey) -> bool {
        self.lock().entries.contains_key(key)
    }

    /// Resident keys in ascending order.
    pub fn resident_keys(&self) -> Vec<BlockKey> {
        let mut keys: Vec<_> = self.lock().entries.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn pending_loads(&self) -> usize {
        self.lock().pending.len()
    }

    /// Load up to `max_blocks` queued blocks, finest level first.
    ///
    /// Each load is followed by LRU eviction of unpinned blocks until the
    /// resident bytes fit the capacity again. A block that cannot fit even
    /// with every unpinned block evicted is discarded. A failed read is
    /// dropped from the queue, counted, and returned as an error.
    pub fn pump_loads(&self, max_blocks: usize) -> Result<usize, CacheError> {
        let mut loaded = 0;
        while loaded < max_blocks {
            let key = {
                let mut state = self.lock();
                let Some((_, key)) = state.queue.pop_first() else { break };
                state.pending.remove(&key);
                if state.entries.contains_key(&key) {
                    continue;
                }
                key
            };
            let block = match self.source.read_block(&key) {
                Ok(block) => block,
                Err(source) => {
                    self.failed_loads.fetch_add(1, Ordering::Relaxed);
                    return Err(CacheError::Load { key, source });
                }
            };
            let bytes = block.byte_len();
            let mut state = self.lock();
            loaded += 1;
            if state.entries.contains_key(&key) || state.pinned_bytes + bytes > self.capacity {
                continue;
            }
            state.tick += 1;
            let tick = state.tick;
            state.entries.insert(key, Entry { block: Arc::new(block), tick: Some(tick) });
            state.recency.insert(tick, key);
            state.resident_bytes += bytes;
            while state.resident_bytes > self.capacity {
                let (_, victim) = state.recency.pop_first().expect("pinned set fits the capacity");
                let entry = state.entries.remove(&victim).expect("recency entries are resident");
                state.resident_bytes -= entry.block.byte_len();
                self.evictions.fetch_add(1, Ordering::Relaxed);
            }
            state.peak_resident_bytes = state.peak_resident_bytes.max(state.resident_bytes);
        }
        Ok(loaded)
    }

    /// Pump until the queue is empty; returns the number of blocks loaded.
    pub fn pump_all(&self) -> Result<usize, CacheError> {
        self.pump_loads(usize::MAX)
    }

    pub fn stats(&self) -> CacheStats {
        let state = self.lock();
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            resident_bytes: state.resident_bytes,
            peak_resident_bytes: state.peak_resident_bytes,
            capacity: self.capacity,
            pending_loads: state.pending.len() as u64,
            max_fallback_depth: state.max_fallback_depth,
            failed_loads: self.failed_loads.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{ProceduralSource, ProceduralSpec};

    fn cache(n: u64, capacity: u64) -> BlockCache {
        let src = ProceduralSource::new(ProceduralSpec::radial(n)).unwrap();
        BlockCache::new(Arc::new(src), CacheConfig { capacity }).unwrap()
    }

    #[test]
    fn pins_coarsest_level() {
        let c = cache(64, 1 << 20);
        let s = c.stats();
        assert_eq!(s.resident_bytes, 32768);
        assert_eq!((s.hits, s.misses, s.evictions), (0, 0, 0));
        assert!(c.is_resident(&BlockKey::new(1, [0, 0, 0], 0, 0)));
    }

    #[test]
    fn pins_every_channel_and_timepoint() {
        let mut spec = ProceduralSpec::radial(64);
        spec.channels = 2;
        spec.timepoints = 3;
        let src = ProceduralSource::new(spec).unwrap();
        let c = BlockCache::new(Arc::new(src), CacheConfig::with_mib(1)).unwrap();
        assert_eq!(c.stats().resident_bytes, 32768 * 6);
    }

    #[test]
    fn touching_pinned_blocks_keeps_them_out_of_lru() {
        let c = cache(64, 32768 + 32768);
        let coarse = BlockKey::new(1, [0, 0, 0], 0, 0);
        for _ in 0..3 {
            c.resolve_block(&coarse).unwrap();
        }
        c.request(&BlockKey::new(0, [0, 0, 0], 0, 0)).unwrap();
        c.request(&BlockKey::new(0, [1, 0, 0], 0, 0)).unwrap();
        c.pump_all().unwrap();
        assert!(c.is_resident(&coarse));
        assert_eq!(c.stats().evictions, 1);
    }

    #[test]
    fn capacity_too_small() {
        let src = ProceduralSource::new(ProceduralSpec::radial(64)).unwrap();
        let err = BlockCache::new(Arc::new(src), CacheConfig { capacity: 32767 }).unwrap_err();
        assert!(matches!(err, CacheError::CapacityTooSmall { required: 32768, .. }));
    }

    #[test]
    fn single_level_volume_is_fully_pinned() {
        let src = ProceduralSource::new(ProceduralSpec::radial(24)).unwrap();
        assert_eq!(src.meta().levels, 1);
        let c = BlockCache::new(Arc::new(src), CacheConfig::with_mib(1)).unwrap();
        assert_eq!(c.stats().resident_bytes, 24 * 24 * 24);
        let r = c.resolve_block(&BlockKey::new(0, [0, 0, 0], 0, 0)).unwrap();
        assert!(r.is_exact());
    }

    #[test]
    fn cold_then_warm() {
        let c = cache(64, 1 << 20);
        let key = BlockKey::new(0, [1, 0, 1], 0, 0);
        let r = c.resolve_block(&key).unwrap();
        assert_eq!(r.effective_level, 1);
        assert_eq!(r.block.key, BlockKey::new(1, [0, 0, 0], 0, 0));
        assert_eq!(c.stats().pending_loads, 1);
        assert_eq!(c.pump_loads(10).unwrap(), 1);
        let r = c.resolve_block(&key).unwrap();
        assert!(r.is_exact());
        let s = c.stats();
        assert_eq!((s.hits, s.misses, s.max_fallback_depth), (1, 1, 1));
    }

    #[test]
    fn fallback_enqueues_intermediate_ancestors() {
        let c = cache(256, 1 << 22);
        assert_eq!(c.meta().levels, 4);
        let key = BlockKey::new(0, [7, 3, 5], 0, 0);
        let r = c.resolve_block(&key).unwrap();
        assert_eq!(r.effective_level, 3);
        assert_eq!(c.pending_loads(), 3);
        // duplicates are coalesced
        c.resolve_block(&key).unwrap();
        assert_eq!(c.pending_loads(), 3);
        assert_eq!(c.pump_loads(1).unwrap(), 1);
        // finest first
        assert!(c.is_resident(&key));
        assert!(!c.is_resident(&key.parent()));
    }

    #[test]
    fn priority_is_finest_first() {
        let c = cache(256, 1 << 22);
        let coarse = BlockKey::new(1, [0, 0, 0], 0, 0);
        let fine = BlockKey::new(0, [5, 5, 5], 0, 0);
        c.request(&coarse).unwrap();
        c.request(&fine).unwrap();
        c.pump_loads(1).unwrap();
        assert!(c.is_resident(&fine));
        assert!(!c.is_resident(&coarse));
    }

    #[test]
    fn evicts_least_recently_used() {
        // pinned: one 32^3 block; room for two more
        let c = cache(256, 32768 * 3);
        let a = BlockKey::new(0, [0, 0, 0], 0, 0);
        let b = BlockKey::new(0, [1, 0, 0], 0, 0);
        let d = BlockKey::new(0, [2, 0, 0], 0, 0);
        c.request(&a).unwrap();
        c.request(&b).unwrap();
        c.pump_all().unwrap();
        c.resolve_block(&a).unwrap();
        c.request(&d).unwrap();
        c.pump_all().unwrap();
        assert!(c.is_resident(&a));
        assert!(!c.is_resident(&b));
        assert!(c.is_resident(&d));
        let s = c.stats();
        assert_eq!(s.evictions, 1);
        assert!(s.resident_bytes <= s.capacity);
    }

    #[test]
    fn out_of_range_key() {
        let c = cache(64, 1 << 20);
        let bad = BlockKey::new(0, [2, 0, 0], 0, 0);
        assert!(matches!(c.resolve_block(&bad), Err(CacheError::KeyOutOfRange(_))));
        assert!(matches!(c.request(&bad), Err(CacheError::KeyOutOfRange(_))));
    }

    struct Failing(VolumeMeta);

    impl BlockSource for Failing {
        fn meta(&self) -> &VolumeMeta {
            &self.0
        }
        fn read_block(&self, key: &BlockKey) -> crate::volume::Result<Block> {
            if key.level == 0 {
                Err(VolumeError::CorruptFile("boom".into()))
            } else {
                ProceduralSource::new(ProceduralSpec::constant(64, 1)).unwrap().read_block(key)
            }
        }
    }

    #[test]
    fn failed_load_is_dropped_and_counted() {
        let meta = ProceduralSpec::constant(64, 1).meta().unwrap();
        let c = BlockCache::new(Arc::new(Failing(meta)), CacheConfig::with_mib(1)).unwrap();
        let key = BlockKey::new(0, [0, 0, 0], 0, 0);
        c.resolve_block(&key).unwrap();
        assert!(matches!(c.pump_loads(4), Err(CacheError::Load { .. })));
        let s = c.stats();
        assert_eq!((s.failed_loads, s.pending_loads), (1, 0));
    }
}
