//! Chunked multi-resolution volumes.
//!
//! A volume is stored as a pyramid of levels. Level 0 is full resolution and
//! every further level halves each axis (rounding up). Each level is cut into
//! cubic blocks of `block_size` voxels per axis; blocks at the far borders are
//! truncated. All voxel indexing is 64-bit, so volumes well beyond 2^31 voxels
//! are addressable.

mod format;
mod procedural;
mod pyramid;
mod source;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{write_pyramid, FileSource, HEADER_LEN, INDEX_ENTRY_LEN, MAGIC, VERSION};
pub use procedural::{ProceduralKind, ProceduralSource, ProceduralSpec};
pub use pyramid::{build_pyramid, build_pyramid_to_path, downsample_half, level_count_for, DenseVolume};
pub use source::{open_source, BlockSource, VolumeSource};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),
    #[error("level {level} out of range (volume has {levels} levels)")]
    LevelOutOfRange { level: u32, levels: u32 },
    #[error("block key out of range: {0}")]
    KeyOutOfRange(BlockKey),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid volume metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid procedural spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
}

impl Dtype {
    pub fn bytes(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
        }
    }

    pub fn max_value(self) -> u16 {
        match self {
            Dtype::U8 => u8::MAX as u16,
            Dtype::U16 => u16::MAX,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Dtype::U8 => 0,
            Dtype::U16 => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::U8),
            1 => Ok(Dtype::U16),
            other => Err(VolumeError::UnsupportedDtype(format!("dtype code {other}"))),
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = VolumeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "u16" => Ok(Dtype::U16),
            other => Err(VolumeError::UnsupportedDtype(other.to_string())),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::U8 => "u8",
            Dtype::U16 => "u16",
        })
    }
}

/// Header-level description of a volume pyramid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    /// Level-0 voxel counts along x, y, z.
    pub dims0: [u64; 3],
    pub dtype: Dtype,
    /// Voxels per axis of a (cubic) block.
    pub block_size: u32,
    pub levels: u32,
    pub channels: u32,
    pub timepoints: u32,
    /// Physical size of a level-0 voxel in micrometers.
    pub voxel_size: [f64; 3],
}

/// Dimensions of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGeometry {
    pub dims: [u64; 3],
    pub grid: [u64; 3],
    pub voxel_size: [f64; 3],
}

impl VolumeMeta {
    pub fn validate(&self) -> Result<()> {
        if self.block_size < 8 || !self.block_size.is_power_of_two() {
            return Err(VolumeError::InvalidMeta(format!(
                "block size {} must be a power of two >= 8",
                self.block_size
            )));
        }
        if self.levels == 0 {
            return Err(VolumeError::InvalidMeta("levels must be >= 1".into()));
        }
        if self.levels > 63 {
            return Err(VolumeError::InvalidMeta(format!("{} levels", self.levels)));
        }
        if self.channels == 0 || self.timepoints == 0 {
            return Err(VolumeError::InvalidMeta("channels and timepoints must be >= 1".into()));
        }
        if self.dims0.contains(&0) {
            return Err(VolumeError::InvalidMeta(format!("zero dimension in {:?}", self.dims0)));
        }
        if self.voxel_size.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(VolumeError::InvalidMeta(format!("voxel size {:?} must be positive", self.voxel_size)));
        }
        Ok(())
    }

    /// Voxel counts at `level`; each halving rounds up and never drops below one.
    pub fn level_dims(&self, level: u32) -> [u64; 3] {
        self.dims0.map(|d| {
            let mut d = d;
            for _ in 0..level {
                d = d.div_ceil(2).max(1);
            }
            d
        })
    }

    pub fn level_geometry(&self, level: u32) -> Result<LevelGeometry> {
        if level >= self.levels {
            return Err(VolumeError::LevelOutOfRange { level, levels: self.levels });
        }
        let dims = self.level_dims(level);
        let bs = self.block_size as u64;
        let scale = (1u64 << level) as f64;
        Ok(LevelGeometry { dims, grid: dims.map(|d| d.div_ceil(bs)), voxel_size: self.voxel_size.map(|v| v * scale) })
    }

    pub fn block_grid(&self, level: u32) -> [u64; 3] {
        let bs = self.block_size as u64;
        self.level_dims(level).map(|d| d.div_ceil(bs))
    }

    pub fn blocks_in_level(&self, level: u32) -> u64 {
        self.block_grid(level).iter().product()
    }

    /// Level-0 voxel count of one channel at one timepoint.
    pub fn total_voxels(&self) -> u64 {
        self.dims0.iter().product()
    }

    pub fn coarsest_level(&self) -> u32 {
        self.levels - 1
    }

    pub fn check_key(&self, key: &BlockKey) -> Result<()> {
        if key.level >= self.levels || key.channel >= self.channels || key.timepoint >= self.timepoints {
            return Err(VolumeError::KeyOutOfRange(*key));
        }
        let grid = self.block_grid(key.level);
        if key.coords().iter().zip(grid).any(|(&c, g)| c >= g) {
            return Err(VolumeError::KeyOutOfRange(*key));
        }
        Ok(())
    }

    /// Voxel extent of a block, truncated at the volume border.
    pub fn block_extent(&self, key: &BlockKey) -> [u64; 3] {
        let dims = self.level_dims(key.level);
        let bs = self.block_size as u64;
        let coords = key.coords();
        [0, 1, 2].map(|a| (dims[a] - coords[a] * bs).min(bs))
    }

    pub fn block_bytes(&self, key: &BlockKey) -> u64 {
        self.block_extent(key).iter().product::<u64>() * self.dtype.bytes() as u64
    }

    /// Bytes needed to hold the coarsest level of every channel and timepoint.
    pub fn coarsest_level_bytes(&self) -> u64 {
        self.keys_in_level(self.coarsest_level(), 0, 0).map(|k| self.block_bytes(&k)).sum::<u64>()
            * self.channels as u64
            * self.timepoints as u64
    }

    /// Block keys of one level for a channel/timepoint, x fastest.
    pub fn keys_in_level(&self, level: u32, channel: u32, timepoint: u32) -> impl Iterator<Item = BlockKey> {
        let [gx, gy, gz] = self.block_grid(level);
        (0..gz).flat_map(move |bz| {
            (0..gy).flat_map(move |by| (0..gx).map(move |bx| BlockKey { level, bx, by, bz, channel, timepoint }))
        })
    }

    /// Every block key in file index order: (timepoint, channel, level, bz, by, bx).
    pub fn all_keys(&self) -> impl Iterator<Item = BlockKey> + '_ {
        (0..self.timepoints).flat_map(move |t| {
            (0..self.channels).flat_map(move |c| (0..self.levels).flat_map(move |l| self.keys_in_level(l, c, t)))
        })
    }

    /// Physical extent of level 0 along each axis.
    pub fn physical_extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims0[a] as f64 * self.voxel_size[a])
    }
}

/// Address of one block: pyramid level, block grid coordinates, channel and timepoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockKey {
    pub level: u32,
    pub bx: u64,
    pub by: u64,
    pub bz: u64,
    pub channel: u32,
    pub timepoint: u32,
}

impl BlockKey {
    pub fn new(level: u32, [bx, by, bz]: [u64; 3], channel: u32, timepoint: u32) -> Self {
        Self { level, bx, by, bz, channel, timepoint }
    }

    pub fn coords(&self) -> [u64; 3] {
        [self.bx, self.by, self.bz]
    }

    /// The block at `level` (coarser or equal) whose region contains this one.
    pub fn ancestor(&self, level: u32) -> BlockKey {
        debug_assert!(level >= self.level);
        let shift = level - self.level;
        BlockKey { level, bx: self.bx >> shift, by: self.by >> shift, bz: self.bz >> shift, ..*self }
    }

    pub fn parent(&self) -> BlockKey {
        self.ancestor(self.level + 1)
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{} ({},{},{}) c{} t{}", self.level, self.bx, self.by, self.bz, self.channel, self.timepoint)
    }
}

/// Dense voxel payload in the volume's storage type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoxelBuf {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl VoxelBuf {
    pub fn zeros(dtype: Dtype, len: usize) -> Self {
        match dtype {
            Dtype::U8 => VoxelBuf::U8(vec![0; len]),
            Dtype::U16 => VoxelBuf::U16(vec![0; len]),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            VoxelBuf::U8(_) => Dtype::U8,
            VoxelBuf::U16(_) => Dtype::U16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VoxelBuf::U8(v) => v.len(),
            VoxelBuf::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> u16 {
        match self {
            VoxelBuf::U8(v) => v[i] as u16,
            VoxelBuf::U16(v) => v[i],
        }
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, value: u16) {
        match self {
            VoxelBuf::U8(v) => v[i] = value as u8,
            VoxelBuf::U16(v) => v[i] = value,
        }
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().bytes()
    }

    pub fn min_max(&self) -> (u16, u16) {
        fn fold<T: Copy + Ord + Into<u16>>(v: &[T]) -> (u16, u16) {
            let min = v.iter().copied().min().map(Into::into).unwrap_or(0);
            let max = v.iter().copied().max().map(Into::into).unwrap_or(0);
            (min, max)
        }
        match self {
            VoxelBuf::U8(v) => fold(v),
            VoxelBuf::U16(v) => fold(v),
        }
    }

    /// Little-endian byte image, as stored in chunk payloads.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VoxelBuf::U8(v) => v.clone(),
            VoxelBuf::U16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Result<Self> {
        match dtype {
            Dtype::U8 => Ok(VoxelBuf::U8(bytes.to_vec())),
            Dtype::U16 => {
                if !bytes.len().is_multiple_of(2) {
                    return Err(VolumeError::DimensionMismatch(format!("odd byte count {} for u16 data", bytes.len())));
                }
                Ok(VoxelBuf::U16(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()))
            }
        }
    }
}

/// One loaded block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub key: BlockKey,
    /// Actual voxel dims; smaller than the block size at volume borders.
    pub extent: [u64; 3],
    /// Row-major, x fastest.
    pub data: VoxelBuf,
    pub min: u16,
    pub max: u16,
}

impl Block {
    pub fn new(key: BlockKey, extent: [u64; 3], data: VoxelBuf) -> Self {
        debug_assert_eq!(extent.iter().product::<u64>() as usize, data.len());
        let (min, max) = data.min_max();
        Self { key, extent, data, min, max }
    }

    pub fn byte_len(&self) -> u64 {
        self.data.byte_len() as u64
    }

    /// Value at block-local voxel coordinates.
    #[inline]
    pub fn voxel(&self, x: u64, y: u64, z: u64) -> u16 {
        let [ex, ey, _] = self.extent;
        self.data.get(((z * ey + y) * ex + x) as usize)
    }
}
