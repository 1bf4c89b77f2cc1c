use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::format::write_pyramid;
use super::{Block, BlockKey, BlockSource, Dtype, Result, VolumeError, VolumeMeta, VoxelBuf};

/// A dense in-memory volume, the input to pyramid building.
///
/// Voxels are laid out as `[timepoint][channel][z][y][x]`, x fastest.
#[derive(Debug, Clone)]
pub struct DenseVolume {
    pub dims: [u64; 3],
    pub channels: u32,
    pub timepoints: u32,
    pub voxel_size: [f64; 3],
    pub data: VoxelBuf,
}

impl DenseVolume {
    pub fn new(dims: [u64; 3], channels: u32, timepoints: u32, voxel_size: [f64; 3], data: VoxelBuf) -> Result<Self> {
        let expected = dims
            .iter()
            .try_fold(channels as u64 * timepoints as u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| VolumeError::DimensionMismatch(format!("{dims:?} overflows")))?;
        if expected != data.len() as u64 || expected == 0 {
            return Err(VolumeError::DimensionMismatch(format!(
                "dims {dims:?} x {channels} channels x {timepoints} timepoints needs {expected} voxels, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, channels, timepoints, voxel_size, data })
    }

    /// Single channel, single timepoint, unit voxel size.
    pub fn single(dims: [u64; 3], data: VoxelBuf) -> Result<Self> {
        Self::new(dims, 1, 1, [1.0; 3], data)
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn from_raw_bytes(
        bytes: &[u8],
        dims: [u64; 3],
        dtype: Dtype,
        channels: u32,
        timepoints: u32,
        voxel_size: [f64; 3],
    ) -> Result<Self> {
        Self::new(dims, channels, timepoints, voxel_size, VoxelBuf::from_le_bytes(dtype, bytes)?)
    }

    fn volume_len(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    fn channel_data(&self, channel: u32, timepoint: u32) -> Vec<u16> {
        let n = self.volume_len();
        let start = (timepoint as usize * self.channels as usize + channel as usize) * n;
        (start..start + n).map(|i| self.data.get(i)).collect()
    }
}

/// Number of levels a pyramid gets: the requested count, capped where the
/// coarsest level first fits inside a single block.
pub fn level_count_for(dims0: [u64; 3], block_size: u32, requested: u32) -> u32 {
    let mut max_dim = dims0.into_iter().max().unwrap_or(1);
    let mut useful = 1;
    while max_dim > block_size as u64 {
        max_dim = max_dim.div_ceil(2);
        useful += 1;
    }
    requested.min(useful)
}

/// Halve a level: each output voxel is the mean of the (up to eight) input
/// voxels it covers, rounded half up.
pub fn downsample_half(src: &[u16], dims: [u64; 3]) -> (Vec<u16>, [u64; 3]) {
    let [sx, sy, sz] = dims.map(|d| d as usize);
    let out_dims = dims.map(|d| d.div_ceil(2).max(1));
    let [dx, dy, dz] = out_dims.map(|d| d as usize);
    let mut out = Vec::with_capacity(dx * dy * dz);
    for z in 0..dz {
        let zs = 2 * z..(2 * z + 2).min(sz);
        for y in 0..dy {
            let ys = 2 * y..(2 * y + 2).min(sy);
            for x in 0..dx {
                let xs = 2 * x..(2 * x + 2).min(sx);
                let mut sum = 0u32;
                let mut count = 0u32;
                for zz in zs.clone() {
                    for yy in ys.clone() {
                        for xx in xs.clone() {
                            sum += src[(zz * sy + yy) * sx + xx] as u32;
                            count += 1;
                        }
                    }
                }
                out.push(((sum * 2 + count) / (count * 2)) as u16);
            }
        }
    }
    (out, out_dims)
}

/// Fully materialized pyramid, usable as a block source.
pub(crate) struct MemoryPyramid {
    meta: VolumeMeta,
    /// Indexed by `timepoint * channels + channel`, then level.
    levels: Vec<Vec<Vec<u16>>>,
}

impl MemoryPyramid {
    pub(crate) fn build(dense: &DenseVolume, block_size: u32, requested_levels: u32) -> Result<Self> {
        if requested_levels == 0 {
            return Err(VolumeError::InvalidMeta("requested levels must be >= 1".into()));
        }
        let meta = VolumeMeta {
            dims0: dense.dims,
            dtype: dense.dtype(),
            block_size,
            levels: level_count_for(dense.dims, block_size, requested_levels),
            channels: dense.channels,
            timepoints: dense.timepoints,
            voxel_size: dense.voxel_size,
        };
        meta.validate()?;
        let mut levels = Vec::with_capacity((meta.channels * meta.timepoints) as usize);
        for t in 0..meta.timepoints {
            for c in 0..meta.channels {
                let mut chain = vec![dense.channel_data(c, t)];
                let mut dims = meta.dims0;
                for _ in 1..meta.levels {
                    let (next, next_dims) = downsample_half(chain.last().unwrap(), dims);
                    chain.push(next);
                    dims = next_dims;
                }
                levels.push(chain);
            }
        }
        Ok(Self { meta, levels })
    }
}

impl BlockSource for MemoryPyramid {
    fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    fn read_block(&self, key: &BlockKey) -> Result<Block> {
        self.meta.check_key(key)?;
        let level = &self.levels[(key.timepoint * self.meta.channels + key.channel) as usize][key.level as usize];
        let dims = self.meta.level_dims(key.level);
        let extent = self.meta.block_extent(key);
        let bs = self.meta.block_size as u64;
        let origin = key.coords().map(|c| c * bs);
        let mut data = VoxelBuf::zeros(self.meta.dtype, extent.iter().product::<u64>() as usize);
        let mut i = 0;
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                let row = ((origin[2] + z) * dims[1] + origin[1] + y) * dims[0] + origin[0];
                for x in 0..extent[0] {
                    data.set(i, level[(row + x) as usize]);
                    i += 1;
                }
            }
        }
        Ok(Block::new(*key, extent, data))
    }
}

/// Build a pyramid from dense data and serialize it as an OOCV stream.
pub fn build_pyramid<W: Write>(
    dense: &DenseVolume,
    block_size: u32,
    requested_levels: u32,
    out: W,
) -> Result<VolumeMeta> {
    let pyramid = MemoryPyramid::build(dense, block_size, requested_levels)?;
    write_pyramid(&pyramid, out)?;
    Ok(pyramid.meta)
}

/// [`build_pyramid`] into a file, then re-open it and compare every block.
pub fn build_pyramid_to_path(
    dense: &DenseVolume,
    block_size: u32,
    requested_levels: u32,
    path: impl AsRef<Path>,
) -> Result<VolumeMeta> {
    let path = path.as_ref();
    let pyramid = MemoryPyramid::build(dense, block_size, requested_levels)?;
    {
        let mut w = BufWriter::new(File::create(path)?);
        write_pyramid(&pyramid, &mut w)?;
        w.flush()?;
    }
    let file = super::FileSource::open(path)?;
    if file.meta() != &pyramid.meta {
        return Err(VolumeError::CorruptFile("read-back header differs".into()));
    }
    for key in pyramid.meta.all_keys() {
        if file.read_block(&key)? != pyramid.read_block(&key)? {
            return Err(VolumeError::CorruptFile(format!("read-back mismatch at {key}")));
        }
    }
    Ok(pyramid.meta)
}
