//! The OOCV container.
//!
//! Little-endian throughout:
//!
//! ```text
//! header   "OOCV" | u32 version | u8 dtype | 3 reserved | u32 block_size
//!          | u32 levels | u32 channels | u32 timepoints | u64 dims0[3]
//!          | f64 voxel_size[3]
//! index    one entry per block, ordered (timepoint, channel, level, bz, by, bx):
//!          u64 offset | u32 byte length | u16 min | u16 max
//! payload  raw block voxels, row-major x fastest, in index order
//! ```

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Block, BlockKey, BlockSource, Dtype, Result, VolumeError, VolumeMeta, VoxelBuf};

pub const MAGIC: &[u8; 4] = b"OOCV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 76;
pub const INDEX_ENTRY_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct IndexEntry {
    offset: u64,
    len: u32,
    min: u16,
    max: u16,
}

fn encode_header(meta: &VolumeMeta) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN as usize);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.push(meta.dtype.code());
    h.extend_from_slice(&[0; 3]);
    for v in [meta.block_size, meta.levels, meta.channels, meta.timepoints] {
        h.extend_from_slice(&v.to_le_bytes());
    }
    for d in meta.dims0 {
        h.extend_from_slice(&d.to_le_bytes());
    }
    for v in meta.voxel_size {
        h.extend_from_slice(&v.to_le_bytes());
    }
    debug_assert_eq!(h.len() as u64, HEADER_LEN);
    h
}

fn decode_header(h: &[u8]) -> Result<VolumeMeta> {
    if h.len() < HEADER_LEN as usize {
        return Err(VolumeError::CorruptFile(format!("header is {} bytes", h.len())));
    }
    if &h[0..4] != MAGIC {
        return Err(VolumeError::CorruptFile("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(VolumeError::UnsupportedVersion(version));
    }
    let meta = VolumeMeta {
        dtype: Dtype::from_code(h[8])?,
        block_size: u32_at(12),
        levels: u32_at(16),
        channels: u32_at(20),
        timepoints: u32_at(24),
        dims0: [u64_at(28), u64_at(36), u64_at(44)],
        voxel_size: [52, 60, 68].map(|o| f64::from_le_bytes(h[o..o + 8].try_into().unwrap())),
    };
    meta.validate().map_err(|e| VolumeError::CorruptFile(e.to_string()))?;
    Ok(meta)
}

/// Number of index entries, or `None` when the header describes an absurd volume.
fn index_len(meta: &VolumeMeta) -> Option<u64> {
    let per_tc = (0..meta.levels).try_fold(0u64, |acc, l| {
        let g = meta.block_grid(l);
        g[0].checked_mul(g[1])?.checked_mul(g[2]).and_then(|n| acc.checked_add(n))
    })?;
    per_tc.checked_mul(meta.channels as u64)?.checked_mul(meta.timepoints as u64)
}

/// Serialize every block of `source` as an OOCV stream.
///
/// Blocks are read twice (once for the index, once for the payload) so memory
/// stays bounded by one block.
pub fn write_pyramid<W: Write>(source: &dyn BlockSource, mut out: W) -> Result<()> {
    let meta = source.meta();
    meta.validate()?;
    let n = index_len(meta).ok_or_else(|| VolumeError::InvalidMeta("index too large".into()))?;
    out.write_all(&encode_header(meta))?;
    let mut offset = HEADER_LEN + n * INDEX_ENTRY_LEN;
    for key in meta.all_keys() {
        let block = source.read_block(&key)?;
        let len = block.byte_len();
        out.write_all(&offset.to_le_bytes())?;
        out.write_all(&(len as u32).to_le_bytes())?;
        out.write_all(&block.min.to_le_bytes())?;
        out.write_all(&block.max.to_le_bytes())?;
        offset += len;
    }
    for key in meta.all_keys() {
        out.write_all(&source.read_block(&key)?.data.to_le_bytes())?;
    }
    Ok(())
}

/// A block source backed by an OOCV file. Reads are positioned, so concurrent
/// `read_block` calls do not contend on a file cursor.
#[derive(Debug)]
pub struct FileSource {
    path: PathBuf,
    file: File,
    meta: VolumeMeta,
    index: Vec<IndexEntry>,
    /// Index of the first entry of each level within one (timepoint, channel) group.
    level_starts: Vec<u64>,
    blocks_per_group: u64,
}

impl FileSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path)?;
        let file_len = file.metadata()?.len();

        let mut header = [0u8; HEADER_LEN as usize];
        read_fully(&mut file, &mut header, "header")?;
        let meta = decode_header(&header)?;

        let n = index_len(&meta).ok_or_else(|| VolumeError::CorruptFile("index size overflows".into()))?;
        let payload_start = n
            .checked_mul(INDEX_ENTRY_LEN)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .filter(|&end| end <= file_len)
            .ok_or_else(|| VolumeError::CorruptFile("file truncated inside the chunk index".into()))?;

        let mut raw = vec![0u8; (n * INDEX_ENTRY_LEN) as usize];
        read_fully(&mut file, &mut raw, "chunk index")?;
        let index: Vec<IndexEntry> = raw
            .chunks_exact(INDEX_ENTRY_LEN as usize)
            .map(|e| IndexEntry {
                offset: u64::from_le_bytes(e[0..8].try_into().unwrap()),
                len: u32::from_le_bytes(e[8..12].try_into().unwrap()),
                min: u16::from_le_bytes(e[12..14].try_into().unwrap()),
                max: u16::from_le_bytes(e[14..16].try_into().unwrap()),
            })
            .collect();

        let mut level_starts = Vec::with_capacity(meta.levels as usize);
        let mut acc = 0;
        for l in 0..meta.levels {
            level_starts.push(acc);
            acc += meta.blocks_in_level(l);
        }
        let source = Self { path, file, meta, index, level_starts, blocks_per_group: acc };
        source.validate_index(payload_start, file_len)?;
        Ok(source)
    }

    fn validate_index(&self, payload_start: u64, file_len: u64) -> Result<()> {
        let mut spans = Vec::with_capacity(self.index.len());
        for key in self.meta.all_keys() {
            let e = self.index[self.entry_index(&key) as usize];
            let expected = self.meta.block_bytes(&key);
            if e.len as u64 != expected {
                return Err(VolumeError::CorruptFile(format!(
                    "chunk {key} has length {} (expected {expected})",
                    e.len
                )));
            }
            let end = e.offset.checked_add(e.len as u64);
            if e.offset < payload_start || end.is_none_or(|end| end > file_len) {
                return Err(VolumeError::CorruptFile(format!("chunk {key} lies outside the file")));
            }
            if e.min > e.max {
                return Err(VolumeError::CorruptFile(format!("chunk {key} has min > max")));
            }
            spans.push((e.offset, e.offset + e.len as u64));
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(VolumeError::CorruptFile("overlapping chunks".into()));
        }
        Ok(())
    }

    fn entry_index(&self, key: &BlockKey) -> u64 {
        let [gx, gy, _] = self.meta.block_grid(key.level);
        let group = key.timepoint as u64 * self.meta.channels as u64 + key.channel as u64;
        group * self.blocks_per_group + self.level_starts[key.level as usize] + (key.bz * gy + key.by) * gx + key.bx
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Stored (min, max) of a block, without reading its payload.
    pub fn block_range(&self, key: &BlockKey) -> Result<(u16, u16)> {
        self.meta.check_key(key)?;
        let e = self.index[self.entry_index(key) as usize];
        Ok((e.min, e.max))
    }

    fn read_at(&self, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
        #[cfg(unix)]
        {
            use std::os::unix::fs::FileExt;
            self.file.read_exact_at(buf, offset)
        }
        #[cfg(windows)]
        {
            use std::os::windows::fs::FileExt;
            let mut done = 0;
            while done < buf.len() {
                let n = self.file.seek_read(&mut buf[done..], offset + done as u64)?;
                if n == 0 {
                    return Err(std::io::ErrorKind::UnexpectedEof.into());
                }
                done += n;
            }
            Ok(())
        }
    }
}

fn read_fully(file: &mut File, buf: &mut [u8], what: &str) -> Result<()> {
    file.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => VolumeError::CorruptFile(format!("file truncated inside the {what}")),
        _ => VolumeError::Io(e),
    })
}

impl BlockSource for FileSource {
    fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    fn read_block(&self, key: &BlockKey) -> Result<Block> {
        self.meta.check_key(key)?;
        let e = self.index[self.entry_index(key) as usize];
        let mut bytes = vec![0u8; e.len as usize];
        self.read_at(&mut bytes, e.offset).map_err(|err| match err.kind() {
            std::io::ErrorKind::UnexpectedEof => VolumeError::CorruptFile(format!("chunk {key} truncated")),
            _ => VolumeError::Io(err),
        })?;
        let data = VoxelBuf::from_le_bytes(self.meta.dtype, &bytes)?;
        Ok(Block::new(*key, self.meta.block_extent(key), data))
    }
}
