use std::path::Path;

use super::{Block, BlockKey, FileSource, ProceduralSource, ProceduralSpec, Result, VolumeMeta};

/// Anything that can produce blocks of a volume pyramid.
///
/// Implementations must be pure (the same key always yields the same block)
/// and safe to call from many threads at once.
pub trait BlockSource: Send + Sync {
    fn meta(&self) -> &VolumeMeta;
    fn read_block(&self, key: &BlockKey) -> Result<Block>;
}

#[derive(Debug)]
pub enum VolumeSource {
    File(FileSource),
    Procedural(ProceduralSource),
}

impl VolumeSource {
    pub fn open_file(path: impl AsRef<Path>) -> Result<Self> {
        FileSource::open(path).map(VolumeSource::File)
    }

    pub fn procedural(spec: ProceduralSpec) -> Result<Self> {
        ProceduralSource::new(spec).map(VolumeSource::Procedural)
    }
}

impl BlockSource for VolumeSource {
    fn meta(&self) -> &VolumeMeta {
        match self {
            VolumeSource::File(f) => f.meta(),
            VolumeSource::Procedural(p) => p.meta(),
        }
    }

    fn read_block(&self, key: &BlockKey) -> Result<Block> {
        match self {
            VolumeSource::File(f) => f.read_block(key),
            VolumeSource::Procedural(p) => p.read_block(key),
        }
    }
}

/// Open a volume from either a file path or `procedural:<name>` (see
/// [`ProceduralSpec::parse`]). The header is fully validated before returning.
pub fn open_source(spec: &str) -> Result<(VolumeSource, VolumeMeta)> {
    let source = match spec.strip_prefix("procedural:") {
        Some(name) => VolumeSource::procedural(ProceduralSpec::parse(name)?)?,
        None => VolumeSource::open_file(spec)?,
    };
    let meta = source.meta().clone();
    Ok((source, meta))
}
