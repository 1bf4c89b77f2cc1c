//! Deterministic procedural volumes.
//!
//! These stand in for datasets far larger than memory or disk: a block is
//! generated on demand from a pure function of (level, voxel, channel, timepoint).

use serde::{Deserialize, Serialize};

use super::{level_count_for, Block, BlockKey, BlockSource, Dtype, Result, VolumeError, VolumeMeta, VoxelBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProceduralKind {
    /// Every voxel at every level has `value`.
    Constant { value: u16 },
    /// One voxel at `position` (level-0 coords) has `value`, all others zero.
    /// At coarser levels the voxel containing it carries the value.
    HotVoxel { position: [u64; 3], value: u16 },
    /// Linear falloff from the center, full intensity at the center.
    RadialGradient,
    /// Fractal value noise.
    FractalNoise { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralSpec {
    #[serde(flatten)]
    pub kind: ProceduralKind,
    pub dims: [u64; 3],
    pub dtype: Dtype,
    pub block_size: u32,
    /// `None` builds the full pyramid down to a single block.
    pub levels: Option<u32>,
    pub channels: u32,
    pub timepoints: u32,
    pub voxel_size: [f64; 3],
}

impl ProceduralSpec {
    pub fn new(kind: ProceduralKind, dims: [u64; 3]) -> Self {
        Self {
            kind,
            dims,
            dtype: Dtype::U8,
            block_size: 32,
            levels: None,
            channels: 1,
            timepoints: 1,
            voxel_size: [1.0; 3],
        }
    }

    pub fn constant(n: u64, value: u16) -> Self {
        Self::new(ProceduralKind::Constant { value }, [n; 3])
    }

    pub fn hot_voxel(n: u64) -> Self {
        Self::new(ProceduralKind::HotVoxel { position: [n / 2; 3], value: 255 }, [n; 3])
    }

    pub fn radial(n: u64) -> Self {
        Self::new(ProceduralKind::RadialGradient, [n; 3])
    }

    pub fn noise(n: u64, seed: u64) -> Self {
        Self::new(ProceduralKind::FractalNoise { seed }, [n; 3])
    }

    /// Parse the short names used on the command line:
    /// `constant[:N[:VALUE]]`, `hot-voxel[:N]`, `radial[:N]`, `noise[:N[:SEED]]`.
    ///
    /// The bundled defaults are 64^3 test volumes, except `noise` which is 2048^3.
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let nums: Vec<u64> = parts
            .map(|p| p.parse::<u64>().map_err(|_| VolumeError::InvalidSpec(format!("bad number {p:?} in {s:?}"))))
            .collect::<Result<_>>()?;
        let size = |default| nums.first().copied().unwrap_or(default);
        let extra = |i: usize, max: usize| {
            if nums.len() > max {
                Err(VolumeError::InvalidSpec(format!("too many fields in {s:?}")))
            } else {
                Ok(nums.get(i).copied())
            }
        };
        let spec = match name {
            "constant" => {
                let value = extra(1, 2)?.unwrap_or(7);
                Self::constant(size(64), u16::try_from(value).map_err(|_| VolumeError::InvalidSpec(s.into()))?)
            }
            "hot-voxel" => {
                extra(0, 1)?;
                Self::hot_voxel(size(64))
            }
            "radial" => {
                extra(0, 1)?;
                Self::radial(size(64))
            }
            "noise" => Self::noise(size(2048), extra(1, 2)?.unwrap_or(1)),
            other => return Err(VolumeError::InvalidSpec(format!("unknown procedural volume {other:?}"))),
        };
        if spec.dims.contains(&0) {
            return Err(VolumeError::InvalidSpec(format!("zero size in {s:?}")));
        }
        Ok(spec)
    }

    pub fn meta(&self) -> Result<VolumeMeta> {
        let meta = VolumeMeta {
            dims0: self.dims,
            dtype: self.dtype,
            block_size: self.block_size,
            levels: level_count_for(self.dims, self.block_size, self.levels.unwrap_or(u32::MAX)),
            channels: self.channels,
            timepoints: self.timepoints,
            voxel_size: self.voxel_size,
        };
        meta.validate()?;
        Ok(meta)
    }
}

#[derive(Debug, Clone)]
pub struct ProceduralSource {
    spec: ProceduralSpec,
    meta: VolumeMeta,
}

impl ProceduralSource {
    pub fn new(spec: ProceduralSpec) -> Result<Self> {
        if let ProceduralKind::HotVoxel { position, .. } = spec.kind {
            if position.iter().zip(spec.dims).any(|(&p, d)| p >= d) {
                return Err(VolumeError::InvalidSpec(format!("hot voxel {position:?} outside {:?}", spec.dims)));
            }
        }
        let meta = spec.meta()?;
        Ok(Self { spec, meta })
    }

    pub fn spec(&self) -> &ProceduralSpec {
        &self.spec
    }

    /// Value of voxel `v` at `level`.
    pub fn value(&self, level: u32, v: [u64; 3], channel: u32, timepoint: u32) -> u16 {
        let max = self.meta.dtype.max_value() as f64;
        let quantize = |x: f64| (x.clamp(0.0, 1.0) * max + 0.5).floor() as u16;
        let scale = (1u64 << level) as f64;
        // level-l voxel center in level-0 voxel units
        let center = v.map(|c| (c as f64 + 0.5) * scale);
        match &self.spec.kind {
            ProceduralKind::Constant { value } => *value,
            ProceduralKind::HotVoxel { position, value } => {
                if position.iter().zip(v).all(|(&p, c)| p >> level == c) {
                    *value
                } else {
                    0
                }
            }
            ProceduralKind::RadialGradient => {
                let dims = self.meta.dims0.map(|d| d as f64);
                let radius = dims.iter().copied().fold(f64::INFINITY, f64::min) / 2.0 / (1.0 + 0.25 * timepoint as f64);
                let r = (0..3).map(|a| (center[a] - dims[a] / 2.0).powi(2)).sum::<f64>().sqrt();
                quantize((1.0 - r / radius) / (1.0 + channel as f64))
            }
            ProceduralKind::FractalNoise { seed } => {
                let seed = seed ^ (channel as u64) << 32 ^ (timepoint as u64) << 48;
                quantize(fbm(center, seed))
            }
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(ix as u64 ^ splitmix64(iy as u64 ^ splitmix64(iz as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: [f64; 3], seed: u64) -> f64 {
    let i = p.map(|c| c.floor());
    let f = [0, 1, 2].map(|a| {
        let t = p[a] - i[a];
        t * t * (3.0 - 2.0 * t)
    });
    let [ix, iy, iz] = i.map(|c| c as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
            * (if dy == 1 { f[1] } else { 1.0 - f[1] })
            * (if dz == 1 { f[2] } else { 1.0 - f[2] });
        acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
    }
    acc
}

/// Four octaves of value noise, base period 64 voxels, normalized to [0, 1].
fn fbm(p: [f64; 3], seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0 / 64.0;
    for octave in 0..4u64 {
        sum += amp * value_noise(p.map(|c| c * freq), seed.wrapping_add(octave));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

impl BlockSource for ProceduralSource {
    fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    fn read_block(&self, key: &BlockKey) -> Result<Block> {
        self.meta.check_key(key)?;
        let extent = self.meta.block_extent(key);
        let bs = self.meta.block_size as u64;
        let origin = key.coords().map(|c| c * bs);
        let mut data = VoxelBuf::zeros(self.meta.dtype, extent.iter().product::<u64>() as usize);
        let mut i = 0;
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                for x in 0..extent[0] {
                    let v = [origin[0] + x, origin[1] + y, origin[2] + z];
                    data.set(i, self.value(key.level, v, key.channel, key.timepoint));
                    i += 1;
                }
            }
        }
        Ok(Block::new(*key, extent, data))
    }
}
