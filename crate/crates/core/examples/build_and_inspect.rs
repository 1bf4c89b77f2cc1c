//! Build an OOCV pyramid from a dense array, reopen it, and inspect blocks.
//!
//! `cargo run --example build_and_inspect -- /tmp/sphere.oocv`

use oocv::volume::{build_pyramid_to_path, BlockKey, BlockSource, DenseVolume, FileSource, VoxelBuf};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path =
        std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("sphere.oocv").display().to_string());
    let n = 100u64;
    let mut data = Vec::with_capacity((n * n * n) as usize);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let d = [x, y, z].map(|c| c as f64 - n as f64 / 2.0);
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                data.push((4000.0 * (1.0 - r / 60.0).max(0.0)) as u16);
            }
        }
    }
    let dense = DenseVolume::new([n; 3], 1, 1, [0.5, 0.5, 1.0], VoxelBuf::U16(data))?;
    let meta = build_pyramid_to_path(&dense, 32, 8, &path)?;
    println!("wrote {path}: {} levels, {} blocks", meta.levels, meta.all_keys().count());

    let file = FileSource::open(&path)?;
    for level in 0..meta.levels {
        println!("level {level}: dims {:?}, grid {:?}", meta.level_dims(level), meta.block_grid(level));
    }
    let key = BlockKey::new(0, [1, 1, 1], 0, 0);
    let (min, max) = file.block_range(&key)?;
    let block = file.read_block(&key)?;
    println!("{key}: extent {:?}, range {min}..={max}, center voxel {}", block.extent, block.voxel(16, 16, 16));
    Ok(())
}
