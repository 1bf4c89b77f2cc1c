//! Start from a cold cache and watch frames refine as blocks stream in.
//! Rendering never blocks on IO: missing blocks are drawn from coarser levels.

use std::sync::Arc;

use oocv::service::{CameraState, Session, SessionConfig};
use oocv::volume::{ProceduralSource, ProceduralSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut session =
        Session::new(SessionConfig { width: 128, height: 128, cache_bytes: 32 << 20, ..Default::default() });
    session.add_volume(Arc::new(ProceduralSource::new(ProceduralSpec::noise(512, 9))?))?;
    session.set_camera(CameraState { position: [0.0, 0.0, 420.0], ..Default::default() })?;
    for frame in 0.. {
        let f = session.render()?;
        let stats = session.cache_stats()[0].1;
        println!(
            "frame {frame:2}: {:7} samples, {:7} from coarser levels, {:4} loads pending, {:5.1} MiB resident",
            f.stats.samples,
            f.stats.fallback_samples,
            session.pending_loads(),
            stats.resident_bytes as f64 / (1 << 20) as f64
        );
        if f.stats.fallback_samples == 0 && session.pending_loads() == 0 {
            break;
        }
        session.pump(24)?;
    }
    Ok(())
}
