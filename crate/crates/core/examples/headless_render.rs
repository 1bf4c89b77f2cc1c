//! Render a procedural volume to a PNG without any server.
//!
//! `cargo run --release --example headless_render -- out.png`

use std::sync::Arc;

use oocv::render::{write_png, RenderSettings, TfPoint, TransferFunction};
use oocv::service::{CameraState, Session, SessionConfig};
use oocv::volume::{ProceduralSource, ProceduralSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "headless.png".into());
    let mut session = Session::new(SessionConfig { width: 320, height: 240, ..Default::default() });
    let id = session.add_volume(Arc::new(ProceduralSource::new(ProceduralSpec::noise(128, 3))?))?;
    let tf = TransferFunction::new(vec![
        TfPoint { x: 0.0, rgba: [0.0; 4] },
        TfPoint { x: 0.45, rgba: [0.1, 0.2, 0.6, 0.0] },
        TfPoint { x: 0.7, rgba: [0.9, 0.6, 0.2, 0.2] },
        TfPoint { x: 1.0, rgba: [1.0, 1.0, 0.9, 0.6] },
    ])?;
    session.set_transfer_function(id, tf)?;
    session.set_camera(CameraState { position: [140.0, 90.0, 180.0], ..Default::default() })?;
    session.set_render_settings(RenderSettings { step: 0.5, ..Default::default() })?;
    let rounds = session.warm(32)?;
    let frame = session.render()?;
    write_png(&frame.buffers, &out)?;
    println!("{out}: {} samples after {rounds} warm-up rounds", frame.stats.samples);
    Ok(())
}
