//! A lit mesh embedded in a semi-transparent volume: rays stop at the mesh
//! depth, so only the volume in front of it is composited over it.

use std::sync::Arc;

use nalgebra::Vector3;
use oocv::render::{write_png, TransferFunction};
use oocv::scene::{DirectionalLight, Mesh, Payload, Transform};
use oocv::service::{CameraState, Session, SessionConfig};
use oocv::volume::{ProceduralSource, ProceduralSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "mesh_in_volume.png".into());
    let mut session = Session::new(SessionConfig { width: 200, height: 200, ..Default::default() });
    let id = session.add_volume(Arc::new(ProceduralSource::new(ProceduralSpec::radial(64))?))?;
    session.set_transfer_function(id, TransferFunction::ramp([0.3, 0.6, 1.0, 0.08])?)?;
    session.set_camera(CameraState { position: [40.0, 30.0, 120.0], ..Default::default() })?;

    let tilt = Transform::IDENTITY.with_rotation(nalgebra::UnitQuaternion::from_euler_angles(0.4, 0.3, 0.0));
    session.add_object("plate", tilt, Payload::Mesh(Mesh::quad_xy(24.0, 0.0, [0.9, 0.2, 0.1, 1.0])))?;
    let sun = DirectionalLight { direction: Vector3::new(-0.3, -0.5, -1.0).normalize(), color: [1.0; 3] };
    session.add_object("sun", Transform::IDENTITY, Payload::DirectionalLight(sun))?;

    session.warm(16)?;
    let frame = session.render()?;
    write_png(&frame.buffers, &out)?;
    println!("{out}: {} triangles, {} volume samples", frame.stats.triangles, frame.stats.samples);
    Ok(())
}
