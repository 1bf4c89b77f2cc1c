//! Build a small scene tree, move a subtree, and print the flattened render list.

use nalgebra::Vector3;
use oocv::scene::{Camera, DirectionalLight, Mesh, Payload, Scene, Transform};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scene = Scene::new();
    let root = scene.root();
    let rig = scene.add(root, "rig", Transform::from_translation(0.0, 2.0, 0.0), Payload::Group)?;
    let arm = scene.add(rig, "arm", Transform::from_translation(3.0, 0.0, 0.0), Payload::Group)?;
    scene.add(arm, "hand", Transform::from_scale(0.5, 0.5, 0.5)?, Payload::Mesh(Mesh::quad_xy(1.0, 0.0, [1.0; 4])))?;
    let eye = Transform::look_at(Vector3::new(0.0, 5.0, 20.0), Vector3::zeros(), Vector3::y())?;
    scene.add(root, "camera", eye, Payload::Camera(Camera::default()))?;
    let light = DirectionalLight { direction: Vector3::new(0.0, -1.0, -1.0).normalize(), color: [1.0; 3] };
    scene.add(root, "sun", Transform::IDENTITY, Payload::DirectionalLight(light))?;

    // moving "rig" under "arm" would create a cycle
    if let Err(e) = scene.attach(rig, arm) {
        println!("rejected: {e}");
    }
    scene.attach(arm, root)?;

    for item in scene.flatten_visible().items {
        let p = item.world.transform_point(&Vector3::zeros().into());
        println!("{:<8} origin at ({:6.2}, {:6.2}, {:6.2})", item.name, p.x, p.y, p.z);
    }
    scene.set_visible(arm, false)?;
    println!("visible after hiding arm: {}", scene.flatten_visible().items.len());
    Ok(())
}
