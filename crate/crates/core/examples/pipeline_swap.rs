//! Swap render pipelines between frames, including a custom JSON pipeline.

use std::sync::Arc;

use oocv::graph::PipelineDesc;
use oocv::service::{Session, SessionConfig};
use oocv::volume::{ProceduralSource, ProceduralSpec};

const CUSTOM: &str = r#"{
  "name": "mip-over-ea",
  "passes": [
    {"name": "tone", "kind": "tonemap", "inputs": ["mix"], "output": "display", "params": {"gamma": 2.2}},
    {"name": "mix", "kind": "compose", "inputs": ["mip", "ea"], "output": "mix"},
    {"name": "bg", "kind": "clear", "inputs": [], "output": "bg", "params": {"color": [0.05, 0.05, 0.1, 1]}},
    {"name": "ea", "kind": "volume_raycast", "inputs": ["bg"], "output": "ea"},
    {"name": "mip", "kind": "mip_raycast", "inputs": [], "output": "mip", "params": {"step": 2.0}}
  ]
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut session = Session::new(SessionConfig { width: 64, height: 64, ..Default::default() });
    session.add_volume(Arc::new(ProceduralSource::new(ProceduralSpec::radial(64))?))?;
    session.warm(8)?;
    let custom = PipelineDesc::from_json(CUSTOM)?;
    for desc in [PipelineDesc::ea_default(), PipelineDesc::mip(), custom] {
        session.set_pipeline(&desc)?;
        let frame = session.render()?;
        let order = oocv::graph::validate_pipeline(&desc)?.pass_names().join(" -> ");
        println!("{:<12} center {:?}  [{order}]", frame.pipeline, frame.buffers.pixel(32, 32));
    }
    let broken = PipelineDesc::from_json(
        r#"{"name":"loop","passes":[
        {"name":"a","kind":"tonemap","inputs":["display"],"output":"x"},
        {"name":"b","kind":"tonemap","inputs":["x"],"output":"display"}]}"#,
    )?;
    match session.set_pipeline(&broken) {
        Err(e) => println!("rejected: {e}; still running '{}'", session.pipeline_name()),
        Ok(()) => unreachable!("cycles are rejected"),
    }
    Ok(())
}
