use std::path::Path;

use super::{FrameBuffers, RenderError};

pub fn encode_png(frame: &FrameBuffers) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width, frame.height);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| RenderError::Encode(e.to_string()))?;
        writer.write_image_data(&frame.to_rgba8()).map_err(|e| RenderError::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(frame: &FrameBuffers, path: impl AsRef<Path>) -> Result<(), RenderError> {
    std::fs::write(path, encode_png(frame)?)?;
    Ok(())
}
