use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Binary (P6) pixmap bytes for a `[C, H, W]` frame in [−1, 1]; one channel
/// is written as gray.
pub fn ppm_bytes(frame: &[f32], channels: usize, height: usize, width: usize) -> Result<Vec<u8>> {
    if (channels != 1 && channels != 3) || frame.len() != channels * height * width {
        return Err(Error::config(format!(
            "cannot write a {channels}-channel {height}x{width} pixmap from {} values",
            frame.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    let level = |v: f32| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let ch = if channels == 1 { 0 } else { c };
                out.push(level(frame[(ch * height + y) * width + x]));
            }
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, frame: &[f32], channels: usize, height: usize, width: usize) -> Result<()> {
    fs::write(path, ppm_bytes(frame, channels, height, width)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_levels() {
        let bytes = ppm_bytes(&[-1.0, 1.0], 1, 1, 2).unwrap();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 0, 0, 255, 255, 255]);
    }
}
