use std::path::Path;

use image::ImageReader;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decode a PNG or binary PPM into an H×W×3 buffer scaled to [0, 1]; alpha is dropped.
pub fn decode_rgb(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let fail = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| fail(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| fail(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Pnm) => {}
        other => return Err(fail(format!("unsupported format {other:?}"))),
    }
    let img = reader.decode().map_err(|e| fail(e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
    Ok((h, w, data))
}

/// Bilinear resize of an H×W×C buffer with half-pixel centres and edge clamping.
pub fn bilinear_resize(
    src: &[f32],
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(out_h * out_w * c);
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let coord = |dst: usize, scale: f32, len: usize| {
        let s = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f32)
    };
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, w);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    out
}

/// Decode `path` and resize it to a 1×E×E×3 tensor.
pub fn decode_and_resize(path: &Path, extent: usize) -> Result<Tensor> {
    if extent == 0 {
        return Err(Error::InvalidArgument("target extent must be >= 1".into()));
    }
    let (h, w, data) = decode_rgb(path)?;
    let pixels = if h == extent && w == extent {
        data
    } else {
        bilinear_resize(&data, h, w, 3, extent, extent)
    };
    Tensor::new(vec![1, extent, extent, 3], pixels)
}
