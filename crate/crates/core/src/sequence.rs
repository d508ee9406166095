//! Ordered frame sequences and their on-disk form: a directory of
//! zero-padded numbered 8-bit RGB PNG files with an optional `fps.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_FPS: f64 = 30.0;
const FPS_FILE: &str = "fps.txt";

/// Non-empty list of same-shaped `1×3×H×W` frames with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Tensor>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor>, fps: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("frame sequence", "no frames"))?;
        let shape = first.shape();
        if shape[0] != 1 || shape[1] != 3 {
            return Err(Error::invalid(
                "frame sequence",
                format!("frames must be 1×3×H×W, got {shape:?}"),
            ));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != shape {
                return Err(Error::invalid(
                    "frame sequence",
                    format!("frame {i} has shape {:?}, frame 0 has {shape:?}", f.shape()),
                ));
            }
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(
                "frame sequence",
                format!("fps must be positive, got {fps}"),
            ));
        }
        Ok(FrameSequence { frames, fps })
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Tensor> {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` shared by every frame.
    pub fn size(&self) -> (usize, usize) {
        self.frames[0].spatial()
    }

    pub fn get(&self, i: usize) -> Option<&Tensor> {
        self.frames.get(i)
    }
}

/// File name of frame `index`.
pub fn frame_name(index: usize) -> String {
    format!("{index:05}.png")
}

fn numbered_pngs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        match stem.parse::<usize>() {
            Ok(n) if stem.bytes().all(|b| b.is_ascii_digit()) => found.push((n, path)),
            _ => {
                return Err(Error::invalid(
                    "read_sequence",
                    format!("{} is not a numbered frame", path.display()),
                ))
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn read_frame(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

/// Quantises with round-to-nearest after clamping to `[0, 1]`.
pub fn write_frame(frame: &Tensor, path: &Path) -> Result<()> {
    let [n, c, h, w] = frame.shape();
    if n != 1 || c != 3 {
        return Err(Error::invalid(
            "write_frame",
            format!("expected 1×3×H×W, got {:?}", frame.shape()),
        ));
    }
    let mut buf = vec![0u8; h * w * 3];
    for ci in 0..3 {
        for (i, &v) in frame.plane(0, ci).iter().enumerate() {
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            buf[i * 3 + ci] = (v as f64 * 255.0).round() as u8;
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized from frame");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads `00000.png, 00001.png, …`; numbering must be contiguous but may
/// start at any index.
pub fn read_sequence(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let files = numbered_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(
            "read_sequence",
            format!("no numbered PNG frames in {}", dir.display()),
        ));
    }
    for pair in files.windows(2) {
        if pair[1].0 != pair[0].0 + 1 {
            return Err(Error::invalid(
                "read_sequence",
                format!("gap in frame numbering: {} is followed by {}", pair[0].0, pair[1].0),
            ));
        }
    }
    let frames = files.iter().map(|(_, p)| read_frame(p)).collect::<Result<Vec<_>>>()?;
    let fps_path = dir.join(FPS_FILE);
    let fps = if fps_path.exists() {
        let text = fs::read_to_string(&fps_path).map_err(|e| Error::io(&fps_path, e))?;
        text.trim().parse::<f64>().map_err(|_| {
            Error::invalid(
                "read_sequence",
                format!("{} does not hold a number", fps_path.display()),
            )
        })?
    } else {
        DEFAULT_FPS
    };
    FrameSequence::new(frames, fps)
}

/// Writes frames as `00000.png, …` plus `fps.txt`, creating `dir` if needed.
pub fn write_sequence(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames().iter().enumerate() {
        write_frame(f, &dir.join(frame_name(i)))?;
    }
    let fps_path = dir.join(FPS_FILE);
    fs::write(&fps_path, format!("{}\n", seq.fps())).map_err(|e| Error::io(&fps_path, e))
}
