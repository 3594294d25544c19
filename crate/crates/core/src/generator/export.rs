//! Video artifacts: per-frame PPM images, a raw little-endian `f32` array
//! (`[frames, size, size, channels]`) and a `key = value` metadata file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{GeneratorError, VideoLayout};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary greyscale image.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<(), GeneratorError> {
    if pixels.len() != width * height {
        return Err(GeneratorError::Shape(format!("{} pixels for {width}×{height}", pixels.len())));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(&pixels.iter().map(|&v| to_byte(v)).collect::<Vec<_>>())?;
    Ok(())
}

/// Binary colour image from interleaved RGB.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<(), GeneratorError> {
    if rgb.len() != 3 * width * height {
        return Err(GeneratorError::Shape(format!("{} values for {width}×{height} RGB", rgb.len())));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{width} {height}\n255\n")?;
    f.write_all(&rgb.iter().map(|&v| to_byte(v)).collect::<Vec<_>>())?;
    Ok(())
}

/// Reads a binary (P5) or ASCII (P2) greyscale image scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>), GeneratorError> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| GeneratorError::Config(format!("{}: {m}", path.display()));
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 && i < bytes.len() {
        if bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if bytes[i].is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
    }
    if fields.len() < 4 {
        return Err(bad("truncated header"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let scale = max as f64;
    let pixels: Vec<f64> = match fields[0].as_str() {
        "P5" => {
            let data = bytes.get(i + 1..i + 1 + w * h).ok_or_else(|| bad("truncated pixel data"))?;
            data.iter().map(|&b| b as f64 / scale).collect()
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[i..]);
            let vals: Result<Vec<f64>, _> = text.split_whitespace().take(w * h).map(|s| s.parse::<f64>().map(|v| v / scale)).collect();
            let vals = vals.map_err(|_| bad("bad pixel value"))?;
            if vals.len() != w * h {
                return Err(bad("truncated pixel data"));
            }
            vals
        }
        _ => return Err(bad("not a PGM image")),
    };
    Ok((w, h, pixels))
}

/// What a generated video was conditioned on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoMetadata {
    pub entries: Vec<(String, String)>,
}

impl VideoMetadata {
    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }
}

/// Writes `frame_NNN.ppm` (channel 0 red, channel 1 green), `video.f32`
/// and `metadata.txt` into `dir`. Returns the written paths.
pub fn write_video_artifacts(dir: &Path, layout: &VideoLayout, video: &[f64], meta: &VideoMetadata) -> Result<Vec<PathBuf>, GeneratorError> {
    if video.len() != layout.video_len() {
        return Err(GeneratorError::Shape(format!("{} values for layout {layout:?}", video.len())));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let (s, c) = (layout.size, layout.channels);
    for f in 0..layout.frames {
        let frame = &video[f * s * s * c..(f + 1) * s * s * c];
        let rgb: Vec<f64> = frame.chunks_exact(c).flat_map(|px| [px[0], px.get(1).copied().unwrap_or(0.0), px.get(2).copied().unwrap_or(0.0)]).collect();
        let path = dir.join(format!("frame_{f:03}.ppm"));
        write_ppm(&path, s, s, &rgb)?;
        written.push(path);
    }
    let raw: Vec<u8> = video.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let path = dir.join("video.f32");
    fs::write(&path, raw)?;
    written.push(path);
    let mut text = format!("frames = {}\nsize = {}\nchannels = {}\n", layout.frames, s, c);
    for (k, v) in &meta.entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let path = dir.join("metadata.txt");
    fs::write(&path, text)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let px: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        write_pgm(&p, 4, 3, &px).unwrap();
        let (w, h, back) = read_pgm(&p).unwrap();
        assert_eq!((w, h), (4, 3));
        assert!(px.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        fs::write(&p, "P2\n# comment\n2 1\n10\n0 10\n").unwrap();
        assert_eq!(read_pgm(&p).unwrap().2, vec![0.0, 1.0]);
        fs::write(&p, "P5\n4 4\n255\n").unwrap();
        assert!(read_pgm(&p).is_err());
    }

    #[test]
    fn artifacts_written() {
        let dir = tempfile::tempdir().unwrap();
        let layout = VideoLayout { frames: 3, size: 4, channels: 2, patch: 2 };
        let video = vec![0.5; layout.video_len()];
        let meta = VideoMetadata::default().with("seed", 7).with("steps", 50);
        let files = write_video_artifacts(dir.path(), &layout, &video, &meta).unwrap();
        assert_eq!(files.len(), 5);
        assert_eq!(fs::read(dir.path().join("video.f32")).unwrap().len(), 4 * layout.video_len());
        let text = fs::read_to_string(dir.path().join("metadata.txt")).unwrap();
        assert!(text.contains("seed = 7") && text.contains("steps = 50"));
        assert!(write_video_artifacts(dir.path(), &layout, &video[1..], &meta).is_err());
    }
}
