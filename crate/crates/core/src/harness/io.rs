//! Frame and clip persistence: PNG frame directories, the raw `BIPN` clip
//! format and a loader for directories of clips.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::dataset::{Clip, ClipConfig, Frame};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest difference between a frame and its PNG round trip.
pub const PNG_QUANTUM: f64 = 1.0 / 127.5;

/// `[-1, 1]` to `0..=255`, rounding half up and clamping.
pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{:04}.png", index + 1)
}

pub fn write_png<T: Scalar>(frame: &Frame<T>, path: &Path) -> Result<()> {
    let color = match frame.channels {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => {
            return Err(Error::InvalidArgument(format!(
                "cannot store {c}-channel frames as PNG"
            )))
        }
    };
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, frame.width as u32, frame.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = frame.pixels.iter().map(|v| to_byte(v.as_f64())).collect();
    let wrap = |source| Error::PngEncode {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = enc.write_header().map_err(wrap)?;
    writer.write_image_data(&bytes).map_err(wrap)?;
    writer.finish().map_err(wrap)?;
    Ok(())
}

pub fn read_png<T: Scalar>(path: &Path) -> Result<Frame<T>> {
    let file = BufReader::new(
        File::open(path).map_err(|e| Error::format(path, format!("cannot open: {e}")))?,
    );
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let wrap = |source| Error::PngDecode {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = decoder.read_info().map_err(wrap)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(wrap)?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!("unsupported bit depth {:?}", info.bit_depth),
        ));
    }
    let pixels = buf[..w * h * channels]
        .iter()
        .map(|&b| T::of(from_byte(b)))
        .collect();
    Frame::new(h, w, channels, pixels)
}

/// Writes `frame_0001.png, frame_0002.png, ...` into `dir`, creating it if needed.
pub fn export_frames<T: Scalar>(frames: &[Frame<T>], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_file_name(i));
            write_png(f, &path)?;
            Ok(path)
        })
        .collect()
}

/// PNG files of `dir` in lexicographic (= temporal) order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::format(dir, format!("cannot list directory: {e}")))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every PNG of `dir` as one sequence; all frames must agree in size.
pub fn import_frames<T: Scalar>(dir: &Path) -> Result<Vec<Frame<T>>> {
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::format(dir, "no PNG frames found"));
    }
    let frames = files
        .iter()
        .map(|p| read_png(p))
        .collect::<Result<Vec<Frame<T>>>>()?;
    if let Some(bad) = frames.iter().position(|f| !f.same_dims(&frames[0])) {
        return Err(Error::format(
            &files[bad],
            "frame size differs from the first frame",
        ));
    }
    Ok(frames)
}

pub const META_FILE: &str = "metadata.txt";

/// Exports a clip as PNG frames plus a `metadata.txt` with its seed and settings.
pub fn export_clip<T: Scalar>(clip: &Clip<T>, dir: &Path) -> Result<()> {
    export_frames(&clip.frames, dir)?;
    let c = &clip.config;
    let kinds: Vec<&str> = (0..c.n_shapes).map(|i| c.kind(i).name()).collect();
    let meta = format!(
        "seed={}\nframes={}\nheight={}\nwidth={}\nchannels={}\nn_shapes={}\nvelocity={}..={}\nsize={}..={}\nkinds={}\n",
        clip.seed,
        clip.frames.len(),
        c.height,
        c.width,
        c.channels,
        c.n_shapes,
        c.velocity_range.0,
        c.velocity_range.1,
        c.size_range.0,
        c.size_range.1,
        kinds.join(",")
    );
    fs::write(dir.join(META_FILE), meta)?;
    Ok(())
}

/// Imports a PNG clip directory. The seed comes from `metadata.txt` when present.
pub fn import_clip<T: Scalar>(dir: &Path) -> Result<Clip<T>> {
    let frames = import_frames::<T>(dir)?;
    let meta = dir.join(META_FILE);
    let mut seed = 0;
    if meta.exists() {
        let text = fs::read_to_string(&meta)?;
        for line in text.lines() {
            if let Some(v) = line.strip_prefix("seed=") {
                seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(&meta, format!("bad seed `{v}`")))?;
            }
        }
    }
    Ok(clip_of_frames(frames, seed))
}

fn clip_of_frames<T: Scalar>(frames: Vec<Frame<T>>, seed: u64) -> Clip<T> {
    let f = &frames[0];
    let config = ClipConfig {
        frames: frames.len(),
        channels: f.channels,
        height: f.height,
        width: f.width,
        ..ClipConfig::default()
    };
    Clip {
        frames,
        seed,
        config,
        shapes: Vec::new(),
    }
}

const RAW_MAGIC: &[u8; 4] = b"BIPN";
const RAW_VERSION: u32 = 1;
pub const RAW_EXTENSION: &str = "bipn";

/// Raw clip: magic `BIPN`, then u32 version, T, h, w, c, then `T*h*w*c`
/// little-endian f32 values, channel-last per frame.
pub fn write_raw_clip<T: Scalar>(frames: &[Frame<T>], path: &Path) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty clip".into()))?;
    if frames.iter().any(|f| !f.same_dims(first)) {
        return Err(Error::shape(
            "raw clip",
            "frames differ in size".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(24 + frames.len() * first.pixels.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    for v in [
        RAW_VERSION,
        frames.len() as u32,
        first.height as u32,
        first.width as u32,
        first.channels as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in frames {
        for v in &f.pixels {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&out)?;
    file.flush()?;
    Ok(())
}

pub fn read_raw_clip<T: Scalar>(path: &Path) -> Result<Vec<Frame<T>>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::format(path, format!("cannot open: {e}")))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::format(path, "not a raw clip (bad magic)"));
    }
    let word = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    if word(0) != RAW_VERSION as usize {
        return Err(Error::format(
            path,
            format!("unsupported version {}", word(0)),
        ));
    }
    let (t, h, w, c) = (word(1), word(2), word(3), word(4));
    let per = h * w * c;
    if t == 0 || per == 0 || bytes.len() != 24 + t * per * 4 {
        return Err(Error::format(
            path,
            format!("{} payload bytes for {t}x{h}x{w}x{c}", bytes.len() - 24),
        ));
    }
    let values: Vec<T> = bytes[24..]
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
        .collect();
    values
        .chunks(per)
        .map(|px| Frame::new(h, w, c, px.to_vec()))
        .collect()
}

/// Loads every clip under `root`: each subdirectory of PNG frames and each
/// `*.bipn` raw file is one clip, in lexicographic order.
pub fn load_clip_dir<T: Scalar>(root: &Path) -> Result<Vec<Clip<T>>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::format(root, format!("cannot list directory: {e}")))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut clips = Vec::new();
    for path in entries {
        if path.is_dir() {
            clips.push(import_clip(&path)?);
        } else if path.extension().is_some_and(|x| x == RAW_EXTENSION) {
            let frames = read_raw_clip(&path)?;
            clips.push(clip_of_frames(frames, clips.len() as u64));
        }
    }
    if clips.is_empty() {
        return Err(Error::Dataset(format!(
            "no clips found in {}",
            root.display()
        )));
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(5.0), 255);
        for b in 0..=255u8 {
            assert_eq!(to_byte(from_byte(b)), b);
        }
    }

    #[test]
    fn png_roundtrip_within_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame<f64>> = (0..3)
            .map(|t| {
                Frame::new(
                    5,
                    7,
                    3,
                    (0..105)
                        .map(|i| ((i * 13 + t * 7) % 200) as f64 / 100.0 - 1.0)
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let paths = export_frames(&frames, dir.path()).unwrap();
        assert!(paths[0].ends_with("frame_0001.png"));
        let back = import_frames::<f64>(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in frames.iter().zip(&back) {
            assert!(a.same_dims(b));
            for (x, y) in a.pixels.iter().zip(&b.pixels) {
                assert!((x - y).abs() <= PNG_QUANTUM / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn raw_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame<f32>> = (0..2)
            .map(|t| Frame::filled(3, 4, 1, t as f32 * 0.5 - 0.25))
            .collect();
        let path = dir.path().join("a.bipn");
        write_raw_clip(&frames, &path).unwrap();
        assert_eq!(read_raw_clip::<f32>(&path).unwrap(), frames);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_raw_clip::<f32>(&path),
            Err(Error::Format { .. })
        ));
        assert!(read_raw_clip::<f32>(&dir.path().join("missing.bipn")).is_err());
    }

    #[test]
    fn corrupt_png_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("frame_0001.png"), b"not a png").unwrap();
        assert!(import_frames::<f32>(dir.path()).is_err());
        let empty = tempfile::tempdir().unwrap();
        assert!(import_frames::<f32>(empty.path()).is_err());
    }
}
