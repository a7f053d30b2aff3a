//! File formats: datasets on disk, binary scene files and run configuration.
//!
//! A dataset is a JSON manifest listing per-frame RGB (8-bit PNG), depth (PFM)
//! and mask (8-bit grayscale PNG) files plus one tracks CSV with the columns
//! `point_id,frame,x,y,visibility`. Relative paths resolve against the
//! manifest's directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitConfig;
use crate::kernel::{GaborPrimitive, PrimitiveKind, SceneConfig};
use crate::losses::{FrameBundle, TrackPoint};
use crate::motion::{MotionTrack, SplineKind};
use crate::raster::Raster;
use crate::scene::{SceneModel, TrackBinding};
use crate::trainer::TrainConfig;

pub const SCENE_MAGIC: &[u8; 4] = b"AGSV";
pub const SCENE_VERSION: u32 = 1;
pub const TRACK_HEADER: [&str; 5] = ["point_id", "frame", "x", "y", "visibility"];

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- PFM

/// Reads a PFM image (`Pf` grayscale or `PF` color).
///
/// A negative scale marks little-endian samples, a positive one big-endian.
/// Rows are stored bottom-to-top and returned top-to-bottom.
pub fn read_pfm(path: &Path) -> Result<Raster> {
    let mut r = BufReader::new(open(path)?);
    let parse = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header = Vec::new();
    while header.len() < 3 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(parse(header.len() + 1, "truncated header".into()));
        }
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            header.push(t.to_string());
        }
    }
    let channels = match header[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(parse(1, format!("unknown PFM tag {other:?}"))),
    };
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| parse(2, format!("bad dimension {s:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 2 || dims[0] == 0 || dims[1] == 0 {
        return Err(parse(2, format!("bad dimensions {:?}", header[1])));
    }
    let (w, h) = (dims[0], dims[1]);
    let scale: f64 = header[2]
        .parse()
        .map_err(|_| parse(3, format!("bad scale {:?}", header[2])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse(3, "scale must be finite and nonzero".into()));
    }
    let mut samples = vec![0f32; w * h * channels];
    let res = if scale < 0.0 {
        r.read_f32_into::<LittleEndian>(&mut samples)
    } else {
        r.read_f32_into::<byteorder::BigEndian>(&mut samples)
    };
    res.map_err(|e| Error::io(path, e))?;
    let mut out = Raster::zeros(w, h, channels);
    for row in 0..h {
        let src = (h - 1 - row) * w * channels;
        let dst = row * w * channels;
        for k in 0..w * channels {
            out.data[dst + k] = samples[src + k] as f64;
        }
    }
    Ok(out)
}

/// Writes a little-endian PFM with rows bottom-to-top.
pub fn write_pfm(path: &Path, img: &Raster) -> Result<()> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid(format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    let mut w = BufWriter::new(create(path)?);
    let io = |e| Error::io(path, e);
    write!(w, "{tag}\n{} {}\n-1.0\n", img.width, img.height).map_err(io)?;
    let stride = img.width * img.channels;
    for row in (0..img.height).rev() {
        for v in &img.data[row * stride..(row + 1) * stride] {
            w.write_f32::<LittleEndian>(*v as f32).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

// ---------------------------------------------------------------- PNG

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads an 8-bit RGB image scaled to `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Raster::from_vec(w as usize, h as usize, 3, data)
}

/// Loads an 8-bit grayscale image scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Raster::from_vec(w as usize, h as usize, 1, data)
}

/// Writes a 1- or 3-channel raster as an 8-bit PNG, clamping to `[0, 1]`.
pub fn write_png(path: &Path, img: &Raster) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let res = match img.channels {
        1 => image::GrayImage::from_raw(w, h, bytes).map(|b| b.save(path)),
        3 => image::RgbImage::from_raw(w, h, bytes).map(|b| b.save(path)),
        c => return Err(Error::invalid(format!("PNG output takes 1 or 3 channels, not {c}"))),
    };
    res.expect("buffer length matches raster shape")
        .map_err(|e| image_err(path, e))
}

// ---------------------------------------------------------------- tracks

#[derive(Debug, Deserialize, Serialize)]
struct TrackRow {
    point_id: u64,
    frame: usize,
    x: f64,
    y: f64,
    visibility: f64,
}

/// Reads a tracks CSV into per-frame point lists.
///
/// Visibility is clamped to `[0, 1]`; visible points must lie inside the
/// `width × height` image.
pub fn read_tracks(path: &Path, frame_count: usize, width: usize, height: usize) -> Result<Vec<Vec<TrackPoint>>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = vec![Vec::new(); frame_count];
    for (i, row) in rdr.deserialize::<TrackRow>().enumerate() {
        let line = i + 2;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.frame >= frame_count {
            return Err(bad(format!(
                "point {} references frame {} of a {frame_count}-frame dataset",
                row.point_id, row.frame
            )));
        }
        if !(row.x.is_finite() && row.y.is_finite() && row.visibility.is_finite()) {
            return Err(bad(format!("point {} has non-finite values", row.point_id)));
        }
        let visibility = row.visibility.clamp(0.0, 1.0);
        let inside = (0.0..=width as f64).contains(&row.x) && (0.0..=height as f64).contains(&row.y);
        if visibility > 0.0 && !inside {
            return Err(bad(format!(
                "visible point {} at ({}, {}) lies outside the {width}x{height} frame",
                row.point_id, row.x, row.y
            )));
        }
        out[row.frame].push(TrackPoint {
            point_id: row.point_id,
            x: row.x,
            y: row.y,
            visibility,
        });
    }
    Ok(out)
}

pub fn write_tracks(path: &Path, bundles: &[FrameBundle]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let bad = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    for b in bundles {
        for tp in &b.tracks {
            w.serialize(TrackRow {
                point_id: tp.point_id,
                frame: b.frame,
                x: tp.x,
                y: tp.y,
                visibility: tp.visibility,
            })
            .map_err(bad)?;
        }
    }
    if bundles.iter().all(|b| b.tracks.is_empty()) {
        w.write_record(TRACK_HEADER).map_err(bad)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFiles {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FrameFiles>,
    pub tracks: PathBuf,
}

impl DatasetManifest {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn check_dims(path: &Path, img: &Raster, w: usize, h: usize) -> Result<()> {
    if img.width != w || img.height != h {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: format!("is {}x{}, dataset is {w}x{h}", img.width, img.height),
        });
    }
    Ok(())
}

/// Loads every frame listed in a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<FrameBundle>> {
    let m = DatasetManifest::read(manifest_path)?;
    if m.frames.is_empty() {
        return Err(Error::Parse {
            path: manifest_path.to_path_buf(),
            line: 1,
            message: "dataset lists no frames".into(),
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| base.join(p);
    let tracks = read_tracks(&resolve(&m.tracks), m.frame_count(), m.width, m.height)?;
    let mut out = Vec::with_capacity(m.frame_count());
    for (i, (files, tracks)) in m.frames.iter().zip(tracks).enumerate() {
        let rgb_path = resolve(&files.rgb);
        let depth_path = resolve(&files.depth);
        let mask_path = resolve(&files.mask);
        let rgb = read_rgb(&rgb_path)?;
        check_dims(&rgb_path, &rgb, m.width, m.height)?;
        let depth = read_pfm(&depth_path)?.channel(0);
        check_dims(&depth_path, &depth, m.width, m.height)?;
        let mask = read_gray(&mask_path)?;
        check_dims(&mask_path, &mask, m.width, m.height)?;
        out.push(FrameBundle {
            frame: i,
            rgb,
            depth,
            mask,
            tracks,
        });
    }
    Ok(out)
}

/// Writes frames as a dataset under `dir` and returns the manifest path.
pub fn save_dataset(dir: &Path, bundles: &[FrameBundle]) -> Result<PathBuf> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("cannot save an empty dataset"))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(bundles.len());
    for (i, b) in bundles.iter().enumerate() {
        if b.frame != i {
            return Err(Error::invalid(format!("frame {} stored at position {i}", b.frame)));
        }
        let files = FrameFiles {
            rgb: format!("rgb_{i:04}.png").into(),
            depth: format!("depth_{i:04}.pfm").into(),
            mask: format!("mask_{i:04}.png").into(),
        };
        write_png(&dir.join(&files.rgb), &b.rgb)?;
        write_pfm(&dir.join(&files.depth), &b.depth)?;
        write_png(&dir.join(&files.mask), &b.mask)?;
        frames.push(files);
    }
    let manifest = DatasetManifest {
        width: first.width(),
        height: first.height(),
        frames,
        tracks: "tracks.csv".into(),
    };
    write_tracks(&dir.join(&manifest.tracks), bundles)?;
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

// ---------------------------------------------------------------- scene file

fn fmt_err(e: std::io::Error) -> Error {
    Error::SceneFormat(e.to_string())
}

fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    vs.iter().try_for_each(|v| w.write_f64::<LittleEndian>(*v))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v).map_err(fmt_err)?;
    Ok(v)
}

fn read_len<R: Read>(r: &mut R, what: &str, limit: u64) -> Result<usize> {
    let n = r.read_u64::<LittleEndian>().map_err(fmt_err)?;
    if n > limit {
        return Err(Error::SceneFormat(format!("{what} count {n} is implausible")));
    }
    Ok(n as usize)
}

/// Serializes a scene into the versioned little-endian container.
pub fn write_scene<W: Write>(scene: &SceneModel, mut w: W) -> Result<()> {
    scene.validate()?;
    let c = &scene.config;
    let mut go = || -> std::io::Result<()> {
        w.write_all(SCENE_MAGIC)?;
        w.write_u32::<LittleEndian>(SCENE_VERSION)?;
        w.write_u64::<LittleEndian>(scene.primitives.len() as u64)?;
        w.write_u64::<LittleEndian>(scene.keyframes.len() as u64)?;
        w.write_u64::<LittleEndian>(c.freqs.len() as u64)?;
        w.write_f64::<LittleEndian>(c.gamma)?;
        w.write_f64::<LittleEndian>(c.beta)?;
        w.write_u8(c.primitive.code())?;
        w.write_u8(c.spline.code())?;
        w.write_u64::<LittleEndian>(scene.width as u64)?;
        w.write_u64::<LittleEndian>(scene.height as u64)?;
        w.write_u64::<LittleEndian>(scene.frame_count as u64)?;
        w.write_u64::<LittleEndian>(scene.tracks.len() as u64)?;
        w.write_u64::<LittleEndian>(scene.bindings.len() as u64)?;
        write_f64s(&mut w, &c.freqs)?;
        write_f64s(&mut w, &scene.keyframes)?;
        for p in &scene.primitives {
            write_f64s(&mut w, &p.mu_base)?;
            write_f64s(&mut w, &p.log_scale)?;
            write_f64s(&mut w, &p.rotation_base)?;
            w.write_f64::<LittleEndian>(p.opacity_raw)?;
            write_f64s(&mut w, &p.color)?;
            write_f64s(&mut w, &p.omega_raw)?;
            w.write_u64::<LittleEndian>(p.track as u64)?;
        }
        for tr in &scene.tracks {
            tr.y.iter().try_for_each(|v| write_f64s(&mut w, v))?;
            tr.r.iter().try_for_each(|v| write_f64s(&mut w, v))?;
        }
        for b in &scene.bindings {
            w.write_u64::<LittleEndian>(b.point_id)?;
            w.write_u64::<LittleEndian>(b.primitive as u64)?;
        }
        w.flush()
    };
    go().map_err(fmt_err)
}

pub fn read_scene<R: Read>(mut r: R) -> Result<SceneModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt_err)?;
    if &magic != SCENE_MAGIC {
        return Err(Error::SceneFormat(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
    if version != SCENE_VERSION {
        return Err(Error::SceneFormat(format!("unsupported version {version}")));
    }
    const LIMIT: u64 = 1 << 28;
    let p = read_len(&mut r, "primitive", LIMIT)?;
    let m = read_len(&mut r, "keyframe", 1 << 20)?;
    let n = read_len(&mut r, "wave", 1 << 16)?;
    let gamma = r.read_f64::<LittleEndian>().map_err(fmt_err)?;
    let beta = r.read_f64::<LittleEndian>().map_err(fmt_err)?;
    let kind = r.read_u8().map_err(fmt_err)?;
    let spline = r.read_u8().map_err(fmt_err)?;
    let width = read_len(&mut r, "width", LIMIT)?;
    let height = read_len(&mut r, "height", LIMIT)?;
    let frame_count = read_len(&mut r, "frame", LIMIT)?;
    let tcount = read_len(&mut r, "track", LIMIT)?;
    let bcount = read_len(&mut r, "binding", LIMIT)?;
    let config = SceneConfig {
        gamma,
        beta,
        freqs: read_f64s(&mut r, n)?,
        primitive: PrimitiveKind::from_code(kind)
            .ok_or_else(|| Error::SceneFormat(format!("unknown primitive kind {kind}")))?,
        spline: SplineKind::from_code(spline)
            .ok_or_else(|| Error::SceneFormat(format!("unknown spline kind {spline}")))?,
    };
    let keyframes = read_f64s(&mut r, m)?;
    let vec3 = |v: &[f64]| [v[0], v[1], v[2]];
    let mut primitives = Vec::with_capacity(p);
    for _ in 0..p {
        let v = read_f64s(&mut r, 14 + n)?;
        let track = read_len(&mut r, "track index", LIMIT)?;
        primitives.push(GaborPrimitive {
            mu_base: vec3(&v[0..3]),
            log_scale: vec3(&v[3..6]),
            rotation_base: [v[6], v[7], v[8], v[9]],
            opacity_raw: v[10],
            color: vec3(&v[11..14]),
            omega_raw: v[14..].to_vec(),
            track,
        });
    }
    let mut tracks = Vec::with_capacity(tcount);
    for _ in 0..tcount {
        let y = read_f64s(&mut r, 3 * m)?;
        let rr = read_f64s(&mut r, 3 * m)?;
        tracks.push(MotionTrack {
            times: keyframes.clone(),
            y: y.chunks(3).map(vec3).collect(),
            r: rr.chunks(3).map(vec3).collect(),
        });
    }
    let mut bindings = Vec::with_capacity(bcount);
    for _ in 0..bcount {
        let point_id = r.read_u64::<LittleEndian>().map_err(fmt_err)?;
        let primitive = read_len(&mut r, "binding primitive", LIMIT)?;
        bindings.push(TrackBinding { point_id, primitive });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(fmt_err)? != 0 {
        return Err(Error::SceneFormat("trailing bytes after scene".into()));
    }
    let scene = SceneModel {
        config,
        width,
        height,
        frame_count,
        keyframes,
        primitives,
        tracks,
        bindings,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(path: &Path, scene: &SceneModel) -> Result<()> {
    write_scene(scene, BufWriter::new(create(path)?))
}

pub fn load_scene(path: &Path) -> Result<SceneModel> {
    read_scene(BufReader::new(open(path)?)).map_err(|e| match e {
        Error::SceneFormat(msg) => Error::SceneFormat(format!("{}: {msg}", path.display())),
        other => other,
    })
}

// ---------------------------------------------------------------- config

/// Every tunable default, overridable from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
    /// Primitive budget `P` for initialization.
    pub primitives: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.init.validate()?;
        self.train.validate()
    }
}
