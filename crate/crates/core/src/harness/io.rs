//! File formats.
//!
//! Structured data is UTF-8 JSON; poses are stored as a unit quaternion
//! `[w, x, y, z]` plus a translation, world to camera, in meters. Floats use
//! shortest round-trip decimal encoding.
//!
//! Dense grids use a small binary layout: a 4-byte magic (`XYZM` for
//! coordinate maps, `DMAP` for detection maps), little-endian `u32` width,
//! height and channel count, then `width * height * channels` little-endian
//! `f32` values in row-major order with channels interleaved. Non-finite
//! values mark invalid entries.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::detection::DetectionMaps;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::harness::scene::Scene;
use crate::mapping::XyzMap;

pub const XYZ_MAGIC: [u8; 4] = *b"XYZM";
pub const DMAP_MAGIC: [u8; 4] = *b"DMAP";

/// Channels of a detection map file: likelihood, offset x/y, displacement x/y.
pub const DMAP_CHANNELS: u32 = 5;

pub const SCENE_FILE: &str = "scene.json";

#[derive(Clone, Debug, PartialEq)]
pub struct FloatGrid {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

fn grid_len(width: u32, height: u32, channels: u32) -> Result<usize> {
    (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or_else(|| Error::Format(format!("grid {width}x{height}x{channels} is too large")))
}

pub fn write_grid<W: Write>(mut w: W, magic: [u8; 4], grid: &FloatGrid) -> Result<()> {
    if grid.data.len() != grid_len(grid.width, grid.height, grid.channels)? {
        return Err(Error::InvalidInput("grid data length does not match its shape".into()));
    }
    w.write_all(&magic)?;
    for v in [grid.width, grid.height, grid.channels] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(4 * grid.data.len());
    for v in &grid.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R, magic: [u8; 4]) -> Result<FloatGrid> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated grid header".into()))?;
    if header[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&header[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4-byte slice"));
    let (width, height, channels) = (word(4), word(8), word(12));
    let n = grid_len(width, height, channels)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * n {
        return Err(Error::Format(format!(
            "grid {width}x{height}x{channels} needs {} data bytes, found {}",
            4 * n,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(FloatGrid {
        width,
        height,
        channels,
        data,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn write_xyz_map(path: &Path, map: &XyzMap) -> Result<()> {
    let grid = FloatGrid {
        width: map.width as u32,
        height: map.height as u32,
        channels: 3,
        data: map.data.clone(),
    };
    write_grid(create(path)?, XYZ_MAGIC, &grid)
}

pub fn read_xyz_map(path: &Path) -> Result<XyzMap> {
    let grid = read_grid(BufReader::new(fs::File::open(path)?), XYZ_MAGIC)?;
    if grid.channels != 3 {
        return Err(Error::Format(format!(
            "coordinate map needs 3 channels, found {}",
            grid.channels
        )));
    }
    Ok(XyzMap {
        width: grid.width as usize,
        height: grid.height as usize,
        data: grid.data,
    })
}

/// Writes detection maps at their grid resolution (`cols x rows`).
pub fn write_detection_maps(path: &Path, maps: &DetectionMaps) -> Result<()> {
    maps.validate()?;
    let mut data = Vec::with_capacity(5 * maps.m_loc.len());
    for i in 0..maps.m_loc.len() {
        let (o, d) = (maps.m_off[i], maps.m_dis[i]);
        data.extend([maps.m_loc[i], o.x, o.y, d.x, d.y].map(|v| v as f32));
    }
    let grid = FloatGrid {
        width: maps.cols as u32,
        height: maps.rows as u32,
        channels: DMAP_CHANNELS,
        data,
    };
    write_grid(create(path)?, DMAP_MAGIC, &grid)
}

/// Reads detection maps; cells with any non-finite channel get zero
/// likelihood so they never decode.
pub fn read_detection_maps(path: &Path, stride: usize) -> Result<DetectionMaps> {
    let grid = read_grid(BufReader::new(fs::File::open(path)?), DMAP_MAGIC)?;
    if grid.channels != DMAP_CHANNELS {
        return Err(Error::Format(format!(
            "detection map needs {DMAP_CHANNELS} channels, found {}",
            grid.channels
        )));
    }
    let mut maps = DetectionMaps::zeros(grid.height as usize, grid.width as usize, stride);
    for (i, cell) in grid.data.chunks_exact(5).enumerate() {
        if cell.iter().all(|v| v.is_finite()) {
            maps.m_loc[i] = cell[0] as f64;
            maps.m_off[i] = Vec2::new(cell[1] as f64, cell[2] as f64);
            maps.m_dis[i] = Vec2::new(cell[3] as f64, cell[4] as f64);
        }
    }
    maps.validate()?;
    Ok(maps)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(fs::File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

fn xyz_path(dir: &Path, id: u32) -> PathBuf {
    dir.join("xyz").join(format!("{id}.xyzm"))
}

/// Writes `scene.json` plus one coordinate map per database image under
/// `xyz/<id>.xyzm`.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(SCENE_FILE), scene)?;
    for d in &scene.database {
        write_xyz_map(&xyz_path(dir, d.id), &d.xyz)?;
    }
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let mut scene: Scene = read_json(&dir.join(SCENE_FILE))?;
    for d in &mut scene.database {
        d.xyz = read_xyz_map(&xyz_path(dir, d.id))?;
    }
    scene.validate()?;
    Ok(scene)
}
