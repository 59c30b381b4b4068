//! Normalized k-space samples and the `.kgd` dataset format.

use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::trajectory::{apply_map, retrospective_undersample, CoordMap, Trajectory, UndersamplingSpec};

/// Sample coordinates in `[0, 1]^ndim` with `n_coils` complex values each.
///
/// `values` are sample-major (`values[j * n_coils + c]`) and have been
/// divided by `scale`; multiply by `scale` to recover physical values.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceSamples {
    pub ndim: usize,
    pub n_coils: usize,
    pub coords: Vec<f64>,
    pub values: Vec<Complex64>,
    pub scale: f64,
    /// Map back to cycles/FOV. Not stored in `.kgd` files.
    pub map: Option<CoordMap>,
}

impl KSpaceSamples {
    pub fn new(ndim: usize, n_coils: usize, coords: Vec<f64>, values: Vec<Complex64>, scale: f64) -> Result<Self> {
        let s = KSpaceSamples {
            ndim,
            n_coils,
            coords,
            values,
            scale,
            map: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ndim == 0 || self.n_coils == 0 {
            return Err(Error::shape("ndim and n_coils must be positive"));
        }
        if self.coords.len() % self.ndim != 0 || self.values.len() != self.len() * self.n_coils {
            return Err(Error::shape(format!(
                "{} coordinate values and {} sample values do not describe {}-D samples with {} coils",
                self.coords.len(),
                self.values.len(),
                self.ndim,
                self.n_coils
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::domain(format!("scale {} must be positive", self.scale)));
        }
        if let Some(m) = &self.map {
            if m.ndim() != self.ndim {
                return Err(Error::shape("coordinate map dimension differs from samples"));
            }
        }
        Ok(())
    }

    pub fn with_map(mut self, map: CoordMap) -> Result<Self> {
        self.map = Some(map);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.ndim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coord(&self, j: usize) -> &[f64] {
        &self.coords[j * self.ndim..(j + 1) * self.ndim]
    }

    pub fn sample(&self, j: usize) -> &[Complex64] {
        &self.values[j * self.n_coils..(j + 1) * self.n_coils]
    }

    /// Values multiplied back by `scale`.
    pub fn physical_values(&self) -> Vec<Complex64> {
        self.values.iter().map(|v| v * self.scale).collect()
    }

    /// The first `n` samples.
    pub fn prefix(&self, n: usize) -> KSpaceSamples {
        let n = n.min(self.len());
        KSpaceSamples {
            ndim: self.ndim,
            n_coils: self.n_coils,
            coords: self.coords[..n * self.ndim].to_vec(),
            values: self.values[..n * self.n_coils].to_vec(),
            scale: self.scale,
            map: self.map.clone(),
        }
    }

    /// Keeps the samples of the first `floor(n_spokes / R)` spokes. The
    /// samples must be in the acquisition order of `traj`.
    pub fn undersample(&self, traj: &Trajectory, spec: UndersamplingSpec) -> Result<(KSpaceSamples, Trajectory)> {
        if traj.len() != self.len() {
            return Err(Error::shape(format!(
                "{} samples but the trajectory has {}",
                self.len(),
                traj.len()
            )));
        }
        let kept = retrospective_undersample(traj, spec);
        Ok((self.prefix(kept.len()), kept))
    }

    /// Checks that `traj` normalized by this dataset's map reproduces its
    /// coordinates (to f32 precision).
    pub fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        let map = self
            .map
            .clone()
            .ok_or_else(|| Error::contract("samples carry no coordinate map"))?;
        let expect = apply_map(traj, map);
        if expect.coords.len() != self.coords.len() {
            return Err(Error::contract(format!(
                "trajectory has {} samples, data has {}",
                traj.len(),
                self.len()
            )));
        }
        let worst = expect
            .coords
            .iter()
            .zip(&self.coords)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if worst > 1e-6 {
            return Err(Error::contract(format!(
                "trajectory coordinates differ from the data by up to {worst:.3e}"
            )));
        }
        Ok(())
    }

    /// Narrows coordinates, values and scale to f32 precision.
    pub fn quantized(&self) -> KSpaceSamples {
        let q = |v: f64| v as f32 as f64;
        KSpaceSamples {
            ndim: self.ndim,
            n_coils: self.n_coils,
            coords: self.coords.iter().map(|&v| q(v)).collect(),
            values: self.values.iter().map(|v| Complex64::new(q(v.re), q(v.im))).collect(),
            scale: q(self.scale),
            map: self.map.clone(),
        }
    }
}

const KGD_MAGIC: &[u8; 4] = b"KGDS";
const KGD_VERSION: u32 = 1;

pub fn encode_dataset(s: &KSpaceSamples) -> Result<Vec<u8>> {
    s.validate()?;
    let mut w = Writer::new();
    w.bytes(KGD_MAGIC);
    w.u32(KGD_VERSION);
    w.u32(s.ndim as u32);
    w.u32(s.n_coils as u32);
    w.f32(s.scale as f32);
    w.u64(s.len() as u64);
    for j in 0..s.len() {
        for &u in s.coord(j) {
            w.f32(u as f32);
        }
        for v in s.sample(j) {
            w.f32(v.re as f32);
            w.f32(v.im as f32);
        }
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<KSpaceSamples> {
    let mut r = Reader::new(bytes);
    r.magic(KGD_MAGIC)?;
    r.version(KGD_VERSION)?;
    let at = r.offset();
    let ndim = r.u32("ndim")? as usize;
    let n_coils = r.u32("n_coils")? as usize;
    if !(1..=3).contains(&ndim) || n_coils == 0 {
        return Err(Error::format(at, format!("ndim {ndim} / n_coils {n_coils} out of range")));
    }
    let at = r.offset();
    let scale = r.f32("scale")? as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::format(at, format!("scale {scale} must be positive")));
    }
    let n = r.u64("sample count")? as usize;
    let per = ndim + 2 * n_coils;
    let expected = n.checked_mul(per * 4).unwrap_or(usize::MAX);
    if r.remaining() != expected {
        return Err(Error::format(
            r.offset(),
            format!(
                "{n} samples need {expected} payload bytes, found {}",
                r.remaining()
            ),
        ));
    }
    let payload = r.f32s(n * per, "samples")?;
    let mut coords = Vec::with_capacity(n * ndim);
    let mut values = Vec::with_capacity(n * n_coils);
    for rec in payload.chunks_exact(per) {
        coords.extend_from_slice(&rec[..ndim]);
        values.extend(rec[ndim..].chunks_exact(2).map(|c| Complex64::new(c[0], c[1])));
    }
    r.finish()?;
    KSpaceSamples::new(ndim, n_coils, coords, values, scale)
}

pub fn save_dataset(s: &KSpaceSamples, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.buf = encode_dataset(s)?;
    w.save(path)
}

pub fn load_dataset(path: &Path) -> Result<KSpaceSamples> {
    decode_dataset(&read_file(path)?)
}

/// Reads a manifest: one file name per line, `#` starts a comment.
/// Names are resolved relative to the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| dir.join(l))
        .collect())
}

pub fn write_manifest(path: &Path, names: &[String], comment: &str) -> Result<()> {
    let mut text = String::new();
    for line in comment.lines() {
        text.push_str("# ");
        text.push_str(line);
        text.push('\n');
    }
    for n in names {
        text.push_str(n);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
