//! Gridded moment data on `(e, F, T, sigma_E E)` with bit-exact persistence.
//!
//! A dataset is a directory: `meta.json` describes grids, parameters, and
//! provenance; each field lives in a flat binary file of little-endian f64,
//! written x-fastest. Datasets are immutable once constructed.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Uniform grid described by origin, spacing, and point count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub n: usize,
}

impl Grid {
    pub fn coord(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    pub fn end(&self) -> f64 {
        self.coord(self.n.saturating_sub(1))
    }

    /// Index of the grid point nearest to `value` (ties round up), clamped.
    pub fn nearest(&self, value: f64) -> usize {
        let raw = (value - self.start) / self.step;
        let idx = raw.round();
        idx.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

/// Problem parameters carried alongside the fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemParams {
    pub gamma: f64,
    pub t_in: f64,
    pub t_o: f64,
    pub rho_cv: f64,
    pub domain_length: f64,
    pub m_omega: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub generator: String,
    pub config_hash: String,
    pub created_unix: u64,
    /// Content hash of the parent dataset for derived data (slices, resamples).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(generator: &str, config_hash: &str) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Provenance {
            generator: generator.to_string(),
            config_hash: config_hash.to_string(),
            created_unix,
            parent: None,
            notes: Vec::new(),
        }
    }
}

/// Gridded fields `e`, `F`, `T`, `S = sigma_E E`, each of shape `(nx, nt)`.
#[derive(Debug, Clone)]
pub struct MomentDataset {
    pub x: Grid,
    pub t: Grid,
    pub e: Array2<f64>,
    pub f: Array2<f64>,
    pub temp: Array2<f64>,
    pub s: Array2<f64>,
    pub params: ProblemParams,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldMeta {
    name: String,
    file: String,
    shape: [usize; 2],
    dtype: String,
    layout: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    schema_version: u32,
    x: Grid,
    t: Grid,
    fields: Vec<FieldMeta>,
    params: ProblemParams,
    provenance: Provenance,
}

pub const FIELD_NAMES: [&str; 4] = ["e", "f", "t", "s"];

impl MomentDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: Grid,
        t: Grid,
        e: Array2<f64>,
        f: Array2<f64>,
        temp: Array2<f64>,
        s: Array2<f64>,
        params: ProblemParams,
        provenance: Provenance,
    ) -> Result<Self> {
        let shape = (x.n, t.n);
        for (name, field) in [("e", &e), ("f", &f), ("t", &temp), ("s", &s)] {
            if field.dim() != shape {
                return Err(Error::Dataset(format!(
                    "field {name} has shape {:?}, expected {:?}",
                    field.dim(),
                    shape
                )));
            }
        }
        Ok(MomentDataset {
            x,
            t,
            e,
            f,
            temp,
            s,
            params,
            provenance,
        })
    }

    pub fn nx(&self) -> usize {
        self.x.n
    }

    pub fn nt(&self) -> usize {
        self.t.n
    }

    pub fn fields(&self) -> [(&'static str, &Array2<f64>); 4] {
        [
            ("e", &self.e),
            ("f", &self.f),
            ("t", &self.temp),
            ("s", &self.s),
        ]
    }

    pub fn field(&self, name: &str) -> Option<&Array2<f64>> {
        match name {
            "e" => Some(&self.e),
            "f" => Some(&self.f),
            "t" => Some(&self.temp),
            "s" => Some(&self.s),
            _ => None,
         }
    }

    /// Content hash over grids and field payloads (provenance excluded).
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for grid in [&self.x, &self.t] {
            hasher.update(grid.start.to_le_bytes());
            hasher.update(grid.step.to_le_bytes());
            hasher.update((grid.n as u64).to_le_bytes());
        }
        for (_, field) in self.fields() {
            for it in 0..self.t.n {
                for ix in 0..self.x.n {
                    hasher.update(field[[ix, it]].to_le_bytes());
                }
            }
        }
        hex_string(&hasher.finalize())
    }

    /// Scale the energy-carrying fields (`e`, `F`, `S`) by `factor`, leaving
    /// temperature untouched. Used to move between energy unit conventions.
    pub fn scale_energy(&self, factor: f64) -> MomentDataset {
        let mut out = self.clone();
        out.e.mapv_inplace(|v| v * factor);
        out.f.mapv_inplace(|v| v * factor);
        out.s.mapv_inplace(|v| v * factor);
        out.provenance
            .notes
            .push(format!("energy fields scaled by {factor:e}"));
        out
    }

    /// Restrict to inclusive index ranges.
    pub fn slice(&self, xr: (usize, usize), tr: (usize, usize)) -> Result<MomentDataset> {
        let (x0, x1) = xr;
        let (t0, t1) = tr;
        if x1 < x0 || t1 < t0 || x1 >= self.x.n || t1 >= self.t.n {
            return Err(Error::Dataset(format!(
                "slice ({x0}..={x1}, {t0}..={t1}) out of range for shape ({}, {})",
                self.x.n, self.t.n
            )));
        }
        let sl = ndarray::s![x0..=x1, t0..=t1];
        let mut provenance = self.provenance.clone();
        provenance.parent = Some(self.content_hash());
        provenance
            .notes
            .push(format!("slice x [{x0}, {x1}] t [{t0}, {t1}]"));
        MomentDataset::new(
            Grid {
                start: self.x.coord(x0),
                step: self.x.step,
                n: x1 - x0 + 1,
            },
            Grid {
                start: self.t.coord(t0),
                step: self.t.step,
                n: t1 - t0 + 1,
            },
            self.e.slice(sl).to_owned(),
            self.f.slice(sl).to_owned(),
            self.temp.slice(sl).to_owned(),
            self.s.slice(sl).to_owned(),
            self.params.clone(),
            provenance,
        )
    }

    /// Slice by physical bounds; endpoints map to the nearest grid points
    /// (inclusive on both sides).
    pub fn slice_physical(
        &self,
        x_bounds: (f64, f64),
        t_bounds: (f64, f64),
    ) -> Result<MomentDataset> {
        let xr = (self.x.nearest(x_bounds.0), self.x.nearest(x_bounds.1));
        let tr = (self.t.nearest(t_bounds.0), self.t.nearest(t_bounds.1));
        self.slice(xr, tr)
    }

    /// Subsample to `(nx, nt)` when the strides are integral; otherwise
    /// linearly interpolate if `allow_interp` is set.
    pub fn resample(&self, nx: usize, nt: usize, allow_interp: bool) -> Result<MomentDataset> {
        if nx < 2 || nt < 2 {
            return Err(Error::Dataset("resample needs at least 2 points".into()));
        }
        let commensurate = self.x.n % nx == 0 && self.t.n % nt == 0;
        let mut provenance = self.provenance.clone();
        provenance.parent = Some(self.content_hash());
        if commensurate {
            let sx = self.x.n / nx;
            let st = self.t.n / nt;
            provenance
                .notes
                .push(format!("resample stride ({sx}, {st})"));
            let take =
                |a: &Array2<f64>| Array2::from_shape_fn((nx, nt), |(i, j)| a[[i * sx, j * st]]);
            return MomentDataset::new(
                Grid {
                    start: self.x.start,
                    step: self.x.step * sx as f64,
                    n: nx,
                },
                Grid {
                    start: self.t.start,
                    step: self.t.step * st as f64,
                    n: nt,
                },
                take(&self.e),
                take(&self.f),
                take(&self.temp),
                take(&self.s),
                self.params.clone(),
                provenance,
            );
        }
        if !allow_interp {
            return Err(Error::Dataset(format!(
                "({}, {}) -> ({nx}, {nt}) is not an integer stride; pass allow_interp",
                self.x.n, self.t.n
            )));
        }
        provenance.notes.push("resample linear".into());
        let gx = Grid {
            start: self.x.start,
            step: (self.x.end() - self.x.start) / (nx - 1) as f64,
            n: nx,
        };
        let gt = Grid {
            start: self.t.start,
            step: (self.t.end() - self.t.start) / (nt - 1) as f64,
            n: nt,
        };
        let interp = |a: &Array2<f64>| {
            Array2::from_shape_fn((nx, nt), |(i, j)| {
                bilinear(a, &self.x, &self.t, gx.coord(i), gt.coord(j))
            })
        };
        MomentDataset::new(
            gx,
            gt,
            interp(&self.e),
            interp(&self.f),
            interp(&self.temp),
            interp(&self.s),
            self.params.clone(),
            provenance,
        )
    }

    /// Write the dataset directory (meta.json plus one binary per field).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let fields: Vec<FieldMeta> = self
            .fields()
            .iter()
            .map(|(name, _)| FieldMeta {
                name: name.to_string(),
                file: format!("{name}.bin"),
                shape: [self.x.n, self.t.n],
                dtype: "f64-le".into(),
                layout: "x-fastest".into(),
            })
            .collect();
        let meta = DatasetMeta {
            schema_version: SCHEMA_VERSION,
            x: self.x,
            t: self.t,
            fields,
            params: self.params.clone(),
            provenance: self.provenance.clone(),
        };
        let meta_json = serde_json::to_string_pretty(&meta)?;
        std::fs::write(dir.join("meta.json"), meta_json)?;
        for (name, field) in self.fields() {
            let mut buf = Vec::with_capacity(self.x.n * self.t.n * 8);
            for it in 0..self.t.n {
                for ix in 0..self.x.n {
                    buf.extend_from_slice(&field[[ix, it]].to_le_bytes());
                }
            }
            let mut file = std::fs::File::create(dir.join(format!("{name}.bin")))?;
            file.write_all(&buf)?;
        }
        Ok(())
    }

    /// Read a dataset directory written by [`MomentDataset::write`].
    pub fn read(dir: &Path) -> Result<MomentDataset> {
        let meta_path = dir.join("meta.json");
        let meta_json = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", meta_path.display())))?;
        let meta: DatasetMeta = serde_json::from_str(&meta_json)?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: meta.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut arrays: Vec<Array2<f64>> = Vec::with_capacity(4);
        for want in FIELD_NAMES {
            let fm = meta
                .fields
                .iter()
                .find(|f| f.name == want)
                .ok_or_else(|| Error::Dataset(format!("meta.json lists no field '{want}'")))?;
            if fm.shape != [meta.x.n, meta.t.n] {
                return Err(Error::Dataset(format!(
                    "field {want}: meta shape {:?} disagrees with grids ({}, {})",
                    fm.shape, meta.x.n, meta.t.n
                )));
            }
            let path = dir.join(&fm.file);
            let mut file = std::fs::File::open(&path).map_err(|_| {
                Error::Dataset(format!(
                    "field file '{}' for field '{want}' is missing",
                    fm.file
                ))
            })?;
            let expected = meta.x.n * meta.t.n * 8;
            let mut buf = Vec::with_capacity(expected);
            file.read_to_end(&mut buf)?;
            if buf.len() != expected {
                return Err(Error::Dataset(format!(
                    "field file '{}' truncated: {} bytes, expected {expected}",
                    fm.file,
                    buf.len()
                )));
            }
            let mut arr = Array2::zeros((meta.x.n, meta.t.n));
            for it in 0..meta.t.n {
                for ix in 0..meta.x.n {
                    let off = (it * meta.x.n + ix) * 8;
                    arr[[ix, it]] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
                }
            }
            arrays.push(arr);
        }
        let s = arrays.pop().unwrap();
        let temp = arrays.pop().unwrap();
        let f = arrays.pop().unwrap();
        let e = arrays.pop().unwrap();
        MomentDataset::new(meta.x, meta.t, e, f, temp, s, meta.params, meta.provenance)
    }

    /// CSV export with one row per `(x, t)` sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,t,e,F,T,S")?;
        for it in 0..self.t.n {
            for ix in 0..self.x.n {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.x.coord(ix),
                    self.t.coord(it),
                    self.e[[ix, it]],
                    self.f[[ix, it]],
                    self.temp[[ix, it]],
                    self.s[[ix, it]]
                )?;
            }
        }
        Ok(())
    }
}

fn bilinear(a: &Array2<f64>, gx: &Grid, gt: &Grid, x: f64, t: f64) -> f64 {
    let fx = ((x - gx.start) / gx.step).clamp(0.0, (gx.n - 1) as f64);
    let ft = ((t - gt.start) / gt.step).clamp(0.0, (gt.n - 1) as f64);
    let i0 = (fx.floor() as usize).min(gx.n - 2);
    let j0 = (ft.floor() as usize).min(gt.n - 2);
    let wx = fx - i0 as f64;
    let wt = ft - j0 as f64;
    a[[i0, j0]] * (1.0 - wx) * (1.0 - wt)
        + a[[i0 + 1, j0]] * wx * (1.0 - wt)
        + a[[i0, j0 + 1]] * (1.0 - wx) * wt
        + a[[i0 + 1, j0 + 1]] * wx * wt
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a canonical JSON serialization; used for config hashes.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex_string(&hasher.finalize())
}
