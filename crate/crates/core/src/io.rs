//! On-disk formats: fields as little-endian `f64` arrays with a JSON
//! sidecar, measurement directories, and JSON/CSV reports.

use crate::analysis::EstimateReport;
use crate::error::{Error, Result};
use crate::field::{ComplexField, FactoredField, Field};
use crate::forward::MeasurementData;
use crate::grid::{hex_digest, Grid, SpaceGrid};
use crate::inverse::{IdentitySample, ReconstructionResult};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    /// Nodes per axis, or `[count]` for traces on ∂Ω.
    pub dims: Vec<usize>,
    pub nt: usize,
    pub extents: Vec<[f64; 2]>,
    pub dt: f64,
    pub dx: Vec<f64>,
    pub complex: bool,
    pub factored: bool,
}

impl FieldHeader {
    pub fn on(space: &SpaceGrid, grid: &Grid, levels: usize) -> Self {
        FieldHeader {
            dims: space.axes().iter().map(|a| a.n).collect(),
            nt: levels,
            extents: space.axes().iter().map(|a| [a.lo, a.hi]).collect(),
            dt: grid.dt(),
            dx: space.axes().iter().map(|a| a.dx()).collect(),
            complex: false,
            factored: false,
        }
    }

    /// Header for a trace on ∂Ω of `space`.
    pub fn trace(space: &SpaceGrid, grid: &Grid, levels: usize) -> Self {
        FieldHeader {
            dims: vec![space.boundary_nodes().len()],
            ..FieldHeader::on(space, grid, levels)
        }
    }

    pub fn nodes(&self) -> usize {
        self.dims.iter().product()
    }

    fn values(&self) -> usize {
        let per = match (self.complex, self.factored) {
            (_, true) => 3,
            (true, false) => 2,
            (false, false) => 1,
        };
        self.nodes() * self.nt * per
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_raw(path: &Path, header: &FieldHeader, values: &[f64]) -> Result<()> {
    if values.len() != header.values() {
        return Err(Error::Data(format!("{}: {} values, header wants {}", path.display(), values.len(), header.values())));
    }
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(sidecar(path), serde_json::to_vec_pretty(header)?)?;
    Ok(())
}

fn read_raw(path: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let header: FieldHeader = serde_json::from_slice(&fs::read(sidecar(path)).map_err(|e| Error::Data(format!("{}: {e}", sidecar(path).display())))?)
        .map_err(|e| Error::Data(format!("{}: {e}", sidecar(path).display())))?;
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if bytes.len() != header.values() * 8 {
        return Err(Error::Data(format!("{}: {} bytes, header wants {}", path.display(), bytes.len(), header.values() * 8)));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

/// `path` is the `.bin` file; the sidecar goes next to it as `.json`.
pub fn write_field(path: &Path, header: &FieldHeader, f: &Field) -> Result<()> {
    let h = FieldHeader { complex: false, factored: false, nt: f.levels(), ..header.clone() };
    if h.nodes() != f.nodes() {
        return Err(Error::Data(format!("{}: field has {} nodes, header {}", path.display(), f.nodes(), h.nodes())));
    }
    write_raw(path, &h, f.values())
}

pub fn read_field(path: &Path) -> Result<(FieldHeader, Field)> {
    let (h, v) = read_raw(path)?;
    if h.complex || h.factored {
        return Err(Error::Data(format!("{}: expected a real field", path.display())));
    }
    let f = Field::from_raw(h.nodes(), h.nt, h.nt == 1, v)?;
    Ok((h, f))
}

/// Interleaved `re, im`.
pub fn write_complex_field(path: &Path, header: &FieldHeader, f: &ComplexField) -> Result<()> {
    let h = FieldHeader { complex: true, factored: false, nt: f.levels(), ..header.clone() };
    let v: Vec<f64> = f.values().iter().flat_map(|z| [z.re, z.im]).collect();
    write_raw(path, &h, &v)
}

pub fn read_complex_field(path: &Path) -> Result<(FieldHeader, ComplexField)> {
    let (h, v) = read_raw(path)?;
    if !h.complex || h.factored {
        return Err(Error::Data(format!("{}: expected a complex field", path.display())));
    }
    let z = v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok((h.clone(), ComplexField::from_raw(h.nodes(), h.nt, h.nt == 1, z)?))
}

/// Log envelope block followed by the interleaved oscillator.
pub fn write_factored_field(path: &Path, header: &FieldHeader, f: &FactoredField) -> Result<()> {
    let h = FieldHeader { complex: true, factored: true, nt: f.log_envelope.levels(), ..header.clone() };
    let mut v = f.log_envelope.values().to_vec();
    v.extend(f.oscillator.values().iter().flat_map(|z| [z.re, z.im]));
    write_raw(path, &h, &v)
}

pub fn read_factored_field(path: &Path) -> Result<(FieldHeader, FactoredField)> {
    let (h, v) = read_raw(path)?;
    if !h.factored {
        return Err(Error::Data(format!("{}: expected a factored field", path.display())));
    }
    let n = h.nodes() * h.nt;
    let env = Field::from_raw(h.nodes(), h.nt, h.nt == 1, v[..n].to_vec())?;
    let osc = v[n..].chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    let osc = ComplexField::from_raw(h.nodes(), h.nt, h.nt == 1, osc)?;
    Ok((h, FactoredField { log_envelope: env, oscillator: osc }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementManifest {
    pub cost_id: String,
    pub m0: String,
    pub grid_hash: String,
    pub solver: serde_json::Value,
    /// File name to SHA-256 of its bytes.
    pub files: Vec<(String, String)>,
}

const MEASUREMENT_FILES: [&str; 6] = ["u_at0", "m_at_t", "u_sigma", "m_sigma", "u_at_t", "m_at0"];

pub fn write_measurement(dir: &Path, grid: &Grid, data: &MeasurementData, cost_id: &str, m0: &str, solver: serde_json::Value) -> Result<MeasurementManifest> {
    data.check_shape(grid)?;
    fs::create_dir_all(dir)?;
    let sp = grid.inner();
    let slice = FieldHeader::on(sp, grid, 1);
    let trace = FieldHeader::trace(sp, grid, grid.nt());
    let items: [(&str, Field, &FieldHeader); 6] = [
        ("u_at0", Field::spatial(data.u_at0.clone()), &slice),
        ("m_at_t", Field::spatial(data.m_at_t.clone()), &slice),
        ("u_sigma", data.u_sigma.clone(), &trace),
        ("m_sigma", data.m_sigma.clone(), &trace),
        ("u_at_t", Field::spatial(data.u_at_t.clone()), &slice),
        ("m_at0", Field::spatial(data.m_at0.clone()), &slice),
    ];
    let mut files = Vec::new();
    for (name, f, h) in items {
        let p = dir.join(format!("{name}.bin"));
        write_field(&p, h, &f)?;
        files.push((format!("{name}.bin"), hex_digest(&fs::read(&p)?)));
    }
    let manifest = MeasurementManifest {
        cost_id: cost_id.into(),
        m0: m0.into(),
        grid_hash: grid.hash(),
        solver,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_measurement(dir: &Path, grid: &Grid) -> Result<(MeasurementManifest, MeasurementData)> {
    let m = dir.join("manifest.json");
    let manifest: MeasurementManifest = serde_json::from_slice(&fs::read(&m).map_err(|e| Error::Data(format!("{}: {e}", m.display())))?)
        .map_err(|e| Error::Data(format!("{}: {e}", m.display())))?;
    if manifest.grid_hash != grid.hash() {
        return Err(Error::Data(format!("{}: recorded grid {} differs from {}", dir.display(), manifest.grid_hash, grid.hash())));
    }
    let mut fields = Vec::new();
    for name in MEASUREMENT_FILES {
        fields.push(read_field(&dir.join(format!("{name}.bin")))?.1);
    }
    let mut it = fields.into_iter();
    let mut next = || it.next().unwrap();
    let data = MeasurementData {
        u_at0: next().into_values(),
        m_at_t: next().into_values(),
        u_sigma: next(),
        m_sigma: next(),
        u_at_t: next().into_values(),
        m_at0: next().into_values(),
    };
    data.check_shape(grid).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    Ok((manifest, data))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-tripping decimal.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// `<stem>.json` report, `<stem>_recovered.bin` field and
/// `<stem>_samples.csv` identity rows.
pub fn write_reconstruction(dir: &Path, stem: &str, grid: &Grid, r: &ReconstructionResult) -> Result<()> {
    write_json(&dir.join(format!("{stem}.json")), r)?;
    let h = FieldHeader::on(grid.inner(), grid, 1);
    write_field(&dir.join(format!("{stem}_recovered.bin")), &h, &Field::spatial(r.recovered.clone()))?;
    let rows: Vec<Vec<String>> = r.samples.iter().map(|s| vec![num(s.k[0]), num(s.k[1]), num(s.re), num(s.im)]).collect();
    write_csv(&dir.join(format!("{stem}_samples.csv")), &["k1", "k2", "re", "im"], &rows)
}

/// Frequency-sample table: k-vector, τ, Re, Im and λ.
pub fn write_frequency_samples(path: &Path, samples: &[IdentitySample]) -> Result<()> {
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let (k, tau) = s.frequency.unwrap_or(([f64::NAN; 2], f64::NAN));
            vec![num(k[0]), num(k[1]), num(tau), num(s.value.re), num(s.value.im), num(s.lambda)]
        })
        .collect();
    write_csv(path, &["k1", "k2", "tau", "re", "im", "lambda"], &rows)
}

/// `<id>.json` and `<id>_ratios.csv` (sample, λ, ratio).
pub fn write_estimate(dir: &Path, r: &EstimateReport) -> Result<()> {
    write_json(&dir.join(format!("{}.json", r.id)), r)?;
    let per = r.lambdas.len().max(1);
    let rows: Vec<Vec<String>> = r
        .ratios
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let lam = r.lambdas.get(i % per).copied().unwrap_or(f64::NAN);
            vec![(i / per).to_string(), num(lam), num(*v)]
        })
        .collect();
    write_csv(&dir.join(format!("{}_ratios.csv", r.id)), &["sample", "lambda", "ratio"], &rows)
}

/// SHA-256 over the files of `dir` (sorted by name, recursing), skipping
/// `skip`; binds names and contents.
pub fn hash_tree(dir: &Path, skip: &[&str]) -> Result<String> {
    fn walk(base: &Path, dir: &Path, skip: &[&str], out: &mut Vec<(String, PathBuf)>) -> Result<()> {
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
            if skip.contains(&rel.as_str()) {
                continue;
            }
            if p.is_dir() {
                walk(base, &p, skip, out)?;
            } else {
                out.push((rel, p));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, skip, &mut files)?;
    files.sort();
    let mut bytes = Vec::new();
    for (rel, p) in files {
        bytes.extend_from_slice(rel.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(hex_digest(&fs::read(p)?).as_bytes());
        bytes.push(b'\n');
    }
    Ok(hex_digest(&bytes))
}
