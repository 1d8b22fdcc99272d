//! Trajectory datasets and their on-disk form.
//!
//! A dataset file is JSON Lines, one trajectory per line:
//! `{"t": T, "s": [[...]], "o": [[...]], "a": [[...]]}`, rows indexed by time.
//! A sidecar manifest records how the data was generated. Floats are written
//! with 17 significant digits so a reload reproduces every bit.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::ser::Serialize;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{Dims, Kind};

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "t")]
    pub steps: usize,
    #[serde(rename = "s")]
    pub states: Vec<Vec<f64>>,
    #[serde(rename = "o")]
    pub observations: Vec<Vec<f64>>,
    #[serde(rename = "a")]
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>, observations: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Self {
        Self {
            steps: states.len(),
            states,
            observations,
            actions,
        }
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// Value of a 1-based `(time, index)` coordinate.
    pub fn get(&self, kind: Kind, time: u32, index: u32) -> Option<f64> {
        let rows = match kind {
            Kind::State => &self.states,
            Kind::Observation => &self.observations,
            Kind::Action => &self.actions,
            Kind::Seed => return None,
        };
        rows.get(time.checked_sub(1)? as usize)?
            .get(index.checked_sub(1)? as usize)
            .copied()
    }

    fn validate(&self, dims: Dims) -> Result<()> {
        let ok = |rows: &[Vec<f64>], width: u32| {
            rows.len() == self.steps && rows.iter().all(|r| r.len() == width as usize)
        };
        if !ok(&self.states, dims.state)
            || !ok(&self.observations, dims.obs)
            || !ok(&self.actions, dims.action)
        {
            return Err(Error::InvalidDataset(format!(
                "trajectory shape does not match {} steps of dims {:?}",
                self.steps,
                dims.as_array()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Manifest {
    /// Environment or fixture name.
    #[serde(rename = "env")]
    pub source: String,
    pub init_mode: String,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub dims: [u32; 3],
    #[serde(rename = "T")]
    pub steps: usize,
    /// Generator constants (environment parameters, fixture parameters).
    #[serde(default)]
    pub constants: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub manifest: Manifest,
}

impl Dataset {
    /// Checks shared dimensions and the minimum trajectory count.
    pub fn new(trajectories: Vec<Trajectory>, manifest: Manifest) -> Result<Self> {
        let d = Self {
            trajectories,
            manifest,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.len() < crate::independence::MIN_SAMPLES {
            return Err(Error::InvalidDataset(format!(
                "need at least {} trajectories, got {}",
                crate::independence::MIN_SAMPLES,
                self.trajectories.len()
            )));
        }
        if self.trajectories.len() != self.manifest.n {
            return Err(Error::InvalidDataset(format!(
                "manifest declares {} trajectories, found {}",
                self.manifest.n,
                self.trajectories.len()
            )));
        }
        let dims = self.dims();
        self.trajectories.iter().try_for_each(|t| t.validate(dims))
    }

    pub fn dims(&self) -> Dims {
        let [s, o, a] = self.manifest.dims;
        Dims::new(s, o, a)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Shortest trajectory length.
    pub fn min_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).min().unwrap_or(0)
    }

    /// One value per trajectory for a 1-based `(time, index)` coordinate.
    pub fn column(&self, kind: Kind, time: u32, index: u32) -> Result<Vec<f64>> {
        self.trajectories
            .iter()
            .map(|t| {
                t.get(kind, time, index).ok_or_else(|| {
                    Error::InvalidDataset(format!(
                        "coordinate {}{}[{}] missing from a trajectory",
                        kind.letter(),
                        time,
                        index
                    ))
                })
            })
            .collect()
    }

    /// Writes `path` (JSON Lines) and `manifest_path_for(path)`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.trajectories {
            write_json(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let mut m = BufWriter::new(File::create(manifest_path_for(path))?);
        write_json_pretty(&mut m, &self.manifest)?;
        m.write_all(b"\n")?;
        m.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(File::open(manifest_path_for(path))?))?;
        let mut trajectories = Vec::with_capacity(manifest.n);
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            trajectories.push(serde_json::from_str(&line)?);
        }
        Dataset::new(trajectories, manifest)
    }
}

/// `data.jsonl` -> `data.manifest.json`.
pub fn manifest_path_for(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

/// Formats every `f64` with 17 significant digits.
#[derive(Clone, Copy, Default)]
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Compact JSON with 17-significant-digit floats.
pub fn write_json<W: Write, T: Serialize + ?Sized>(w: &mut W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(w, FullPrecision);
    value.serialize(&mut ser)?;
    Ok(())
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    write_json(&mut buf, value)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Pretty JSON for small sidecar documents.
pub fn write_json_pretty<W: Write, T: Serialize + ?Sized>(w: &mut W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::pretty(w);
    value.serialize(&mut ser)?;
    Ok(())
}
