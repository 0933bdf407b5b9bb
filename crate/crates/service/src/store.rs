//! On-disk surface and profile store.
//!
//! Layout under the data directory:
//! - `manifest.json`: surface entries, the id counter and the working set
//! - `blobs/<sha256>`: uploaded raster payloads, byte for byte
//! - `profiles/<name>.json`: uploaded device profiles, byte for byte

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use floodstream_core::raster::RasterError;
use floodstream_core::{DeviceProfile, RasterSurface, SurfaceId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BUILTIN_PROFILES: [&str; 2] = ["paper-hd7950", "synthetic"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("surface is {actual_width}x{actual_height}, store holds {width}x{height}")]
    DimMismatch { width: u32, height: u32, actual_width: u32, actual_height: u32 },
    #[error("unknown surface ids: {}", .0.iter().map(SurfaceId::as_str).collect::<Vec<_>>().join(", "))]
    UnknownIds(Vec<SurfaceId>),
    #[error("surface {0} listed twice")]
    DuplicateId(SurfaceId),
    #[error("no surface {0}")]
    NoSuchSurface(SurfaceId),
    #[error("no profile {0}")]
    NoSuchProfile(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid profile name `{0}` (use letters, digits, '-' and '_')")]
    InvalidName(String),
    #[error("profile {0} is built in and read-only")]
    ReadOnly(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceEntry {
    pub id: SurfaceId,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingSet {
    pub selected: Vec<SurfaceId>,
    pub version: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    next_surface: u64,
    surfaces: Vec<SurfaceEntry>,
    working_set: WorkingSet,
}

pub struct Store {
    dir: PathBuf,
    manifest: Manifest,
    decoded: BTreeMap<SurfaceId, Arc<RasterSurface>>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temp file so readers never see a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn valid_profile_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("blobs"))?;
        fs::create_dir_all(dir.join("profiles"))?;
        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest = match fs::read(&manifest_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(e.into()),
        };
        let mut store = Store { dir, manifest, decoded: BTreeMap::new() };
        for entry in &store.manifest.surfaces {
            let bytes = fs::read(store.blob_path(&entry.sha256))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(StoreError::Corrupt(format!("blob {} does not match its digest", entry.sha256)));
            }
            let surface = RasterSurface::decode(entry.id.clone(), entry.name.clone(), &bytes)?;
            store.decoded.insert(entry.id.clone(), Arc::new(surface));
        }
        if let Some(missing) = store.manifest.working_set.selected.iter().find(|id| !store.decoded.contains_key(*id)) {
            return Err(StoreError::Corrupt(format!("working set names unknown surface {missing}")));
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn blob_path(&self, sha: &str) -> PathBuf {
        self.dir.join("blobs").join(sha)
    }

    fn profile_path(&self, name: &str) -> PathBuf {
        self.dir.join("profiles").join(format!("{name}.json"))
    }

    fn save(&self) -> Result<(), StoreError> {
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.dir.join("manifest.json"), &json)?;
        Ok(())
    }

    /// Dims every stored surface shares, if any are stored.
    pub fn dims(&self) -> Option<(u32, u32)> {
        self.manifest.surfaces.first().map(|e| (e.width, e.height))
    }

    pub fn surfaces(&self) -> &[SurfaceEntry] {
        &self.manifest.surfaces
    }

    pub fn surface(&self, id: &SurfaceId) -> Option<&Arc<RasterSurface>> {
        self.decoded.get(id)
    }

    /// The stored payload exactly as uploaded.
    pub fn payload(&self, id: &SurfaceId) -> Result<Vec<u8>, StoreError> {
        let entry = self.entry(id).ok_or_else(|| StoreError::NoSuchSurface(id.clone()))?;
        Ok(fs::read(self.blob_path(&entry.sha256))?)
    }

    fn entry(&self, id: &SurfaceId) -> Option<&SurfaceEntry> {
        self.manifest.surfaces.iter().find(|e| &e.id == id)
    }

    pub fn ingest(&mut self, name: &str, payload: &[u8]) -> Result<SurfaceEntry, StoreError> {
        let id = SurfaceId::new(format!("s{:06}", self.manifest.next_surface + 1));
        let surface = RasterSurface::decode(id.clone(), name, payload)?;
        if let Some((width, height)) = self.dims() {
            if (surface.width(), surface.height()) != (width, height) {
                return Err(StoreError::DimMismatch {
                    width,
                    height,
                    actual_width: surface.width(),
                    actual_height: surface.height(),
                });
            }
        }
        let sha = sha256_hex(payload);
        let blob = self.blob_path(&sha);
        if !blob.exists() {
            write_atomic(&blob, payload)?;
        }
        let entry = SurfaceEntry {
            id: id.clone(),
            name: name.to_string(),
            width: surface.width(),
            height: surface.height(),
            sha256: sha,
            bytes: payload.len() as u64,
        };
        self.manifest.next_surface += 1;
        self.manifest.surfaces.push(entry.clone());
        self.decoded.insert(id, Arc::new(surface));
        self.save()?;
        Ok(entry)
    }

    /// Removes a surface, dropping it from the working set (a new version) if selected.
    pub fn delete(&mut self, id: &SurfaceId) -> Result<SurfaceEntry, StoreError> {
        let pos = self
            .manifest
            .surfaces
            .iter()
            .position(|e| &e.id == id)
            .ok_or_else(|| StoreError::NoSuchSurface(id.clone()))?;
        let entry = self.manifest.surfaces.remove(pos);
        self.decoded.remove(id);
        let ws = &mut self.manifest.working_set;
        if ws.selected.contains(id) {
            ws.selected.retain(|s| s != id);
            ws.version += 1;
        }
        self.save()?;
        if !self.manifest.surfaces.iter().any(|e| e.sha256 == entry.sha256) {
            fs::remove_file(self.blob_path(&entry.sha256))?;
        }
        Ok(entry)
    }

    pub fn working_set(&self) -> &WorkingSet {
        &self.manifest.working_set
    }

    pub fn selected_surfaces(&self) -> Vec<Arc<RasterSurface>> {
        self.manifest.working_set.selected.iter().map(|id| Arc::clone(&self.decoded[id])).collect()
    }

    /// Replaces the selection; nothing changes unless every id is known and listed once.
    pub fn set_working_set(&mut self, ids: Vec<SurfaceId>) -> Result<WorkingSet, StoreError> {
        let missing: Vec<SurfaceId> = ids.iter().filter(|id| !self.decoded.contains_key(*id)).cloned().collect();
        if !missing.is_empty() {
            return Err(StoreError::UnknownIds(missing));
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        let ws = &mut self.manifest.working_set;
        ws.selected = ids;
        ws.version += 1;
        self.save()?;
        Ok(self.manifest.working_set.clone())
    }

    pub fn profile_names(&self) -> Result<Vec<String>, StoreError> {
        let mut names: Vec<String> = BUILTIN_PROFILES.iter().map(|s| s.to_string()).collect();
        for entry in fs::read_dir(self.dir.join("profiles"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    /// A profile's JSON: built-ins are rendered, uploads come back as stored.
    pub fn profile_json(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        match name {
            "paper-hd7950" => Ok(DeviceProfile::paper_calibrated().to_json_pretty().into_bytes()),
            "synthetic" => Ok(DeviceProfile::synthetic_default().to_json_pretty().into_bytes()),
            _ if !valid_profile_name(name) => Err(StoreError::InvalidName(name.to_string())),
            _ => match fs::read(self.profile_path(name)) {
                Ok(bytes) => Ok(bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NoSuchProfile(name.to_string())),
                Err(e) => Err(e.into()),
            },
        }
    }

    pub fn profile(&self, name: &str) -> Result<DeviceProfile, StoreError> {
        match name {
            "paper-hd7950" => Ok(DeviceProfile::paper_calibrated()),
            "synthetic" => Ok(DeviceProfile::synthetic_default()),
            _ => {
                let bytes = self.profile_json(name)?;
                let text = String::from_utf8(bytes).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                DeviceProfile::from_json(&text).map_err(|e| StoreError::Corrupt(format!("profile {name}: {e}")))
            }
        }
    }

    pub fn put_profile(&mut self, name: &str, json: &[u8]) -> Result<DeviceProfile, StoreError> {
        if BUILTIN_PROFILES.contains(&name) {
            return Err(StoreError::ReadOnly(name.to_string()));
        }
        if !valid_profile_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        let text = std::str::from_utf8(json).map_err(|e| StoreError::InvalidProfile(e.to_string()))?;
        let profile = DeviceProfile::from_json(text).map_err(|e| StoreError::InvalidProfile(e.to_string()))?;
        write_atomic(&self.profile_path(name), json)?;
        Ok(profile)
    }
}
