//! Named DEM datasets available to the service.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use geoverlay_core::dem::{gen_parabola, parse_ascii_grid};
use geoverlay_core::overlay::{build_mipmap, grid_hillshade};
use geoverlay_core::workflow::Executor;
use geoverlay_core::{DemGrid, MipPyramid, Parallelism, RegionAABB, ReleaseMask};
use serde::Serialize;

pub const DEM_FILE: &str = "dem.asc";
pub const RELEASE_FILE: &str = "release.asc";

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("dataset `{0}` is registered twice")]
    Duplicate(String),
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
}

/// One dataset plus the executor that serializes its runs.
pub struct Dataset {
    pub name: String,
    pub dem: Arc<DemGrid>,
    pub release: Option<Arc<ReleaseMask>>,
    pub dem_path: Option<PathBuf>,
    executor: Arc<tokio::sync::Mutex<Executor>>,
    hillshade: OnceLock<Result<Arc<MipPyramid>, String>>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("name", &self.name)
            .field("ncols", &self.dem.ncols())
            .field("nrows", &self.dem.nrows())
            .field("release", &self.release.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub world: RegionAABB,
    pub cellsize: f64,
    pub ncols: usize,
    pub nrows: usize,
    pub has_release_mask: bool,
    pub hillshade_url: String,
}

impl Dataset {
    pub fn new(name: &str, dem: DemGrid, release: Option<ReleaseMask>) -> Self {
        Self {
            name: name.to_string(),
            dem: Arc::new(dem),
            release: release.map(Arc::new),
            dem_path: None,
            executor: Arc::new(tokio::sync::Mutex::new(Executor::default())),
            hillshade: OnceLock::new(),
        }
    }

    pub(crate) fn set_parallelism(&mut self, p: Parallelism) {
        self.executor = Arc::new(tokio::sync::Mutex::new(Executor::default().with_parallelism(p)));
    }

    /// Reads `dem.asc` and, when present, `release.asc` from `dir`.
    pub fn load(name: &str, dir: &Path) -> Result<Self, RegistryError> {
        let dem_path = dir.join(DEM_FILE);
        let dem = read_grid(&dem_path)?;
        let release_path = dir.join(RELEASE_FILE);
        let release = if release_path.is_file() {
            let g = read_grid(&release_path)?;
            if g.ncols() != dem.ncols() || g.nrows() != dem.nrows() {
                return Err(RegistryError::Load {
                    path: release_path,
                    message: format!(
                        "mask is {}x{} but the DEM is {}x{}",
                        g.ncols(),
                        g.nrows(),
                        dem.ncols(),
                        dem.nrows()
                    ),
                });
            }
            Some(ReleaseMask::from_grid(&g))
        } else {
            None
        };
        let mut ds = Self::new(name, dem, release);
        ds.dem_path = Some(dem_path);
        Ok(ds)
    }

    pub fn executor(&self) -> Arc<tokio::sync::Mutex<Executor>> {
        self.executor.clone()
    }

    /// Hillshade pyramid, computed on first use.
    pub fn hillshade(&self) -> Result<Arc<MipPyramid>, String> {
        self.hillshade
            .get_or_init(|| {
                grid_hillshade(&self.dem)
                    .map(|t| Arc::new(build_mipmap(&t)))
                    .map_err(|e| e.to_string())
            })
            .clone()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            world: self.dem.extent(),
            cellsize: self.dem.cellsize(),
            ncols: self.dem.ncols(),
            nrows: self.dem.nrows(),
            has_release_mask: self.release.is_some(),
            hillshade_url: format!("/api/datasets/{}/hillshade/{{z}}/{{x}}/{{y}}.png", self.name),
        }
    }
}

fn read_grid(path: &Path) -> Result<DemGrid, RegistryError> {
    let err = |message: String| RegistryError::Load {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    parse_ascii_grid(&text).map_err(|e| err(e.to_string()))
}

#[derive(Debug, Default)]
pub struct DatasetRegistry {
    entries: BTreeMap<String, Arc<Dataset>>,
}

impl DatasetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the synthetic parabola with its three release cells.
    pub fn with_builtin() -> Self {
        let mut r = Self::new();
        let (dem, mask) = gen_parabola();
        r.insert(Dataset::new("parabola", dem, Some(mask)))
            .expect("empty registry");
        r
    }

    pub fn insert(&mut self, ds: Dataset) -> Result<(), RegistryError> {
        if self.entries.contains_key(&ds.name) {
            return Err(RegistryError::Duplicate(ds.name));
        }
        self.entries.insert(ds.name.clone(), Arc::new(ds));
        Ok(())
    }

    /// Registers every subdirectory of `dir` holding a `dem.asc`, named by
    /// the subdirectory. These replace built-ins of the same name.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, RegistryError> {
        let read = std::fs::read_dir(dir).map_err(|e| RegistryError::Load {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut dirs: Vec<PathBuf> = read
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(DEM_FILE).is_file())
            .collect();
        dirs.sort();
        let mut n = 0;
        for d in dirs {
            let Some(name) = d.file_name().and_then(|s| s.to_str()) else {
                continue;
            };
            let ds = Dataset::load(name, &d)?;
            self.entries.insert(ds.name.clone(), Arc::new(ds));
            n += 1;
        }
        Ok(n)
    }

    pub(crate) fn set_parallelism(&mut self, p: Parallelism) {
        for ds in self.entries.values_mut() {
            if let Some(ds) = Arc::get_mut(ds) {
                ds.set_parallelism(p);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Dataset>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Dataset>> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
