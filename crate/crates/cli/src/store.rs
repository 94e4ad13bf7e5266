//! On-disk model store: one directory holding the catalog, datasets,
//! cluster model, per-cluster networks and reports.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ibrkit::clustering::ClusterModel;
use ibrkit::fnn::FnnModel;
use ibrkit::ibr::Catalog;
use serde::{Deserialize, Serialize};

pub const STORE_FORMAT: &str = "ibrkit-store-v1";
pub const STORE_ENV: &str = "IBRKIT_STORE";

const MANIFEST: &str = "store.json";
const LOCK: &str = ".lock";
const ASSIGNMENTS: &str = "assignments.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
}

/// Devices placed by `assign`, by name.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Assignments {
    pub format: String,
    pub clusters: BTreeMap<String, usize>,
}

/// Exclusive handle on a store directory. The lock file is advisory and
/// removed on drop.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    lock: PathBuf,
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create store {}", dir.display()))?;
        let lock = dir.join(LOCK);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => anyhow::anyhow!(
                    "store {} is in use (remove {} if no other ibrkit process is running)",
                    dir.display(),
                    lock.display()
                ),
                _ => anyhow::Error::new(e).context(format!("cannot lock {}", lock.display())),
            })?;
        let store = Self {
            dir: dir.to_path_buf(),
            lock,
        };
        store.check_manifest()?;
        Ok(store)
    }

    fn check_manifest(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST);
        if !path.exists() {
            let m = Manifest {
                format: STORE_FORMAT.into(),
            };
            return write_json(&path, &m);
        }
        let text = fs::read_to_string(&path)?;
        let m: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("unreadable store manifest {}", path.display()))?;
        if m.format != STORE_FORMAT {
            bail!(
                "store {} has format `{}`, this build reads `{STORE_FORMAT}`",
                self.dir.display(),
                m.format
            );
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.path("catalog.json")
    }

    pub fn dataset_path(&self, role: &str) -> PathBuf {
        self.path(&format!("{role}.csv"))
    }

    pub fn cluster_model_path(&self) -> PathBuf {
        self.path("cluster_model.json")
    }

    pub fn fnn_path(&self, cluster: usize) -> PathBuf {
        self.path(&format!("fnn_{cluster}.json"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.path(&format!("report_{name}"))
    }

    /// The stored catalog, writing the canonical one on first use.
    pub fn catalog(&self) -> Result<Catalog> {
        let path = self.catalog_path();
        if !path.exists() {
            Catalog::canonical().save(&path)?;
        }
        Ok(Catalog::load(&path)?)
    }

    pub fn cluster_model(&self) -> Result<ClusterModel> {
        let path = self.cluster_model_path();
        if !path.exists() {
            bail!(
                "no cluster model in {}; run `ibrkit cluster` first",
                self.dir.display()
            );
        }
        ClusterModel::load(&path).with_context(|| format!("cannot load {}", path.display()))
    }

    pub fn fnn(&self, cluster: usize, clusters: &ClusterModel) -> Result<FnnModel> {
        if cluster >= clusters.k {
            bail!("cluster {cluster} does not exist (k = {})", clusters.k);
        }
        let path = self.fnn_path(cluster);
        if !path.exists() {
            bail!("no network for cluster {cluster}; run `ibrkit train` first");
        }
        FnnModel::load(&path).with_context(|| format!("cannot load {}", path.display()))
    }

    pub fn assignments(&self) -> Result<Assignments> {
        let path = self.path(ASSIGNMENTS);
        if !path.exists() {
            return Ok(Assignments {
                format: STORE_FORMAT.into(),
                ..Default::default()
            });
        }
        let a: Assignments = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if a.format != STORE_FORMAT {
            bail!("{} has format `{}`", path.display(), a.format);
        }
        Ok(a)
    }

    pub fn save_assignments(&self, a: &Assignments) -> Result<()> {
        write_json(&self.path(ASSIGNMENTS), a)
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// CSV report whose first line records the seed.
pub fn report_writer(path: &Path, seed: u64) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# ibrkit seed={seed}")?;
    Ok(csv::Writer::from_writer(out))
}
