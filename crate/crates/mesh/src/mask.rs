//! Masks present mediated data. A virtualizing mask renders query results
//! on demand; a materializing mask persists every upstream relation as a
//! delimited file set that a wrapper can read back.
//!
//! Materialized layout, for a target `dir/name`:
//!
//! ```text
//! dir/.name.snapshots/<epoch>/<relation>.csv   complete snapshots
//! dir/name -> .name.snapshots/<epoch>           symlink, swapped atomically
//! dir/name.epoch                                 published epoch
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use mmw_core::format::{render_delimited, Format};
use mmw_core::query::render_query;
use mmw_core::schema::{is_identifier, ProductSchema};
use mmw_core::{Query, Table};
use serde::{Deserialize, Serialize};

use crate::access::{AccessLogEntry, Gate, Governance};
use crate::component::{Component, Kind, Lineage, MaterializeReport, RelationReport, Stats};
use crate::error::ConfigError;
use crate::protocol::{ComponentError, ErrorCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Virtualizing,
    Materializing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refresh {
    #[default]
    Manual,
    /// Seconds between refreshes.
    Interval(u64),
}

fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Jsonl, Format::Pretty]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    #[serde(default)]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
    #[serde(default)]
    pub mode: MaskMode,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default)]
    pub refresh: Refresh,
}

impl MaskConfig {
    pub fn virtualizing(id: &str, upstream: Option<&str>) -> Self {
        MaskConfig {
            id: id.to_string(),
            upstream: upstream.map(str::to_string),
            mode: MaskMode::Virtualizing,
            formats: all_formats(),
            target: None,
            refresh: Refresh::Manual,
        }
    }

    pub fn materializing(id: &str, upstream: &str, target: impl Into<PathBuf>) -> Self {
        MaskConfig {
            id: id.to_string(),
            upstream: Some(upstream.to_string()),
            mode: MaskMode::Materializing,
            formats: Vec::new(),
            target: Some(target.into()),
            refresh: Refresh::Manual,
        }
    }
}

/// Where an injected failure interrupts a refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// After the first relation file is staged.
    MidStaging,
    /// After staging completes, before the target link is swapped.
    BeforePublish,
}

#[derive(Default)]
struct Refreshes {
    /// Triggers received so far.
    requested: AtomicU64,
    /// Highest trigger a completed refresh is known to cover.
    covered: Mutex<(u64, Option<MaterializeReport>)>,
    running: Mutex<()>,
}

struct Target {
    link: PathBuf,
    snapshots: PathBuf,
    epoch_file: PathBuf,
    epoch: AtomicU64,
}

impl Target {
    fn new(path: &Path) -> Result<Target, String> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| format!("target {} has no file name", path.display()))?;
        let parent = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| format!("target {}: {e}", parent.display()))?;
        let snapshots = parent.join(format!(".{name}.snapshots"));
        fs::create_dir_all(&snapshots).map_err(|e| format!("target {}: {e}", snapshots.display()))?;
        if let Ok(meta) = fs::symlink_metadata(path) {
            if !meta.file_type().is_symlink() {
                return Err(format!(
                    "target {} exists and is not a published snapshot link",
                    path.display()
                ));
            }
        }
        let epoch_file = parent.join(format!("{name}.epoch"));
        let epoch = fs::read_to_string(&epoch_file)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        Ok(Target {
            link: path.to_path_buf(),
            snapshots,
            epoch_file,
            epoch: AtomicU64::new(epoch),
        })
    }

    fn publish(&self, epoch: u64) -> std::io::Result<()> {
        let parent = self
            .link
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let snapshots_name = self.snapshots.file_name().expect("named");
        let relative = Path::new(snapshots_name).join(epoch.to_string());
        let tmp_link = parent.join(format!(
            ".{}.link-{epoch}",
            self.link.file_name().unwrap().to_string_lossy()
        ));
        let _ = fs::remove_file(&tmp_link);
        std::os::unix::fs::symlink(&relative, &tmp_link)?;
        fs::rename(&tmp_link, &self.link)?;
        let tmp_epoch = self.epoch_file.with_extension("epoch.tmp");
        fs::write(&tmp_epoch, format!("{epoch}\n"))?;
        fs::rename(&tmp_epoch, &self.epoch_file)?;
        self.epoch.store(epoch, Ordering::SeqCst);
        Ok(())
    }

    /// Drops every snapshot except the published one and its predecessor.
    fn prune(&self, current: u64) {
        let Ok(entries) = fs::read_dir(&self.snapshots) else {
            return;
        };
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let keep = name.parse::<u64>().is_ok_and(|e| e + 1 >= current);
            if !keep {
                let _ = fs::remove_dir_all(entry.path());
            }
        }
    }
}

pub struct Mask {
    id: String,
    config: MaskConfig,
    upstream: Option<Arc<dyn Component>>,
    target: Option<Target>,
    refreshes: Refreshes,
    fault: Mutex<Option<FaultPoint>>,
    stop: Arc<AtomicBool>,
    refresher: Mutex<Option<JoinHandle<()>>>,
    gate: Gate,
}

impl Mask {
    pub fn new(
        config: MaskConfig,
        upstream: Option<Arc<dyn Component>>,
        governance: Governance,
    ) -> Result<Mask, ConfigError> {
        let id = config.id.clone();
        if !is_identifier(&id) {
            return Err(ConfigError::Identifier {
                component: id.clone(),
                name: id,
            });
        }
        if config.upstream.is_some() != upstream.is_some() {
            return Err(ConfigError::invalid(&id, "upstream binding and component disagree"));
        }
        let target = match config.mode {
            MaskMode::Virtualizing => {
                if config.formats.is_empty() {
                    return Err(ConfigError::invalid(
                        &id,
                        "a virtualizing mask needs at least one format",
                    ));
                }
                if config.target.is_some() {
                    return Err(ConfigError::invalid(
                        &id,
                        "a virtualizing mask does not persist; remove target",
                    ));
                }
                None
            }
            MaskMode::Materializing => {
                let path = config
                    .target
                    .as_ref()
                    .ok_or_else(|| ConfigError::invalid(&id, "a materializing mask needs a target"))?;
                if upstream.is_none() {
                    return Err(ConfigError::invalid(&id, "a materializing mask needs an upstream"));
                }
                Some(Target::new(path).map_err(|message| ConfigError::Source {
                    component: id.clone(),
                    location: path.display().to_string(),
                    message,
                })?)
            }
        };
        Ok(Mask {
            gate: Gate::new(&id, governance),
            id,
            config,
            upstream,
            target,
            refreshes: Refreshes::default(),
            fault: Mutex::new(None),
            stop: Arc::new(AtomicBool::new(false)),
            refresher: Mutex::new(None),
        })
    }

    pub fn standalone(config: MaskConfig, upstream: Option<Arc<dyn Component>>) -> Result<Mask, ConfigError> {
        Mask::new(config, upstream, Governance::default())
    }

    pub fn mode(&self) -> MaskMode {
        self.config.mode
    }

    pub fn upstream_id(&self) -> Option<&str> {
        self.config.upstream.as_deref()
    }

    pub fn target(&self) -> Option<&Path> {
        self.target.as_ref().map(|t| t.link.as_path())
    }

    /// Makes the next refreshes fail at `point` until cleared.
    pub fn inject_fault(&self, point: Option<FaultPoint>) {
        *self.fault.lock().unwrap() = point;
    }

    fn faulted(&self, at: FaultPoint) -> Result<(), ComponentError> {
        if *self.fault.lock().unwrap() == Some(at) {
            return Err(ComponentError::unavailable(
                &self.id,
                format!("injected fault at {at:?}"),
            ));
        }
        Ok(())
    }

    fn upstream(&self) -> Result<&Arc<dyn Component>, ComponentError> {
        self.upstream
            .as_ref()
            .ok_or_else(|| ComponentError::new(ErrorCode::UnknownRelation, &self.id, "no upstream bound"))
    }

    fn refresh(&self, target: &Target) -> Result<MaterializeReport, ComponentError> {
        let upstream = self.upstream()?;
        let schema = upstream.get_schema()?;
        let ns = upstream.namespace();
        let epoch = target.epoch.load(Ordering::SeqCst) + 1;
        let staging = target.snapshots.join(format!("{epoch}.staging"));
        let io =
            |e: std::io::Error| ComponentError::unavailable(&self.id, format!("target {}: {e}", target.link.display()));
        let _ = fs::remove_dir_all(&staging);
        fs::create_dir_all(&staging).map_err(io)?;
        let mut relations = Vec::new();
        for (i, r) in schema.relations.iter().enumerate() {
            if i == 1 {
                self.faulted(FaultPoint::MidStaging)?;
            }
            let table = upstream.execute(&Query::scan(&ns, &r.name), &self.id)?;
            fs::write(
                staging.join(format!("{}.csv", r.name)),
                render_delimited(&table.sorted()),
            )
            .map_err(io)?;
            relations.push(RelationReport {
                name: r.name.clone(),
                rows: table.len(),
            });
        }
        if schema.relations.len() <= 1 {
            self.faulted(FaultPoint::MidStaging)?;
        }
        let done = target.snapshots.join(epoch.to_string());
        let _ = fs::remove_dir_all(&done);
        fs::rename(&staging, &done).map_err(io)?;
        self.faulted(FaultPoint::BeforePublish)?;
        target.publish(epoch).map_err(io)?;
        target.prune(epoch);
        Ok(MaterializeReport {
            target: target.link.display().to_string(),
            epoch,
            relations,
        })
    }

    /// Starts periodic refreshes for `Refresh::Interval`.
    pub fn start_refresher(self: &Arc<Self>) {
        let Refresh::Interval(secs) = self.config.refresh else {
            return;
        };
        if self.config.mode != MaskMode::Materializing {
            return;
        }
        let me = Arc::clone(self);
        let stop = Arc::clone(&self.stop);
        let period = Duration::from_secs(secs.max(1));
        let handle = std::thread::spawn(move || {
            let mut next = Instant::now() + period;
            while !stop.load(Ordering::SeqCst) {
                if Instant::now() >= next {
                    let _ = me.materialize();
                    next = Instant::now() + period;
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        });
        *self.refresher.lock().unwrap() = Some(handle);
    }

    pub fn stop_refresher(&self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.refresher.lock().unwrap().take() {
            let _ = h.join();
        }
    }

    fn check_virtualizing(&self) -> Result<(), ComponentError> {
        if self.config.mode == MaskMode::Materializing {
            return Err(ComponentError::protocol(
                &self.id,
                "a materializing mask does not serve queries",
            ));
        }
        Ok(())
    }

    fn fetch(&self, q: &Query, principal: &str) -> Result<Table, ComponentError> {
        let text = render_query(q);
        self.gate.admit(principal, &self.namespace(), &text)?;
        let result = self.upstream().and_then(|u| u.execute(q, principal));
        self.gate.finish(principal, &text, &result, false);
        result
    }
}

impl Component for Mask {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> Kind {
        Kind::Mask
    }

    fn namespace(&self) -> String {
        self.upstream
            .as_ref()
            .map_or_else(|| self.id.clone(), |u| u.namespace())
    }

    fn get_schema(&self) -> Result<ProductSchema, ComponentError> {
        match &self.upstream {
            Some(u) => u.get_schema(),
            None => Ok(ProductSchema::new(&self.id, 1)),
        }
    }

    fn execute(&self, q: &Query, principal: &str) -> Result<Table, ComponentError> {
        self.check_virtualizing()?;
        self.fetch(q, principal)
    }

    fn serve(&self, q: &Query, format: Format, principal: &str) -> Result<String, ComponentError> {
        self.check_virtualizing()?;
        if !self.config.formats.contains(&format) {
            return Err(ComponentError::protocol(
                &self.id,
                format!("format {format} is not enabled"),
            ));
        }
        let table = self.fetch(q, principal)?;
        Ok(format.render(&table.sorted()))
    }

    fn epoch(&self) -> Result<u64, ComponentError> {
        match (&self.target, &self.upstream) {
            (Some(t), _) => Ok(t.epoch.load(Ordering::SeqCst)),
            (None, Some(u)) => u.epoch(),
            (None, None) => Ok(0),
        }
    }

    fn stats(&self) -> Result<Stats, ComponentError> {
        Ok(self.gate.counters.snapshot())
    }

    fn lineage(&self, relation: &str) -> Result<Lineage, ComponentError> {
        let upstream = self.upstream()?;
        let mut root = Lineage::leaf(&self.id, relation);
        root.children.push(upstream.lineage(relation)?);
        Ok(root)
    }

    /// One refresh at a time; a trigger arriving while a refresh runs is
    /// satisfied by the next refresh to start.
    fn materialize(&self) -> Result<MaterializeReport, ComponentError> {
        let Some(target) = &self.target else {
            return Err(ComponentError::protocol(
                &self.id,
                "a virtualizing mask does not materialize",
            ));
        };
        let ticket = self.refreshes.requested.fetch_add(1, Ordering::SeqCst) + 1;
        let _running = self.refreshes.running.lock().unwrap();
        {
            let covered = self.refreshes.covered.lock().unwrap();
            if covered.0 >= ticket {
                if let Some(report) = &covered.1 {
                    return Ok(report.clone());
                }
            }
        }
        let covers = self.refreshes.requested.load(Ordering::SeqCst);
        let report = self.refresh(target)?;
        *self.refreshes.covered.lock().unwrap() = (covers, Some(report.clone()));
        Ok(report)
    }

    fn access_log(&self) -> Vec<AccessLogEntry> {
        self.gate.log.entries()
    }
}

impl Mask {
    pub(crate) fn gate(&self) -> &Gate {
        &self.gate
    }
}

impl Drop for Mask {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}
