//! Experiment harness behind the CLI: dataset generation, sequential method
//! runs with per-task checkpoints and resume, evaluation, and report
//! aggregation (metric tables, forgetting curves, memory curves, and
//! qualitative image grids).

use std::path::{Path, PathBuf};

use crate::camera::Ray;
use crate::config::ResolvedConfig;
use crate::dataset::{dataset_hash, load_dataset, save_dataset, write_png_preview};
use crate::error::{Error, Result};
use crate::metrics::ImageBuffer;
use crate::mlp::{LayerDims, ParamSet};
use crate::render::{render_image, SampleSpec};
use crate::rgn::RgnState;
use crate::scene::build_tasks;
use crate::train::{Aux, MethodKind, MethodState, MetricsLog, MetricsRow, ReplayRecord, Task};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, e.to_string())
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamSetRepr {
    dims: Vec<(usize, usize)>,
    data: Vec<f64>,
    frozen: bool,
    version: u32,
}

impl ParamSetRepr {
    fn from(p: &ParamSet) -> Self {
        ParamSetRepr {
            dims: p.dims().iter().map(|d| (d.in_dim, d.out_dim)).collect(),
            data: p.data().to_vec(),
            frozen: p.is_frozen(),
            version: p.version(),
        }
    }

    fn build(&self) -> Result<ParamSet> {
        let dims: Vec<LayerDims> =
            self.dims.iter().map(|&(i, o)| LayerDims { in_dim: i, out_dim: o }).collect();
        let mut p = ParamSet::zeros(&dims)?;
        if p.num_params() != self.data.len() {
            return Err(Error::Config("checkpoint parameter count mismatch".into()));
        }
        p.data_mut().copy_from_slice(&self.data);
        Ok(if self.frozen { p.snapshot(self.version) } else { p })
    }
}

fn ray_to_floats(r: &Ray) -> [f64; 6] {
    [r.origin[0], r.origin[1], r.origin[2], r.direction[0], r.direction[1], r.direction[2]]
}

fn ray_from_floats(f: &[f64; 6]) -> Ray {
    Ray { origin: [f[0], f[1], f[2]], direction: [f[3], f[4], f[5]] }
}

#[derive(serde::Serialize, serde::Deserialize)]
enum AuxRepr {
    None,
    Meil { snapshot: Option<ParamSetRepr>, rgn: ParamSetRepr, gt_principals: Vec<[f64; 6]> },
    Ewc { fisher: Vec<f64>, anchor: Vec<f64>, weight: f64 },
    PackNet { mask: Vec<u8> },
    Replay { buffer: Vec<[f32; 9]> },
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Checkpoint {
    method: String,
    tasks_seen: usize,
    nerf: ParamSetRepr,
    aux: AuxRepr,
    rows: Vec<MetricsRow>,
}

impl Checkpoint {
    fn from_state(state: &MethodState, log: &MetricsLog) -> Self {
        let aux = match &state.aux {
            Aux::None => AuxRepr::None,
            Aux::Meil { snapshot, rgn, gt_principals } => AuxRepr::Meil {
                snapshot: snapshot.as_ref().map(ParamSetRepr::from),
                rgn: ParamSetRepr::from(rgn.params()),
                gt_principals: gt_principals.iter().map(ray_to_floats).collect(),
            },
            Aux::Ewc { fisher, anchor, weight } => {
                AuxRepr::Ewc { fisher: fisher.clone(), anchor: anchor.clone(), weight: *weight }
            }
            Aux::PackNet { mask } => AuxRepr::PackNet { mask: mask.clone() },
            Aux::Replay { buffer } => AuxRepr::Replay {
                buffer: buffer
                    .iter()
                    .map(|r| {
                        [
                            r.origin[0], r.origin[1], r.origin[2],
                            r.direction[0], r.direction[1], r.direction[2],
                            r.color[0], r.color[1], r.color[2],
                        ]
                    })
                    .collect(),
            },
        };
        Checkpoint {
            method: state.kind.name().to_string(),
            tasks_seen: state.tasks_seen,
            nerf: ParamSetRepr::from(&state.nerf),
            aux,
            rows: log.rows.clone(),
        }
    }

    fn into_state(self, cfg: &ResolvedConfig) -> Result<(MethodState, MetricsLog)> {
        let kind: MethodKind = self.method.parse()?;
        let aux = match self.aux {
            AuxRepr::None => Aux::None,
            AuxRepr::Meil { snapshot, rgn, gt_principals } => Aux::Meil {
                snapshot: snapshot.map(|s| s.build()).transpose()?,
                rgn: RgnState::from_params(&cfg.train.rgn, rgn.build()?)?,
                gt_principals: gt_principals.iter().map(ray_from_floats).collect(),
            },
            AuxRepr::Ewc { fisher, anchor, weight } => Aux::Ewc { fisher, anchor, weight },
            AuxRepr::PackNet { mask } => Aux::PackNet { mask },
            AuxRepr::Replay { buffer } => Aux::Replay {
                buffer: buffer
                    .iter()
                    .map(|f| ReplayRecord {
                        origin: [f[0], f[1], f[2]],
                        direction: [f[3], f[4], f[5]],
                        color: [f[6], f[7], f[8]],
                    })
                    .collect(),
            },
        };
        let state =
            MethodState { kind, nerf: self.nerf.build()?, aux, tasks_seen: self.tasks_seen };
        Ok((state, MetricsLog { rows: self.rows }))
    }
}

fn checkpoint_path(run_dir: &Path, kind: MethodKind, task: usize) -> PathBuf {
    run_dir.join(kind.name()).join(format!("task_{task:02}.ckpt.json"))
}

fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| io_err(path, e))?;
    let json = serde_json::to_string(ckpt).map_err(|e| io_err(path, e))?;
    std::fs::write(path, json).map_err(|e| io_err(path, e))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let json = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&json).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Provenance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub deterministic: bool,
    pub dataset_hash: String,
}

fn write_provenance(dir: &Path, p: &Provenance) -> Result<()> {
    let path = dir.join("provenance.json");
    let json = serde_json::to_string_pretty(p).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))
}

pub fn read_provenance(dir: &Path) -> Result<Provenance> {
    let path = dir.join("provenance.json");
    let json = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&json).map_err(|e| io_err(&path, e))
}

fn write_resolved_config(dir: &Path, cfg: &ResolvedConfig) -> Result<()> {
    let path = dir.join("config.resolved.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| io_err(&path, e))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Writes metric rows with a fixed header and `{:?}`-style shortest-roundtrip
/// float formatting, so equal runs produce byte-identical files. In
/// deterministic mode wall time is recorded as 0 (it never reproduces).
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], deterministic: bool) -> Result<()> {
    let mut out = String::from("method,trained,eval_task,psnr_db,msssim,aux_bytes,wall_s\n");
    for r in rows {
        let wall = if deterministic { 0.0 } else { r.wall_s };
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{},{:?}\n",
            r.method, r.trained, r.eval_task, r.psnr_db, r.msssim, r.aux_bytes, wall
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut rows = vec![];
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| io_err(path, e))?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Renders the dataset into `out` along with provenance and the resolved
/// config. Same config + seed always produces bit-identical files.
pub fn cmd_generate(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    let tasks = build_tasks(&cfg.scene, &cfg.trajectory, &cfg.intrinsics)?;
    save_dataset(&tasks, out)?;
    write_resolved_config(out, cfg)?;
    write_provenance(
        out,
        &Provenance {
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            deterministic: cfg.deterministic,
            dataset_hash: dataset_hash(out)?,
        },
    )?;
    Ok(())
}

/// Outcome of one method's sub-run within `cmd_train`.
#[derive(Debug)]
pub struct MethodOutcome {
    pub kind: MethodKind,
    pub result: Result<()>,
}

/// Trains every configured method on the dataset in `data`, sequentially.
/// Each method writes per-task checkpoints under `out/<method>/` and resumes
/// from the last one present. A diverging method aborts only its own run;
/// the first failure is returned after all methods have been attempted.
pub fn cmd_train(cfg: &ResolvedConfig, data: &Path, out: &Path) -> Result<()> {
    let tasks = load_dataset(data)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_resolved_config(out, cfg)?;
    write_provenance(
        out,
        &Provenance {
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            deterministic: cfg.deterministic,
            dataset_hash: dataset_hash(data)?,
        },
    )?;

    let mut outcomes = vec![];
    let mut all_rows: Vec<MetricsRow> = vec![];
    for &kind in &cfg.methods {
        let result = train_one_method(cfg, &tasks, out, kind).map(|log| {
            all_rows.extend(log.rows);
        });
        if let Err(e) = &result {
            eprintln!("method {} failed: {e}", kind.name());
        }
        outcomes.push(MethodOutcome { kind, result });
    }
    write_metrics_csv(&out.join("metrics.csv"), &all_rows, cfg.deterministic)?;
    for o in outcomes {
        o.result?;
    }
    Ok(())
}

fn train_one_method(
    cfg: &ResolvedConfig,
    tasks: &[Task],
    out: &Path,
    kind: MethodKind,
) -> Result<MetricsLog> {
    // resume from the newest checkpoint, if any
    let mut start_task = 0;
    let mut resumed: Option<(MethodState, MetricsLog)> = None;
    for t in (1..=tasks.len()).rev() {
        let path = checkpoint_path(out, kind, t);
        if path.exists() {
            let (state, log) = read_checkpoint(&path)?.into_state(cfg)?;
            if state.tasks_seen != t {
                return Err(Error::Config(format!(
                    "checkpoint {} claims {} trained tasks",
                    path.display(),
                    state.tasks_seen
                )));
            }
            start_task = t;
            resumed = Some((state, log));
            break;
        }
    }
    let (mut state, mut log) = match resumed {
        Some(pair) => pair,
        None => (MethodState::new(kind, &cfg.train)?, MetricsLog::default()),
    };

    for t in start_task..tasks.len() {
        let begin = std::time::Instant::now();
        crate::train::train_task(&mut state, &tasks[..=t], &cfg.train)?;
        let wall_s = begin.elapsed().as_secs_f64();
        let aux = state.aux_bytes();
        for eval_task in &tasks[..=t] {
            let (p, s) = crate::train::evaluate_task(&state, eval_task, &cfg.train)?;
            if !p.is_finite() || !s.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite metrics for {} on task {}",
                    kind.name(),
                    eval_task.index
                )));
            }
            log.rows.push(MetricsRow {
                method: kind.name().to_string(),
                trained: t + 1,
                eval_task: eval_task.index,
                psnr_db: p,
                msssim: s,
                aux_bytes: aux,
                wall_s,
            });
        }
        write_checkpoint(
            &checkpoint_path(out, kind, t + 1),
            &Checkpoint::from_state(&state, &log),
        )?;
    }
    write_metrics_csv(
        &out.join(kind.name()).join("metrics.csv"),
        &log.rows,
        cfg.deterministic,
    )?;
    Ok(log)
}

/// Re-evaluates the final checkpoint of every configured method on every
/// task and writes `eval.csv` into the run directory.
pub fn cmd_eval(cfg: &ResolvedConfig, data: &Path, run: &Path) -> Result<()> {
    let tasks = load_dataset(data)?;
    let mut rows = vec![];
    for &kind in &cfg.methods {
        let path = checkpoint_path(run, kind, tasks.len());
        let (state, _) = read_checkpoint(&path)?.into_state(cfg)?;
        for task in &tasks {
            let (p, s) = crate::train::evaluate_task(&state, task, &cfg.train)?;
            rows.push(MetricsRow {
                method: kind.name().to_string(),
                trained: tasks.len(),
                eval_task: task.index,
                psnr_db: p,
                msssim: s,
                aux_bytes: state.aux_bytes(),
                wall_s: 0.0,
            });
        }
    }
    write_metrics_csv(&run.join("eval.csv"), &rows, true)?;
    Ok(())
}

/// Aggregates one or more run directories (refusing mismatched datasets)
/// into: a final per-task metric table, the Task-1-over-time series, the
/// auxiliary-memory-vs-tasks series, and a GT/reconstruction grid per method
/// for the earliest task.
pub fn cmd_report(runs: &[PathBuf], data: &Path, out: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let expected_hash = dataset_hash(data)?;
    let mut rows: Vec<MetricsRow> = vec![];
    for run in runs {
        let prov = read_provenance(run)?;
        if prov.dataset_hash != expected_hash {
            return Err(Error::Config(format!(
                "run {} was trained on a different dataset (hash {} != {})",
                run.display(),
                prov.dataset_hash,
                expected_hash
            )));
        }
        rows.extend(read_metrics_csv(&run.join("metrics.csv"))?);
    }
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let t_max = rows.iter().map(|r| r.trained).max().unwrap_or(0);

    // (a) final per-task table
    let finals: Vec<&MetricsRow> = rows.iter().filter(|r| r.trained == t_max).collect();
    let mut table = String::from("method,eval_task,psnr_db,msssim\n");
    for r in &finals {
        table.push_str(&format!("{},{},{:?},{:?}\n", r.method, r.eval_task, r.psnr_db, r.msssim));
    }
    let path = out.join("final_metrics.csv");
    std::fs::write(&path, table).map_err(|e| io_err(&path, e))?;

    // (b) Task-1 degradation over the sequence
    let mut series = String::from("method,trained,psnr_db,msssim\n");
    for r in rows.iter().filter(|r| r.eval_task == 1) {
        series.push_str(&format!("{},{},{:?},{:?}\n", r.method, r.trained, r.psnr_db, r.msssim));
    }
    let path = out.join("task1_over_time.csv");
    std::fs::write(&path, series).map_err(|e| io_err(&path, e))?;

    // (c) auxiliary memory vs tasks trained
    let mut memory = String::from("method,trained,aux_bytes\n");
    let mut seen = std::collections::BTreeSet::new();
    for r in &rows {
        if seen.insert((r.method.clone(), r.trained)) {
            memory.push_str(&format!("{},{},{}\n", r.method, r.trained, r.aux_bytes));
        }
    }
    let path = out.join("memory_vs_tasks.csv");
    std::fs::write(&path, memory).map_err(|e| io_err(&path, e))?;

    // (d) qualitative grid for the earliest task, per run and method
    for run in runs {
        qualitative_grids(run, data, out)?;
    }
    Ok(())
}

/// For every method with a final checkpoint in `run`, renders task 1's views
/// and writes a two-row (ground truth / reconstruction) grid PNG.
fn qualitative_grids(run: &Path, data: &Path, out: &Path) -> Result<()> {
    let tasks = load_dataset(data)?;
    let first = &tasks[0];
    let cfg_path = run.join("config.resolved.toml");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
    let cfg: crate::config::ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", cfg_path.display())))?;
    let cfg = cfg.resolve()?;
    for &kind in &cfg.methods {
        let path = checkpoint_path(run, kind, tasks.len());
        if !path.exists() {
            continue; // method diverged or was not trained to the end
        }
        let (state, _) = read_checkpoint(&path)?.into_state(&cfg)?;
        let params = state.eval_params(first.index);
        let spec = SampleSpec { stratified: false, ..cfg.train.sample };
        let (w, h) = (first.intrinsics.width, first.intrinsics.height);
        let n = first.views.len() as u32;
        let mut grid = ImageBuffer::black(n * w, 2 * h);
        for (k, view) in first.views.iter().enumerate() {
            let rendered =
                render_image(&params, &cfg.train.network, &first.intrinsics, &view.pose, &spec, 0)?;
            for v in 0..h {
                for u in 0..w {
                    grid.set(k as u32 * w + u, v, view.image.get(u, v));
                    grid.set(k as u32 * w + u, h + v, rendered.get(u, v));
                }
            }
        }
        write_png_preview(&grid, &out.join(format!("qualitative_task1_{}.png", kind.name())))?;
    }
    Ok(())
}
