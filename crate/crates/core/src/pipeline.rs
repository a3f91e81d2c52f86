//! Campaign orchestration: generation → PT hardness classification →
//! exact ground states → landscape / coupling-noise / time-to-solution
//! analytics, with per-stage manifests for idempotent resume.
//!
//! Everything derives from the campaign master seed, so rerunning (or
//! resuming after an interruption) reproduces byte-identical artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chaosj::{self, CycleConfig};
use crate::chimera::{build_chimera, generate_instance, parse_instance, serialize_instance, Instance};
use crate::engine::rng::{stream, stream_seed};
use crate::engine::{run_packed, RunConfig, TemperatureLadder};
use crate::exact::{self, excitation_gap_states, Degeneracy};
use crate::landscape::{
    curve_table, detect_tc, energy_curve, extrapolate_zero_t, overlap_distributions,
    overlap_table, typical_overlap,
};
use crate::mixing::{self, class_label, report_table, EscalationSpec, HardnessReport};
use crate::ttslab::{
    aggregate, fit_power_law, group_typical_tts, percentile_by_generation, records_table,
    time_windows, tts, AnnealRecord, ScalingFit, Tts, TypicalTts, WindowStat,
};
use crate::util::fmt_sig9;

use rand_xoshiro::rand_core::RngCore;

const TAG_GEN: u64 = 0x6361_6d70_6761_7567;
const TAG_RUN: u64 = 0x6361_6d70_7275_6e31;
const TAG_LAND: u64 = 0x6361_6d70_6c61_6e64;
const TAG_PICK: u64 = 0x6361_6d70_7069_636b;
const TAG_CHAOS: u64 = 0x6361_6d70_6a63_6861;
const TAG_TTS: u64 = 0x6361_6d70_7474_7331;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("stage {stage}: {msg}")]
    Stage { stage: &'static str, msg: String },
}

fn io_err(path: &Path, source: std::io::Error) -> CampaignError {
    CampaignError::Io { path: path.to_path_buf(), source }
}

/// Campaign parameters; see [`CampaignConfig::parse`] for the file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub rows: u32,
    pub cols: u32,
    pub half: u32,
    pub dead: BTreeSet<u32>,
    pub instances: u32,
    pub seed: u64,
    pub budgets: Vec<u64>,
    pub caps: Vec<usize>,
    pub sweeps_per_step: u32,
    pub replicas: u32,
    pub checkpoints: u32,
    pub landscape_steps: u64,
    pub delta_j: f64,
    pub chaos_instances: u32,
    pub chaos_cycles: u32,
    pub chaos_attempts: u32,
    pub chaos_budget: u64,
    pub tts_instances: u32,
    pub tts_attempts: u32,
    pub tts_budgets: Vec<u64>,
    pub overlap_pairs: usize,
    pub burn_in_taus: f64,
    pub tc_threshold: f64,
    pub hist_bins_per_decade: u32,
}

impl Default for CampaignConfig {
    /// Workstation-scale defaults: C4 graphs and the desk escalation
    /// schedule.
    fn default() -> Self {
        CampaignConfig {
            rows: 4,
            cols: 4,
            half: 4,
            dead: BTreeSet::new(),
            instances: 1000,
            seed: 1,
            budgets: mixing::DESK_ROUND_BUDGETS.to_vec(),
            caps: mixing::DESK_SURVIVOR_CAPS.to_vec(),
            sweeps_per_step: 10,
            replicas: 4,
            checkpoints: 100,
            landscape_steps: 20_000,
            delta_j: 0.05,
            chaos_instances: 8,
            chaos_cycles: 50,
            chaos_attempts: 10,
            chaos_budget: 2_000,
            tts_instances: 8,
            tts_attempts: 6,
            tts_budgets: vec![20, 60, 200, 600, 2_000, 6_000, 20_000],
            overlap_pairs: 100_000,
            burn_in_taus: 3.0,
            tc_threshold: 5.0,
            hist_bins_per_decade: 4,
        }
    }
}

impl CampaignConfig {
    /// Parses `key value...` lines; unknown keys are errors. Missing keys
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<CampaignConfig, CampaignError> {
        let mut cfg = CampaignConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut toks = t.split_whitespace();
            let key = toks.next().unwrap();
            let rest: Vec<&str> = toks.collect();
            let one = || -> Result<&str, CampaignError> {
                rest.first().copied().ok_or(CampaignError::Config {
                    line,
                    msg: format!("`{key}` needs a value"),
                })
            };
            let perr = |what: &str| CampaignError::Config { line, msg: format!("bad {what}") };
            match key {
                "graph" => {
                    let dims: Vec<&str> = one()?.split('x').collect();
                    if dims.len() != 3 {
                        return Err(perr("graph (want RxCxK)"));
                    }
                    cfg.rows = dims[0].parse().map_err(|_| perr("graph rows"))?;
                    cfg.cols = dims[1].parse().map_err(|_| perr("graph cols"))?;
                    cfg.half = dims[2].parse().map_err(|_| perr("graph half"))?;
                }
                "dead" => {
                    for v in &rest {
                        cfg.dead.insert(v.parse().map_err(|_| perr("dead vertex"))?);
                    }
                }
                "instances" => cfg.instances = one()?.parse().map_err(|_| perr("instances"))?,
                "seed" => cfg.seed = one()?.parse().map_err(|_| perr("seed"))?,
                "budgets" => {
                    cfg.budgets = rest
                        .iter()
                        .map(|v| v.parse().map_err(|_| perr("budget")))
                        .collect::<Result<_, _>>()?;
                }
                "caps" => {
                    cfg.caps = rest
                        .iter()
                        .map(|v| v.parse().map_err(|_| perr("cap")))
                        .collect::<Result<_, _>>()?;
                }
                "sweeps_per_step" => {
                    cfg.sweeps_per_step = one()?.parse().map_err(|_| perr("sweeps_per_step"))?
                }
                "replicas" => cfg.replicas = one()?.parse().map_err(|_| perr("replicas"))?,
                "checkpoints" => cfg.checkpoints = one()?.parse().map_err(|_| perr("checkpoints"))?,
                "landscape_steps" => {
                    cfg.landscape_steps = one()?.parse().map_err(|_| perr("landscape_steps"))?
                }
                "delta_j" => cfg.delta_j = one()?.parse().map_err(|_| perr("delta_j"))?,
                "chaos_instances" => {
                    cfg.chaos_instances = one()?.parse().map_err(|_| perr("chaos_instances"))?
                }
                "chaos_cycles" => {
                    cfg.chaos_cycles = one()?.parse().map_err(|_| perr("chaos_cycles"))?
                }
                "chaos_attempts" => {
                    cfg.chaos_attempts = one()?.parse().map_err(|_| perr("chaos_attempts"))?
                }
                "chaos_budget" => {
                    cfg.chaos_budget = one()?.parse().map_err(|_| perr("chaos_budget"))?
                }
                "tts_instances" => {
                    cfg.tts_instances = one()?.parse().map_err(|_| perr("tts_instances"))?
                }
                "tts_attempts" => {
                    cfg.tts_attempts = one()?.parse().map_err(|_| perr("tts_attempts"))?
                }
                "tts_budgets" => {
                    cfg.tts_budgets = rest
                        .iter()
                        .map(|v| v.parse().map_err(|_| perr("tts budget")))
                        .collect::<Result<_, _>>()?;
                }
                "overlap_pairs" => {
                    cfg.overlap_pairs = one()?.parse().map_err(|_| perr("overlap_pairs"))?
                }
                "burn_in_taus" => {
                    cfg.burn_in_taus = one()?.parse().map_err(|_| perr("burn_in_taus"))?
                }
                "tc_threshold" => {
                    cfg.tc_threshold = one()?.parse().map_err(|_| perr("tc_threshold"))?
                }
                "hist_bins_per_decade" => {
                    cfg.hist_bins_per_decade =
                        one()?.parse().map_err(|_| perr("hist_bins_per_decade"))?
                }
                other => {
                    return Err(CampaignError::Config {
                        line,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        if cfg.caps.len() + 1 != cfg.budgets.len() {
            return Err(CampaignError::Config {
                line: 0,
                msg: format!(
                    "need one fewer cap ({}) than budgets ({})",
                    cfg.caps.len(),
                    cfg.budgets.len()
                ),
            });
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("graph {}x{}x{}\n", self.rows, self.cols, self.half));
        if !self.dead.is_empty() {
            out.push_str("dead");
            for d in &self.dead {
                out.push_str(&format!(" {d}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("instances {}\n", self.instances));
        out.push_str(&format!("seed {}\n", self.seed));
        let joined = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        out.push_str(&format!("budgets {}\n", joined(&self.budgets)));
        out.push_str(&format!(
            "caps {}\n",
            self.caps.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
        ));
        out.push_str(&format!("sweeps_per_step {}\n", self.sweeps_per_step));
        out.push_str(&format!("replicas {}\n", self.replicas));
        out.push_str(&format!("checkpoints {}\n", self.checkpoints));
        out.push_str(&format!("landscape_steps {}\n", self.landscape_steps));
        out.push_str(&format!("delta_j {}\n", fmt_sig9(self.delta_j)));
        out.push_str(&format!("chaos_instances {}\n", self.chaos_instances));
        out.push_str(&format!("chaos_cycles {}\n", self.chaos_cycles));
        out.push_str(&format!("chaos_attempts {}\n", self.chaos_attempts));
        out.push_str(&format!("chaos_budget {}\n", self.chaos_budget));
        out.push_str(&format!("tts_instances {}\n", self.tts_instances));
        out.push_str(&format!("tts_attempts {}\n", self.tts_attempts));
        out.push_str(&format!("tts_budgets {}\n", joined(&self.tts_budgets)));
        out.push_str(&format!("overlap_pairs {}\n", self.overlap_pairs));
        out.push_str(&format!("burn_in_taus {}\n", fmt_sig9(self.burn_in_taus)));
        out.push_str(&format!("tc_threshold {}\n", fmt_sig9(self.tc_threshold)));
        out.push_str(&format!("hist_bins_per_decade {}\n", self.hist_bins_per_decade));
        out
    }
}

const STAGES: [&str; 7] = ["gen", "hardness", "exact", "landscape", "chaosj", "tts", "hist"];

struct Manifest {
    path: PathBuf,
    /// (stage, relative file, hash) rows for completed stages.
    rows: Vec<(String, String, String)>,
}

impl Manifest {
    fn load(dir: &Path) -> Result<Manifest, CampaignError> {
        let path = dir.join("manifest.tsv");
        let mut rows = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            for line in text.lines().skip(1) {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() == 3 {
                    rows.push((f[0].to_string(), f[1].to_string(), f[2].to_string()));
                }
            }
        }
        Ok(Manifest { path, rows })
    }

    fn stage_done(&self, dir: &Path, stage: &str) -> bool {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.0 == stage).collect();
        if rows.is_empty() {
            return false;
        }
        rows.iter().all(|(_, file, hash)| {
            let p = dir.join(file);
            match fs::read(&p) {
                Ok(bytes) => file_hash(&bytes) == *hash,
                Err(_) => false,
            }
        })
    }

    fn record_stage(
        &mut self,
        dir: &Path,
        stage: &str,
        files: &[PathBuf],
    ) -> Result<(), CampaignError> {
        self.rows.retain(|r| r.0 != stage);
        for f in files {
            let bytes = fs::read(f).map_err(|e| io_err(f, e))?;
            let rel = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().to_string();
            self.rows.push((stage.to_string(), rel, file_hash(&bytes)));
        }
        let mut out = String::from("stage\tfile\tsha256\n");
        // Keep manifest rows in stage order for stable bytes.
        for s in STAGES {
            for (st, f, h) in &self.rows {
                if st == s {
                    out.push_str(&format!("{st}\t{f}\t{h}\n"));
                }
            }
        }
        fs::write(&self.path, out).map_err(|e| io_err(&self.path, e))
    }
}

fn file_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CampaignError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))
}

pub struct CampaignSummary {
    pub stages_run: Vec<&'static str>,
    pub stages_skipped: Vec<&'static str>,
}

struct Ctx {
    cfg: CampaignConfig,
    dir: PathBuf,
    ladder: TemperatureLadder,
    instances: Vec<Instance>,
    reports: Vec<HardnessReport>,
    e0: Vec<f64>,
    /// Per-instance overlap medians (generation, gs-gs, gs-es).
    overlap_rows: Vec<(i32, f64, f64)>,
}

/// Runs (or resumes) a campaign into `dir`. With `resume`, stages whose
/// manifest rows still hash-match are skipped; the first stale stage and
/// everything after it rerun.
pub fn run_campaign(
    cfg: &CampaignConfig,
    dir: &Path,
    resume: bool,
) -> Result<CampaignSummary, CampaignError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("config.txt"), &cfg.render())?;
    let mut manifest = Manifest::load(dir)?;
    let mut ctx = Ctx {
        cfg: cfg.clone(),
        dir: dir.to_path_buf(),
        ladder: crate::engine::default_ladder(),
        instances: Vec::new(),
        reports: Vec::new(),
        e0: Vec::new(),
        overlap_rows: Vec::new(),
    };
    let mut summary = CampaignSummary { stages_run: Vec::new(), stages_skipped: Vec::new() };
    let mut clean = resume;
    for stage in STAGES {
        let skip = clean && manifest.stage_done(dir, stage);
        if skip {
            summary.stages_skipped.push(stage);
            load_stage_outputs(stage, &mut ctx)?;
            continue;
        }
        clean = false;
        let files = match stage {
            "gen" => stage_gen(&mut ctx)?,
            "hardness" => stage_hardness(&mut ctx)?,
            "exact" => stage_exact(&mut ctx)?,
            "landscape" => stage_landscape(&mut ctx)?,
            "chaosj" => stage_chaosj(&mut ctx)?,
            "tts" => stage_tts(&mut ctx)?,
            "hist" => stage_hist(&mut ctx)?,
            _ => unreachable!(),
        };
        manifest.record_stage(dir, stage, &files)?;
        summary.stages_run.push(stage);
    }
    Ok(summary)
}

/// Re-hydrates the in-memory context from a completed stage's files.
fn load_stage_outputs(stage: &str, ctx: &mut Ctx) -> Result<(), CampaignError> {
    match stage {
        "gen" => {
            let dir = ctx.dir.join("instances");
            let mut names: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| io_err(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            names.sort();
            ctx.instances = names
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                    parse_instance(&text)
                        .map(|(i, _)| i)
                        .map_err(|e| CampaignError::Stage { stage: "gen", msg: e.to_string() })
                })
                .collect::<Result<_, _>>()?;
        }
        "hardness" => {
            let path = ctx.dir.join("hardness/report.tsv");
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            ctx.reports = parse_report_table(&text)
                .map_err(|msg| CampaignError::Stage { stage: "hardness", msg })?;
        }
        "exact" => {
            let path = ctx.dir.join("exact/results.tsv");
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            ctx.e0 = text
                .lines()
                .skip(1)
                .map(|l| {
                    l.split('\t')
                        .nth(1)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| CampaignError::Stage {
                            stage: "exact",
                            msg: format!("bad row `{l}`"),
                        })
                })
                .collect::<Result<_, _>>()?;
        }
        "landscape" => {
            let path = ctx.dir.join("landscape/overlap_medians.tsv");
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            ctx.overlap_rows = text
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let f: Vec<&str> = l.split('\t').collect();
                    if f.len() < 4 || f[1] == "na" || f[2] == "na" || f[3] == "na" {
                        return None;
                    }
                    Some((f[1].parse().ok()?, f[2].parse().ok()?, f[3].parse().ok()?))
                })
                .collect();
        }
        _ => {}
    }
    Ok(())
}

fn parse_report_table(text: &str) -> Result<Vec<HardnessReport>, String> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(format!("bad report row `{line}`"));
        }
        let fit = if f[1] == "na" {
            None
        } else {
            Some(mixing::TwoExpFit {
                tau: f[1].parse().map_err(|_| "bad tau")?,
                tau_sub: f[2].parse().map_err(|_| "bad tau_sub")?,
                a1: 0.0,
                a2: 0.0,
                residual: f[3].parse().map_err(|_| "bad residual")?,
            })
        };
        let class = if f[5] == "between" {
            mixing::HardnessClass::Generation(mixing::Generation::BetweenBins)
        } else if let Some(rest) = f[5].strip_prefix(">=") {
            mixing::HardnessClass::UnresolvedAtLeast(rest.parse().map_err(|_| "bad bound")?)
        } else {
            mixing::HardnessClass::Generation(mixing::Generation::K(
                f[5].parse().map_err(|_| "bad generation")?,
            ))
        };
        out.push(HardnessReport {
            id: f[0].to_string(),
            fit,
            figure_of_merit: f[4].parse().map_err(|_| "bad f")?,
            class,
            rounds: f[6].parse().map_err(|_| "bad rounds")?,
            run_sweeps: 0,
        });
    }
    Ok(out)
}

fn stage_gen(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CampaignError> {
    let cfg = &ctx.cfg;
    let graph = Arc::new(
        build_chimera(cfg.rows, cfg.cols, cfg.half, &cfg.dead)
            .map_err(|e| CampaignError::Stage { stage: "gen", msg: e.to_string() })?,
    );
    let mut files = Vec::new();
    ctx.instances.clear();
    for i in 0..cfg.instances {
        let seed = stream_seed(cfg.seed, TAG_GEN, [i as u64, 0, 0]);
        let inst = generate_instance(Arc::clone(&graph), seed);
        let path = ctx.dir.join(format!("instances/inst_{i:05}.txt"));
        write_file(&path, &serialize_instance(&inst, None))?;
        files.push(path);
        ctx.instances.push(inst);
    }
    Ok(files)
}

fn stage_hardness(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CampaignError> {
    let cfg = &ctx.cfg;
    let spec = EscalationSpec {
        budgets: cfg.budgets.clone(),
        caps: cfg.caps.clone(),
        resolvable_factor: 10.0,
        sweeps_per_step: cfg.sweeps_per_step,
    };
    let ladder = ctx.ladder.clone();
    let master = cfg.seed;
    let (sps, replicas, checkpoints) = (cfg.sweeps_per_step, cfg.replicas, cfg.checkpoints);
    let runner = move |batch: &[Instance], steps: u64, round: usize| {
        let run_cfg = RunConfig {
            steps,
            sweeps_per_step: sps,
            replicas,
            checkpoints,
            store_configs: false,
            trace_cap: 1 << 17,
            master_seed: stream_seed(master, TAG_RUN, [round as u64, batch[0].seed, 0]),
        };
        run_packed(batch, &ladder, &run_cfg).expect("hardness runs on generated ±J instances")
    };
    ctx.reports = mixing::escalation_protocol(&ctx.instances, runner, &spec, 64);
    let path = ctx.dir.join("hardness/report.tsv");
    write_file(&path, &report_table(&ctx.reports))?;
    Ok(vec![path])
}

fn stage_exact(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CampaignError> {
    let results: Vec<exact::ExactResult> = ctx
        .instances
        .par_iter()
        .map(|inst| exact::solve(inst).expect("campaign graphs fit the DP"))
        .collect();
    let mut out = String::from("id\te0\tdegeneracy\n");
    for (inst, r) in ctx.instances.iter().zip(&results) {
        let deg = match r.degeneracy {
            Degeneracy::Counted(c) => c.to_string(),
            Degeneracy::NotComputed => "not_computed".into(),
        };
        out.push_str(&format!("{}\t{}\t{}\n", inst.id, fmt_sig9(r.e0), deg));
    }
    ctx.e0 = results.iter().map(|r| r.e0).collect();
    let path = ctx.dir.join("exact/results.tsv");
    write_file(&path, &out)?;
    Ok(vec![path])
}

fn generation_of(report: &HardnessReport) -> Option<i32> {
    report.generation()
}

fn stage_landscape(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CampaignError> {
    let cfg = &ctx.cfg;
    let mut files = Vec::new();
    let mut extrap_rows = String::from("id\ttau\tgeneration\textrap_error\ttc_temps\n");
    let mut med_rows = String::from("id\tgeneration\tmed_gsgs\tmed_gses\tn_gs\tn_es\n");
    ctx.overlap_rows.clear();

    let run_cfg_base = RunConfig {
        steps: cfg.landscape_steps,
        sweeps_per_step: cfg.sweeps_per_step,
        replicas: cfg.replicas,
        checkpoints: cfg.checkpoints,
        store_configs: true,
        trace_cap: 1 << 14,
        master_seed: 0,
    };
    let chunks: Vec<Vec<usize>> =
        (0..ctx.instances.len()).collect::<Vec<_>>().chunks(64).map(|c| c.to_vec()).collect();
    // (index, curve table, overlap tables, extrap row, medians row, overlap medians)
    type LandRow = (usize, String, Vec<(String, String)>, String, String, Option<(i32, f64, f64)>);
    let rows: Vec<LandRow> = chunks
        .par_iter()
        .flat_map(|chunk| {
            let insts: Vec<Instance> = chunk.iter().map(|&i| ctx.instances[i].clone()).collect();
            let mut run_cfg = run_cfg_base.clone();
            run_cfg.master_seed = stream_seed(cfg.seed, TAG_LAND, [insts[0].seed, 0, 0]);
            let outs = run_packed(&insts, &ctx.ladder, &run_cfg)
                .expect("landscape runs on generated ±J instances");
            chunk
                .iter()
                .zip(outs)
                .map(|(&i, out)| {
                    let inst = &ctx.instances[i];
                    let rep = &ctx.reports[i];
                    let tau = rep.tau().unwrap_or(f64::INFINITY);
                    let gen_label = class_label(&rep.class);
                    let e0 = ctx.e0[i];
                    let mut curve_text = String::new();
                    let mut extrap_row = format!("{}\tna\t{}\tna\tna\n", inst.id, gen_label);
                    if let Ok(curve) = energy_curve(&out, e0, tau.min(1e18), cfg.burn_in_taus) {
                        curve_text = curve_table(&curve, &inst.id, &gen_label);
                        if let Ok(ex) = extrapolate_zero_t(&curve, exact::PM1_GAP) {
                            let tcs = detect_tc(&curve, cfg.tc_threshold);
                            let tc_str = if tcs.is_empty() {
                                "-".to_string()
                            } else {
                                tcs.iter().map(|t| fmt_sig9(*t)).collect::<Vec<_>>().join(",")
                            };
                            extrap_row = format!(
                                "{}\t{}\t{}\t{}\t{}\n",
                                inst.id,
                                if tau.is_finite() { fmt_sig9(tau) } else { "na".into() },
                                gen_label,
                                fmt_sig9(ex.error_vs_e0),
                                tc_str
                            );
                        }
                    }
                    // Overlaps from the stored snapshots.
                    let configs: Vec<_> = out
                        .snapshots
                        .iter()
                        .map(|s| s.config(inst.n()))
                        .collect();
                    let labels = excitation_gap_states(inst, &configs, e0)
                        .expect("campaign instances are ±J");
                    let mut overlap_files = Vec::new();
                    let mut med_row = format!("{}\t{}\tna\tna\t0\t0\n", inst.id, gen_label);
                    let mut med_entry = None;
                    let n_gs = labels.iter().filter(|&&l| l == exact::StateLabel::Gs).count();
                    let n_es = labels.iter().filter(|&&l| l == exact::StateLabel::Es).count();
                    if let Ok((gg, ge)) = overlap_distributions(
                        &configs,
                        &labels,
                        cfg.overlap_pairs,
                        stream_seed(cfg.seed, TAG_LAND, [inst.seed, 1, 0]),
                    ) {
                        overlap_files.push((
                            format!("landscape/overlaps/{}_gsgs.tsv", inst.id),
                            overlap_table(&gg, &inst.id),
                        ));
                        overlap_files.push((
                            format!("landscape/overlaps/{}_gses.tsv", inst.id),
                            overlap_table(&ge, &inst.id),
                        ));
                        med_row = format!(
                            "{}\t{}\t{}\t{}\t{}\t{}\n",
                            inst.id,
                            gen_label,
                            fmt_sig9(gg.median),
                            fmt_sig9(ge.median),
                            n_gs,
                            n_es
                        );
                        if let Some(g) = generation_of(rep) {
                            med_entry = Some((g, gg.median, ge.median));
                        }
                    }
                    (
                        i,
                        curve_text,
                        overlap_files,
                        extrap_row,
                        med_row,
                        med_entry,
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut rows = rows;
    rows.sort_by_key(|r| r.0);
    for (i, curve_text, overlap_files, extrap_row, med_row, med_entry) in rows {
        if !curve_text.is_empty() {
            let p = ctx.dir.join(format!("landscape/curves/{}.tsv", ctx.instances[i].id));
            write_file(&p, &curve_text)?;
            files.push(p);
        }
        for (rel, text) in overlap_files {
            let p = ctx.dir.join(rel);
            write_file(&p, &text)?;
            files.push(p);
        }
        extrap_rows.push_str(&extrap_row);
        med_rows.push_str(&med_row);
        if let Some(e) = med_entry {
            ctx.overlap_rows.push(e);
        }
    }
    let p = ctx.dir.join("landscape/extrapolation.tsv");
    write_file(&p, &extrap_rows)?;
    files.push(p);
    let p = ctx.dir.join("landscape/overlap_medians.tsv");
    write_file(&p, &med_rows)?;
    files.push(p);
    let mut typical = String::from("generation\tmed_gsgs\tmed_gses\n");
    for (g, gg, ge) in typical_overlap(&ctx.overlap_rows) {
        typical.push_str(&format!("{g}\t{}\t{}\n", fmt_sig9(gg), fmt_sig9(ge)));
    }
    let p = ctx.dir.join("landscape/typical_overlap.tsv");
    write_file(&p, &typical)?;
    files.push(p);
    Ok(files)
}

/// Deterministically samples up to `count` instances spread over the
/// resolved generations (seeded shuffle within each generation).
fn pick_representatives(ctx: &Ctx, count: u32, tag: u64) -> Vec<usize> {
    let mut by_gen: Vec<(i32, Vec<usize>)> = Vec::new();
    for (i, rep) in ctx.reports.iter().enumerate() {
        if let Some(g) = generation_of(rep) {
            match by_gen.iter_mut().find(|(k, _)| *k == g) {
                Some((_, v)) => v.push(i),
                None => by_gen.push((g, vec![i])),
            }
        }
    }
    by_gen.sort_by_key(|(g, _)| *g);
    if by_gen.is_empty() || count == 0 {
        return Vec::new();
    }
    let per_gen = (count as usize).div_ceil(by_gen.len());
    let mut picked = Vec::new();
    for (g, mut v) in by_gen {
        let mut rng = stream(ctx.cfg.seed, tag ^ TAG_PICK, [g as u64, 0, 0]);
        // Fisher–Yates with the seeded stream.
        for i in (1..v.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            v.swap(i, j);
        }
        picked.extend(v.into_iter().take(per_gen));
    }
    picked.truncate(count as usize);
    picked.sort_unstable();
    picked
}

fn stage_chaosj(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CampaignError> {
    let cfg = &ctx.cfg;
    let picked = pick_representatives(ctx, cfg.chaos_instances, TAG_CHAOS);
    let mut cycles_text =
        String::from("instance_id\tcycle\tgauge_seed\tperturb_seed\tX\tY\tp\n");
    let mut pct_text = String::from("id\tn_cycles\tI50\tI80\tI90\tR89\n");
    let results: Vec<(usize, String, String)> = picked
        .par_iter()
        .map(|&i| {
            let inst = &ctx.instances[i];
            let cycle_cfg = CycleConfig {
                delta_j: cfg.delta_j,
                clamp: None,
                n_cycles: cfg.chaos_cycles,
                attempts_per_cycle: cfg.chaos_attempts,
                budget_sweeps: cfg.chaos_budget,
                master_seed: stream_seed(cfg.seed, TAG_CHAOS, [inst.seed, 0, 0]),
            };
            let cycles = chaosj::simulate_cycles(inst, ctx.e0[i], &ctx.ladder, &cycle_cfg)
                .expect("cycle simulation");
            let table = chaosj::cycles_table(&inst.id, &cycles);
            let body: String = table.lines().skip(1).map(|l| format!("{l}\n")).collect();
            (i, body, chaosj::percentile_report(&inst.id, &cycles))
        })
        .collect();
    for (_, body, pct) in results {
        cycles_text.push_str(&body);
        pct_text.push_str(&pct);
    }
    let mut files = Vec::new();
    let p = ctx.dir.join("chaosj/cycles.tsv");
    write_file(&p, &cycles_text)?;
    files.push(p);
    let p = ctx.dir.join("chaosj/percentiles.tsv");
    write_file(&p, &pct_text)?;
    files.push(p);
    Ok(files)
}

fn stage_tts(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CampaignError> {
    let cfg = &ctx.cfg;
    let picked = pick_representatives(ctx, cfg.tts_instances, TAG_TTS);
    // Simulated anneal records: one cycle per (instance, budget); the
    // sweep budget doubles as the nominal anneal time in microseconds.
    let records: Vec<AnnealRecord> = picked
        .par_iter()
        .flat_map(|&i| {
            let inst = &ctx.instances[i];
            let e0 = ctx.e0[i];
            cfg.tts_budgets
                .iter()
                .enumerate()
                .map(|(bi, &budget)| {
                    let mut y = 0u64;
                    for a in 0..cfg.tts_attempts {
                        let seed = stream_seed(
                            cfg.seed,
                            TAG_TTS,
                            [inst.seed, bi as u64, a as u64],
                        );
                        let r = crate::engine::run_heuristic(inst, &ctx.ladder, e0, budget, seed)
                            .expect("heuristic run");
                        if r.first_hit_sweeps.is_some() {
                            y += 1;
                        }
                    }
                    AnnealRecord {
                        instance_id: inst.id.clone(),
                        t_ann_us: budget as f64,
                        cycle: bi as u32,
                        x: cfg.tts_attempts as u64,
                        y,
                        source: "simulated".into(),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut files = Vec::new();
    let p = ctx.dir.join("tts/records.tsv");
    write_file(&p, &records_table(&records))?;
    files.push(p);

    // Per (instance, t_ann): P, floor, tts.
    let mut tts_text = String::from("instance_id\tt_ann_us\tP\tfloor\ttts_us\n");
    let mut per_instance_min: Vec<(usize, Tts)> = Vec::new();
    for &i in &picked {
        let inst = &ctx.instances[i];
        let mut best = Tts::Infinite;
        for &budget in &cfg.tts_budgets {
            let group: Vec<&AnnealRecord> = records
                .iter()
                .filter(|r| r.instance_id == inst.id && r.t_ann_us == budget as f64)
                .collect();
            if let Some(agg) = aggregate(group.iter().copied()) {
                let t = tts(agg.p, budget as f64);
                tts_text.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    inst.id,
                    budget,
                    fmt_sig9(agg.p),
                    fmt_sig9(agg.floor),
                    t.label()
                ));
                if let (Tts::Finite(new), Tts::Finite(old)) = (t, best) {
                    if new < old {
                        best = t;
                    }
                } else if matches!(best, Tts::Infinite) {
                    if let Tts::Finite(_) = t {
                        best = t;
                    }
                }
            }
        }
        per_instance_min.push((i, best));
    }
    let p = ctx.dir.join("tts/tts.tsv");
    write_file(&p, &tts_text)?;
    files.push(p);

    // Typical (median of minimal) tts per generation, and the α fit of
    // typical tts against the generation's τ scale.
    let mut gens: Vec<i32> = picked
        .iter()
        .filter_map(|&i| generation_of(&ctx.reports[i]))
        .collect();
    gens.sort_unstable();
    gens.dedup();
    let mut typical_text = String::from("generation\ttypical_tts_us\tn\n");
    let mut alpha_x = Vec::new();
    let mut alpha_y = Vec::new();
    for &g in &gens {
        let group: Vec<Tts> = per_instance_min
            .iter()
            .filter(|(i, _)| generation_of(&ctx.reports[*i]) == Some(g))
            .map(|(_, t)| *t)
            .collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len();
        match group_typical_tts(&group) {
            Ok(TypicalTts::Finite(v)) => {
                typical_text.push_str(&format!("{g}\t{}\t{n}\n", fmt_sig9(v)));
                alpha_x.push(10f64.powi(g));
                alpha_y.push(v);
            }
            Ok(TypicalTts::Unresolved) => {
                typical_text.push_str(&format!("{g}\tunresolved\t{n}\n"));
            }
            Err(_) => {}
        }
    }
    let p = ctx.dir.join("tts/typical.tsv");
    write_file(&p, &typical_text)?;
    files.push(p);

    let mut fits: Vec<ScalingFit> = Vec::new();
    if let Some(f) = fit_power_law(&alpha_x, &alpha_y, "alpha_pt_heur") {
        fits.push(f);
    }
    // θ per generation and percentile track, over annealing-time windows.
    let mut theta_text = String::from("generation\tpercentile\ttheta\tstderr\tn_windows\n");
    for &g in &gens {
        let gen_records: Vec<AnnealRecord> = records
            .iter()
            .filter(|r| {
                picked.iter().any(|&i| {
                    ctx.instances[i].id == r.instance_id
                        && generation_of(&ctx.reports[i]) == Some(g)
                })
            })
            .cloned()
            .collect();
        let (windows, _warn) = time_windows(&gen_records);
        for &q in &[0.5, 0.8] {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut data = Vec::new();
            for (w, recs) in &windows {
                // One pooled P per instance in this window.
                let mut ids: Vec<&str> =
                    recs.iter().map(|r| r.instance_id.as_str()).collect();
                ids.sort();
                ids.dedup();
                for id in ids {
                    let group: Vec<&AnnealRecord> =
                        recs.iter().filter(|r| r.instance_id == id).copied().collect();
                    if let Some(agg) = aggregate(group.iter().copied()) {
                        data.push((*w, agg.p, agg.below_resolution));
                    }
                }
            }
            let by_window = percentile_by_generation(
                &data.iter().map(|(w, p, b)| (g, *w, *p, *b)).collect::<Vec<_>>(),
                q,
            );
            for (_, w, _, stat) in by_window {
                if let WindowStat::Resolved(p) = stat {
                    // Geometric center of the window's nominal range.
                    let scale = 10f64.powi(w.k as i32);
                    let (lo, hi) =
                        if w.high { (60.0 * scale, 200.0 * scale) } else { (20.0 * scale, 60.0 * scale) };
                    xs.push((lo * hi).sqrt());
                    ys.push(p);
                }
            }
            if let Some(f) = fit_power_law(&xs, &ys, &format!("theta_gen{g}_q{q}")) {
                theta_text.push_str(&format!(
                    "{g}\t{q}\t{}\t{}\t{}\n",
                    fmt_sig9(f.exponent),
                    fmt_sig9(f.stderr),
                    f.n_points
                ));
            }
        }
    }
    let p = ctx.dir.join("tts/theta.tsv");
    write_file(&p, &theta_text)?;
    files.push(p);
    let p = ctx.dir.join("tts/alpha.tsv");
    write_file(&p, &crate::ttslab::fit_table(&fits))?;
    files.push(p);
    Ok(files)
}

/// Log-binned distribution of mixing times.
#[derive(Debug, Clone)]
pub struct TauHistogram {
    /// Bin edges (len = bins + 1), log-spaced.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Probability density (mass / linear bin width / total).
    pub density: Vec<f64>,
    /// Power-law fit of the density tail right of the mode.
    pub tail: Option<ScalingFit>,
}

pub fn tau_histogram(taus: &[f64], bins_per_decade: u32) -> Option<TauHistogram> {
    let finite: Vec<f64> = taus.iter().copied().filter(|t| t.is_finite() && *t > 0.0).collect();
    if finite.is_empty() {
        return None;
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bpd = bins_per_decade.max(1) as f64;
    let first = (lo.log10() * bpd).floor() / bpd;
    let mut edges = vec![10f64.powf(first)];
    let mut e = first;
    while 10f64.powf(e) < hi || edges.len() < 2 {
        e += 1.0 / bpd;
        edges.push(10f64.powf(e));
    }
    let nbins = edges.len() - 1;
    let mut counts = vec![0u64; nbins];
    for &t in &finite {
        let mut b = ((t.log10() - first) * bpd).floor() as isize;
        b = b.clamp(0, nbins as isize - 1);
        counts[b as usize] += 1;
    }
    let total = finite.len() as f64;
    let density: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| c as f64 / total / (edges[b + 1] - edges[b]))
        .collect();
    // Tail: bins strictly right of the modal bin with nonzero counts.
    let mode = counts.iter().enumerate().max_by_key(|(_, &c)| c).map(|(i, _)| i).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for b in mode + 1..nbins {
        if counts[b] > 0 {
            xs.push((edges[b] * edges[b + 1]).sqrt());
            ys.push(density[b]);
        }
    }
    let tail = fit_power_law(&xs, &ys, "tau_tail");
    Some(TauHistogram { edges, counts, density, tail })
}

pub fn histogram_table(h: &TauHistogram) -> String {
    let mut out = String::new();
    if let Some(t) = &h.tail {
        out.push_str(&format!(
            "# tail_slope {} stderr {} n {}\n",
            fmt_sig9(t.exponent),
            fmt_sig9(t.stderr),
            t.n_points
        ));
    } else {
        out.push_str("# tail_slope na\n");
    }
    out.push_str("tau_lo\ttau_hi\tcount\tdensity\n");
    for b in 0..h.counts.len() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            fmt_sig9(h.edges[b]),
            fmt_sig9(h.edges[b + 1]),
            h.counts[b],
            fmt_sig9(h.density[b])
        ));
    }
    out
}

fn stage_hist(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CampaignError> {
    let taus: Vec<f64> = ctx.reports.iter().filter_map(|r| r.tau()).collect();
    let text = match tau_histogram(&taus, ctx.cfg.hist_bins_per_decade) {
        Some(h) => histogram_table(&h),
        None => "# tail_slope na\ntau_lo\ttau_hi\tcount\tdensity\n".to_string(),
    };
    let path = ctx.dir.join("hist/tau_hist.tsv");
    write_file(&path, &text)?;
    Ok(vec![path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn config_roundtrip_and_errors() {
        let cfg = CampaignConfig::default();
        let text = cfg.render();
        let back = CampaignConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        let err = CampaignConfig::parse("nonsense 3\n").unwrap_err();
        assert!(matches!(err, CampaignError::Config { line: 1, .. }));
        let err = CampaignConfig::parse("budgets 10 100\ncaps 3 4\n").unwrap_err();
        assert!(matches!(err, CampaignError::Config { .. }));
    }

    #[test]
    fn histogram_normalizes_and_finds_inverse_tail() {
        // τ ~ density ∝ 1/τ on [1e3, 1e6]: uniform in log, tail slope −1.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let taus: Vec<f64> = (0..200_000).map(|_| 10f64.powf(3.0 + 3.0 * rng.gen::<f64>())).collect();
        let h = tau_histogram(&taus, 4).unwrap();
        let mass: f64 = h
            .density
            .iter()
            .enumerate()
            .map(|(b, d)| d * (h.edges[b + 1] - h.edges[b]))
            .sum();
        assert!((mass - 1.0).abs() < 1e-9);
        let tail = h.tail.as_ref().expect("tail fit");
        assert!((tail.exponent + 1.0).abs() < 0.05, "slope = {}", tail.exponent);
        // Bin edges cover the sample range.
        assert!(h.edges[0] <= 1e3 * 1.0001);
        assert!(*h.edges.last().unwrap() >= taus.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn single_tau_single_bin() {
        let h = tau_histogram(&[5e4], 4).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 1);
        let mass: f64 = h
            .density
            .iter()
            .enumerate()
            .map(|(b, d)| d * (h.edges[b + 1] - h.edges[b]))
            .sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }
}
