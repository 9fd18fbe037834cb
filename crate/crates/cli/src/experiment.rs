//! Multi-seed experiment runner producing the protocol × direction report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use nmt_core::corpus::{read_split, Direction};
use nmt_core::eval::{
    gain, render_csv, render_table, test_set_hash, BleuReport, DecodeOptions, ReportRow, RunScore, Translator,
};
use nmt_core::kv::KeyValues;
use nmt_core::protocols::{zero_shot_eval, TrainConfig};
use nmt_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::spec::{execute, load_with_tokenizers, RunSpec, BEST_CHECKPOINT, RUN_KEYS};

const GLOBAL_KEYS: &[&str] = &[
    "output_dir",
    "seeds",
    "first_seed",
    "workers",
    "target_direction",
    "baseline_run",
    "beam",
    "length_penalty",
    "smooth",
];
const RUN_ONLY_KEYS: &[&str] = &["parent_run", "eval", "report"];
const SCORE_FILE: &str = "score.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const FAILURES: &str = "failures.txt";

#[derive(Clone, Debug)]
pub struct ManifestRun {
    pub label: String,
    pub spec: RunSpec,
    pub parent_run: Option<String>,
    /// Split directory whose test partition is scored.
    pub eval: PathBuf,
    pub direction: Direction,
    pub report: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentManifest {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub target_direction: Option<Direction>,
    pub baseline_run: Option<String>,
    pub decode: DecodeOptions,
    pub smooth: bool,
    pub runs: Vec<ManifestRun>,
}

fn split_direction(dir: &Path) -> Result<Direction> {
    let meta = KeyValues::load(&dir.join("split.meta"))?;
    Ok(Direction::new(meta.require("src_lang")?, meta.require("tgt_lang")?))
}

fn must_exist(p: &Path, what: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", p.display())))
    }
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        Self::parse(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(kv: &KeyValues, base: &Path) -> Result<Self> {
        let shared = |k: &str| RUN_KEYS.contains(&k) || TrainConfig::KEYS.contains(&k);
        let mut labels: Vec<String> = Vec::new();
        for key in kv.keys() {
            if let Some(rest) = key.strip_prefix("run.") {
                let (label, field) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::Config(format!("`{key}` should look like run.<label>.<key>")))?;
                if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(Error::Config(format!("invalid run label {label:?}")));
                }
                if !shared(field) && !RUN_ONLY_KEYS.contains(&field) {
                    return Err(Error::Config(format!("unknown key `{field}` in `{key}`")));
                }
                if !labels.iter().any(|l| l == label) {
                    labels.push(label.to_string());
                }
            } else if !GLOBAL_KEYS.contains(&key) && !shared(key) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        if labels.is_empty() {
            return Err(Error::Config("manifest defines no runs".into()));
        }
        let target_direction: Option<Direction> = kv.get("target_direction").map(str::parse).transpose()?;
        let mut runs = Vec::new();
        for label in &labels {
            let mut run_kv = KeyValues::default();
            for key in kv.keys().filter(|k| shared(k)) {
                run_kv.set(key, kv.get(key).unwrap());
            }
            let prefix = format!("run.{label}.");
            for key in kv.keys() {
                if let Some(field) = key.strip_prefix(&prefix) {
                    if shared(field) {
                        run_kv.set(field, kv.get(key).unwrap());
                    }
                }
            }
            let get = |f: &str| kv.get(&format!("{prefix}{f}"));
            let parent_run = get("parent_run").map(str::to_string);
            if run_kv.get("label").is_none() {
                run_kv.set("label", label.clone());
            }
            let spec = RunSpec::from_kv(&run_kv, base, parent_run.is_none())?;
            if parent_run.is_some() && spec.parent_checkpoint.is_some() {
                return Err(Error::Config(format!("run {label}: give parent_run or parent_checkpoint, not both")));
            }
            for d in &spec.data {
                must_exist(d, &format!("run {label}: data directory"))?;
            }
            for p in [&spec.parent_checkpoint, &spec.src_tokenizer, &spec.tgt_tokenizer].into_iter().flatten() {
                must_exist(p, &format!("run {label}: file"))?;
            }
            let eval = match get("eval") {
                Some(e) => base.join(e),
                None if spec.data.len() == 1 => spec.data[0].clone(),
                None => {
                    let wanted = target_direction.as_ref().ok_or_else(|| {
                        Error::Config(format!("run {label}: several data directories, set `eval`"))
                    })?;
                    let mut found = None;
                    for d in &spec.data {
                        if &split_direction(d)? == wanted {
                            found = Some(d.clone());
                        }
                    }
                    found.ok_or_else(|| Error::Config(format!("run {label}: no data directory for {wanted}, set `eval`")))?
                }
            };
            must_exist(&eval, &format!("run {label}: eval directory"))?;
            let direction = split_direction(&eval)?;
            let report = match get("report") {
                None => true,
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("run {label}: `report` must be true or false")))?,
            };
            runs.push(ManifestRun {
                label: label.clone(),
                spec,
                parent_run,
                eval,
                direction,
                report,
            });
        }
        for r in &runs {
            if let Some(p) = &r.parent_run {
                if !labels.contains(p) {
                    return Err(Error::Config(format!("run {}: parent_run {p:?} is not a run", r.label)));
                }
            }
        }
        let n_seeds: usize = kv.parse_or("seeds", 10)?;
        let first: u64 = kv.parse_or("first_seed", 1)?;
        if n_seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        let baseline_run = kv.get("baseline_run").map(str::to_string);
        if let Some(b) = &baseline_run {
            if !labels.contains(b) {
                return Err(Error::Config(format!("baseline_run {b:?} is not a run")));
            }
        }
        let manifest = Self {
            output_dir: base.join(kv.require("output_dir")?),
            seeds: (first..first + n_seeds as u64).collect(),
            workers: kv.parse_or("workers", 1usize)?.max(1),
            target_direction,
            baseline_run,
            decode: DecodeOptions {
                beam_size: kv.parse_or("beam", 4)?,
                length_penalty: kv.parse_or("length_penalty", 0.6)?,
                max_len: None,
                threads: 1,
            },
            smooth: kv.parse_or("smooth", false)?,
            runs,
        };
        manifest.levels()?;
        Ok(manifest)
    }

    /// Dependency depth of every run; errors on a parent cycle.
    fn levels(&self) -> Result<Vec<usize>> {
        let index: BTreeMap<&str, usize> = self.runs.iter().enumerate().map(|(i, r)| (r.label.as_str(), i)).collect();
        let mut levels = Vec::new();
        for r in &self.runs {
            let mut depth = 0;
            let mut cur = r;
            while let Some(p) = &cur.parent_run {
                depth += 1;
                if depth > self.runs.len() {
                    return Err(Error::Config(format!("parent_run cycle through {}", r.label)));
                }
                cur = &self.runs[index[p.as_str()]];
            }
            levels.push(depth);
        }
        Ok(levels)
    }

    pub fn run_dir(&self, label: &str, seed: u64) -> PathBuf {
        self.output_dir.join("runs").join(label).join(format!("seed-{seed}"))
    }
}

#[derive(Serialize, Deserialize)]
struct StoredScore {
    direction: String,
    test_hash: String,
    score: RunScore,
}

fn score_run(m: &ExperimentManifest, run: &ManifestRun, seed: u64, dir: &Path) -> Result<StoredScore> {
    let (ck, tok) = load_with_tokenizers(&dir.join(BEST_CHECKPOINT))?;
    let test = read_split(&run.eval)?.test;
    let refs: Vec<&str> = test.targets().collect();
    let test_hash = test_set_hash(&refs);
    let bleu = if ck.is_multilingual() && !ck.directions.contains(&run.direction) {
        let r = zero_shot_eval(&ck, &tok, &run.direction, &test, m.decode.clone())?;
        r.runs[0].bleu.clone()
    } else {
        let model = ck.model()?;
        let target_lang = ck.is_multilingual().then(|| run.direction.tgt.clone());
        Translator {
            model: &model,
            tokenizers: &tok,
            target_lang,
            options: m.decode.clone(),
        }
        .bleu(&test, m.smooth)?
    };
    Ok(StoredScore {
        direction: run.direction.to_string(),
        test_hash,
        score: RunScore { seed, bleu },
    })
}

/// Trains (unless already complete) and scores one seed of one run.
fn run_job(m: &ExperimentManifest, run: &ManifestRun, seed: u64) -> Result<StoredScore> {
    let dir = m.run_dir(&run.label, seed);
    let score_path = dir.join(SCORE_FILE);
    if let Ok(text) = fs::read_to_string(&score_path) {
        if let Ok(s) = serde_json::from_str::<StoredScore>(&text) {
            return Ok(s);
        }
    }
    if !dir.join(BEST_CHECKPOINT).exists() {
        let mut spec = run.spec.clone();
        spec.train.seed = seed;
        spec.train.label = format!("{}/seed-{seed}", run.label);
        let parent = run
            .parent_run
            .as_ref()
            .map(|p| m.run_dir(p, seed).join(BEST_CHECKPOINT));
        if let Some(p) = &parent {
            if !p.exists() {
                return Err(Error::Protocol(format!("parent checkpoint {} is missing", p.display())));
            }
        }
        execute(&spec, &dir, parent.as_deref())?;
    }
    let s = score_run(m, run, seed, &dir)?;
    let text = serde_json::to_string_pretty(&s).expect("score serializes");
    fs::write(&score_path, text).map_err(|e| Error::Io {
        path: score_path,
        source: e,
    })?;
    Ok(s)
}

pub struct ExperimentResult {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<(String, u64, String)>,
    pub table: String,
    pub csv: String,
}

/// Runs every (run, seed) cell, parents before children, on a bounded
/// worker pool, then assembles the report.
pub fn run_experiment(m: &ExperimentManifest) -> Result<ExperimentResult> {
    fs::create_dir_all(&m.output_dir).map_err(|e| Error::Io {
        path: m.output_dir.clone(),
        source: e,
    })?;
    let levels = m.levels()?;
    let results: Mutex<BTreeMap<(usize, u64), std::result::Result<StoredScore, String>>> = Mutex::new(BTreeMap::new());
    for level in 0..=levels.iter().copied().max().unwrap_or(0) {
        let jobs: Vec<(usize, u64)> = (0..m.runs.len())
            .filter(|&i| levels[i] == level)
            .flat_map(|i| m.seeds.iter().map(move |&s| (i, s)))
            .collect();
        let next = AtomicUsize::new(0);
        thread::scope(|scope| {
            for _ in 0..m.workers.min(jobs.len()) {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(i, seed)) = jobs.get(k) else { break };
                    let r = run_job(m, &m.runs[i], seed).map_err(|e| e.to_string());
                    results.lock().unwrap().insert((i, seed), r);
                });
            }
        });
    }
    let results = results.into_inner().unwrap();
    let mut failures = Vec::new();
    let mut reports: Vec<Option<BleuReport>> = Vec::new();
    for (i, run) in m.runs.iter().enumerate() {
        let mut scores = Vec::new();
        let mut hash = String::new();
        for &seed in &m.seeds {
            match &results[&(i, seed)] {
                Ok(s) => {
                    hash = s.test_hash.clone();
                    scores.push(s.score.clone());
                }
                Err(e) => failures.push((run.label.clone(), seed, e.clone())),
            }
        }
        reports.push(if scores.is_empty() {
            None
        } else {
            Some(BleuReport::new(&run.label, run.direction.to_string(), hash, scores)?)
        });
    }
    let baseline = m.baseline_run.clone().or_else(|| {
        let target = m.target_direction.as_ref()?;
        let mut c = m
            .runs
            .iter()
            .filter(|r| r.spec.protocol == nmt_core::protocols::Protocol::Baseline && &r.direction == target);
        let first = c.next()?;
        c.next().is_none().then(|| first.label.clone())
    });
    let base_report = baseline
        .as_ref()
        .and_then(|b| m.runs.iter().position(|r| &r.label == b))
        .and_then(|i| reports[i].clone());
    let mut rows = Vec::new();
    for (run, report) in m.runs.iter().zip(&reports) {
        if !run.report {
            continue;
        }
        let is_target = m.target_direction.as_ref() == Some(&run.direction);
        let g = match (report, &base_report) {
            (Some(r), Some(b)) if is_target && Some(&run.label) != baseline.as_ref() => gain(r, b).ok(),
            _ => None,
        };
        rows.push(ReportRow {
            protocol: run.label.clone(),
            direction: run.direction.to_string(),
            report: report.clone(),
            gain: g,
        });
    }
    let table = render_table(&rows);
    let csv = render_csv(&rows);
    let write = |name: &str, text: &str| {
        let p = m.output_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })
    };
    write(REPORT_TABLE, &table)?;
    write(REPORT_CSV, &csv)?;
    let fail_text: String = failures
        .iter()
        .map(|(l, s, e)| format!("{l}\t{s}\t{e}\n"))
        .collect();
    write(FAILURES, &fail_text)?;
    Ok(ExperimentResult {
        rows,
        failures,
        table,
        csv,
    })
}
