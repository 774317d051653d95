//! Score records, win/loss tables and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mann_whitney_u, median, summarize, Summary};
use crate::error::Result;

pub const PORTFOLIO: &str = "portfolio-olive";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

/// One episode's outcome. Wall time is kept separately in [`TimingRecord`]
/// so that score files are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: String,
    pub env: String,
    pub seed: u64,
    pub phase: Phase,
    pub episode: usize,
    pub score: f64,
    pub sim_calls: u64,
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub config: String,
    pub env: String,
    pub seed: u64,
    pub phase: Phase,
    pub episode: usize,
    pub wall_ms: f64,
    pub ms_per_action: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Win,
    Loss,
    Tie,
    /// One side has no evaluation scores for this env.
    Gap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinLossEntry {
    pub config_a: String,
    pub config_b: String,
    pub env: String,
    pub outcome: Outcome,
    pub u: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WinLossTable {
    pub alpha: f64,
    pub entries: Vec<WinLossEntry>,
}

impl WinLossTable {
    pub fn get(&self, a: &str, b: &str, env: &str) -> Option<&WinLossEntry> {
        self.entries.iter().find(|e| e.config_a == a && e.config_b == b && e.env == env)
    }

    /// (wins, losses) of `a` against `b` summed over environments.
    pub fn tally(&self, a: &str, b: &str) -> (usize, usize) {
        let mut t = (0, 0);
        for e in self.entries.iter().filter(|e| e.config_a == a && e.config_b == b) {
            match e.outcome {
                Outcome::Win => t.0 += 1,
                Outcome::Loss => t.1 += 1,
                _ => {}
            }
        }
        t
    }

    pub fn configs(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().map(|e| &e.config_a).collect();
        set.into_iter().cloned().collect()
    }
}

/// Evaluation scores grouped by (config, env).
pub fn eval_scores(records: &[RunRecord]) -> BTreeMap<(String, String), Vec<f64>> {
    let mut m: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.phase == Phase::Eval) {
        m.entry((r.config.clone(), r.env.clone())).or_default().push(r.score);
    }
    m
}

fn compare(a: &[f64], b: &[f64], alpha: f64) -> Result<(Outcome, f64, f64)> {
    let t = mann_whitney_u(a, b)?;
    let (ma, mb) = (median(a).unwrap_or(0.0), median(b).unwrap_or(0.0));
    let outcome = if t.p < alpha && ma > mb {
        Outcome::Win
    } else if t.p < alpha && ma < mb {
        Outcome::Loss
    } else {
        Outcome::Tie
    };
    Ok((outcome, t.u, t.p))
}

/// Pairwise Mann-Whitney comparison of every config against every other on
/// every env. A win needs p < `alpha` and a larger median. When both
/// `passive-olive` and `active-olive` are present a portfolio row is added:
/// it wins where either variant wins and loses only where both lose.
pub fn build_win_loss(records: &[RunRecord], alpha: f64) -> Result<WinLossTable> {
    let scores = eval_scores(records);
    let configs: BTreeSet<String> = records.iter().map(|r| r.config.clone()).collect();
    let envs: BTreeSet<String> = records.iter().map(|r| r.env.clone()).collect();
    let mut entries = Vec::new();
    for a in &configs {
        for b in configs.iter().filter(|b| *b != a) {
            for env in &envs {
                let (sa, sb) = (scores.get(&(a.clone(), env.clone())), scores.get(&(b.clone(), env.clone())));
                let entry = match (sa, sb) {
                    (Some(sa), Some(sb)) => {
                        let (outcome, u, p) = compare(sa, sb, alpha)?;
                        WinLossEntry { config_a: a.clone(), config_b: b.clone(), env: env.clone(), outcome, u: Some(u), p: Some(p) }
                    }
                    _ => WinLossEntry {
                        config_a: a.clone(),
                        config_b: b.clone(),
                        env: env.clone(),
                        outcome: Outcome::Gap,
                        u: None,
                        p: None,
                    },
                };
                entries.push(entry);
            }
        }
    }
    let mut table = WinLossTable { alpha, entries };
    add_portfolio(&mut table, &configs, &envs);
    Ok(table)
}

fn add_portfolio(table: &mut WinLossTable, configs: &BTreeSet<String>, envs: &BTreeSet<String>) {
    let (pa, aa) = ("passive-olive", "active-olive");
    if !configs.contains(pa) || !configs.contains(aa) {
        return;
    }
    let mut extra = Vec::new();
    for b in configs.iter().filter(|b| *b != pa && *b != aa) {
        for env in envs {
            let (x, y) = (table.get(pa, b, env).map(|e| e.outcome), table.get(aa, b, env).map(|e| e.outcome));
            let outcome = match (x, y) {
                (Some(Outcome::Gap), _) | (_, Some(Outcome::Gap)) | (None, _) | (_, None) => Outcome::Gap,
                (Some(Outcome::Win), _) | (_, Some(Outcome::Win)) => Outcome::Win,
                (Some(Outcome::Loss), Some(Outcome::Loss)) => Outcome::Loss,
                _ => Outcome::Tie,
            };
            let flip = |o: Outcome| match o {
                Outcome::Win => Outcome::Loss,
                Outcome::Loss => Outcome::Win,
                o => o,
            };
            extra.push(WinLossEntry { config_a: PORTFOLIO.into(), config_b: b.clone(), env: env.clone(), outcome, u: None, p: None });
            extra.push(WinLossEntry { config_a: b.clone(), config_b: PORTFOLIO.into(), env: env.clone(), outcome: flip(outcome), u: None, p: None });
        }
    }
    table.entries.extend(extra);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub env: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub max: f64,
}

pub fn summary_rows(records: &[RunRecord]) -> Vec<SummaryRow> {
    eval_scores(records)
        .into_iter()
        .filter_map(|((config, env), v)| {
            summarize(&v).map(|Summary { n, mean, stderr, max }| SummaryRow { config, env, n, mean, stderr, max })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<T>, _> = r.deserialize().collect();
    Ok(rows?)
}

/// Plain-text report: summary table and win/loss tallies.
pub fn render_report(records: &[RunRecord], table: &WinLossTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "evaluation scores (mean ± stderr, max)");
    for r in summary_rows(records) {
        let _ = writeln!(s, "  {:<24} {:<28} {:>10.3} ± {:<8.3} max {:.3}  (n={})", r.config, r.env, r.mean, r.stderr, r.max, r.n);
    }
    let configs = table.configs();
    if !configs.is_empty() {
        let _ = writeln!(s, "\nwins (row) / losses (column) over environments, p < {}", table.alpha);
        let _ = write!(s, "  {:<24}", "");
        for b in &configs {
            let _ = write!(s, " {:>16}", b);
        }
        let _ = writeln!(s);
        for a in &configs {
            let _ = write!(s, "  {:<24}", a);
            for b in &configs {
                if a == b {
                    let _ = write!(s, " {:>16}", "-");
                } else {
                    let (w, l) = table.tally(a, b);
                    let _ = write!(s, " {:>16}", format!("{w}/{l}"));
                }
            }
            let _ = writeln!(s);
        }
        let gaps = table.entries.iter().filter(|e| e.outcome == Outcome::Gap).count();
        if gaps > 0 {
            let _ = writeln!(s, "\n  {gaps} comparisons missing scores (gaps)");
        }
    }
    s
}

/// Writes scores.csv, timings.csv (if any), summary.csv, winloss.csv and
/// report.txt into `dir`.
pub fn emit_reports(dir: &Path, records: &[RunRecord], timings: &[TimingRecord], table: &WinLossTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("scores.csv"), records)?;
    if !timings.is_empty() {
        write_csv(&dir.join("timings.csv"), timings)?;
    }
    write_csv(&dir.join("summary.csv"), &summary_rows(records))?;
    write_csv(&dir.join("winloss.csv"), &table.entries)?;
    fs::write(dir.join("report.txt"), render_report(records, table))?;
    Ok(())
}

/// Rebuilds summary, win/loss and text report from an existing scores.csv.
pub fn report_from_dir(dir: &Path, alpha: f64) -> Result<String> {
    let records: Vec<RunRecord> = read_csv(&dir.join("scores.csv"))?;
    let table = build_win_loss(&records, alpha)?;
    write_csv(&dir.join("summary.csv"), &summary_rows(&records))?;
    write_csv(&dir.join("winloss.csv"), &table.entries)?;
    let text = render_report(&records, &table);
    fs::write(dir.join("report.txt"), &text)?;
    Ok(text)
}
