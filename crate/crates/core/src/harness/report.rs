//! Aggregates run directories into learning curves and a final-metric
//! comparison table.
//!
//! `curves.csv` is long format: `config,round,metric,mean,sd,n`.
//! `summary.csv` has one row per config with mean and sample sd of the final
//! offline and online metrics, Welch p-values against the baseline config,
//! and a marker: `▲` significantly above the baseline, `▼` below.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::eval::{mean, std_dev, ttest_two_sided, SIGNIFICANCE_LEVEL};

use super::experiment::{RunManifest, RunStatus, MANIFEST_FILE, METRICS_FILE};
use super::HarnessError;

const FIXED_COLUMNS: [&str; 3] = ["round", "offline_ndcg", "online_cumulative"];

#[derive(Debug, Clone, PartialEq)]
struct RunMetrics {
    rounds: Vec<usize>,
    offline: Vec<Option<f64>>,
    online: Vec<f64>,
}

impl RunMetrics {
    fn final_offline(&self) -> Option<f64> {
        self.offline.iter().rev().find_map(|v| *v)
    }
    fn final_online(&self) -> f64 {
        self.online.last().copied().unwrap_or(0.0)
    }
}

fn parse_metrics(path: &Path) -> Result<RunMetrics, HarnessError> {
    let bad = |m: String| HarnessError::Data(format!("{}: {m}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header.len() < 3 || header[..3] != FIXED_COLUMNS {
        return Err(bad(format!("incompatible metrics schema {header:?}")));
    }
    let mut m = RunMetrics {
        rounds: Vec::new(),
        offline: Vec::new(),
        online: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(format!("row {} has {} cells", i + 2, cells.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", i + 2)))
        };
        m.rounds.push(
            cells[0]
                .parse()
                .map_err(|e| bad(format!("row {}: {e}", i + 2)))?,
        );
        m.offline.push(if cells[1].is_empty() {
            None
        } else {
            Some(num(cells[1])?)
        });
        m.online.push(num(cells[2])?);
    }
    Ok(m)
}

fn collect_run_dirs(input: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    if input.join(MANIFEST_FILE).is_file() {
        out.push(input.to_path_buf());
        return Ok(());
    }
    let entries =
        fs::read_dir(input).map_err(|e| HarnessError::Data(format!("{}: {e}", input.display())))?;
    let mut children: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        collect_run_dirs(&c, out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub runs: usize,
    pub offline_mean: f64,
    pub offline_sd: f64,
    pub online_mean: f64,
    pub online_sd: f64,
    pub p_offline: Option<f64>,
    pub p_online: Option<f64>,
    pub marker: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub baseline: String,
    pub rows: Vec<SummaryRow>,
    pub curves_path: PathBuf,
    pub summary_path: PathBuf,
}

fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        0.0
    } else {
        std_dev(xs)
    }
}

/// Reads every completed run under `inputs`, groups runs by config name and
/// writes `curves.csv` and `summary.csv` to `out_dir`. The baseline defaults
/// to the first config in name order.
pub fn report(
    inputs: &[PathBuf],
    out_dir: &Path,
    baseline: Option<&str>,
) -> Result<ReportOutput, HarnessError> {
    let mut dirs = Vec::new();
    for i in inputs {
        collect_run_dirs(i, &mut dirs)?;
    }
    let mut groups: BTreeMap<String, Vec<RunMetrics>> = BTreeMap::new();
    for d in &dirs {
        let manifest = RunManifest::load(&d.join(MANIFEST_FILE))?;
        if manifest.status != RunStatus::Completed {
            log::warn!("skipping {} ({:?})", d.display(), manifest.status);
            continue;
        }
        let metrics = parse_metrics(&d.join(METRICS_FILE))?;
        groups
            .entry(manifest.config.name)
            .or_default()
            .push(metrics);
    }
    if groups.is_empty() {
        return Err(HarnessError::Data("no completed runs found".into()));
    }
    for (name, runs) in &groups {
        if runs.iter().any(|r| r.rounds != runs[0].rounds) {
            return Err(HarnessError::Data(format!(
                "config {name}: runs disagree on the evaluated rounds"
            )));
        }
    }

    let baseline = match baseline {
        Some(b) if groups.contains_key(b) => b.to_string(),
        Some(b) => return Err(HarnessError::Config(format!("baseline {b} has no runs"))),
        None => groups.keys().next().cloned().unwrap_or_default(),
    };

    let mut curves = String::from("config,round,metric,mean,sd,n\n");
    for (name, runs) in &groups {
        for (i, &round) in runs[0].rounds.iter().enumerate() {
            let offline: Vec<f64> = runs.iter().filter_map(|r| r.offline[i]).collect();
            if offline.len() == runs.len() {
                curves += &format!(
                    "{name},{round},offline_ndcg,{},{},{}\n",
                    mean(&offline),
                    sd(&offline),
                    runs.len()
                );
            }
            let online: Vec<f64> = runs.iter().map(|r| r.online[i]).collect();
            curves += &format!(
                "{name},{round},online_cumulative,{},{},{}\n",
                mean(&online),
                sd(&online),
                runs.len()
            );
        }
    }

    let finals = |runs: &[RunMetrics]| -> (Vec<f64>, Vec<f64>) {
        (
            runs.iter()
                .map(|r| r.final_offline().unwrap_or(f64::NAN))
                .collect(),
            runs.iter().map(RunMetrics::final_online).collect(),
        )
    };
    let (base_off, base_on) = finals(&groups[&baseline]);
    let mut rows = Vec::new();
    for (name, runs) in &groups {
        let (off, on) = finals(runs);
        let (p_offline, p_online) = if *name == baseline {
            (None, None)
        } else {
            (
                ttest_two_sided(&off, &base_off).ok(),
                ttest_two_sided(&on, &base_on).ok(),
            )
        };
        let marker = match p_offline {
            Some(p) if p < SIGNIFICANCE_LEVEL && mean(&off) > mean(&base_off) => "▲",
            Some(p) if p < SIGNIFICANCE_LEVEL => "▼",
            _ => "",
        };
        rows.push(SummaryRow {
            config: name.clone(),
            runs: runs.len(),
            offline_mean: mean(&off),
            offline_sd: sd(&off),
            online_mean: mean(&on),
            online_sd: sd(&on),
            p_offline,
            p_online,
            marker,
        });
    }

    let cell = |p: Option<f64>| p.map_or(String::new(), |v| v.to_string());
    let mut summary = String::from(
        "config,runs,offline_mean,offline_sd,online_mean,online_sd,p_offline,p_online,marker\n",
    );
    for r in &rows {
        summary += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.config,
            r.runs,
            r.offline_mean,
            r.offline_sd,
            r.online_mean,
            r.online_sd,
            cell(r.p_offline),
            cell(r.p_online),
            r.marker
        );
    }

    fs::create_dir_all(out_dir)?;
    let curves_path = out_dir.join("curves.csv");
    let summary_path = out_dir.join("summary.csv");
    fs::write(&curves_path, curves)?;
    fs::write(&summary_path, summary)?;
    Ok(ReportOutput {
        baseline,
        rows,
        curves_path,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::experiment::run_config;

    fn config(dir: &Path, name: &str, scheme: &str) -> ExperimentConfig {
        let text = format!(
            r#"
name = "{name}"
seeds = [1, 2, 3]
[data]
kind = "synthetic"
queries = 20
docs_per_query = 10
feature_count = 5
[partition]
scheme = "{scheme}"
clients = 5
[federation]
rounds = 4
"#
        );
        let mut c = ExperimentConfig::from_toml(&text).unwrap();
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = report(&[dir.path().to_path_buf()], &dir.path().join("out"), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn identical_runs_have_zero_sd() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), "same", "iid");
        let mut c = c;
        c.seeds = vec![5];
        let runs = run_config(&c, Some(1)).unwrap();
        let copy = dir.path().join("same_copy");
        fs::create_dir_all(&copy).unwrap();
        for f in [MANIFEST_FILE, METRICS_FILE] {
            fs::copy(runs[0].join(f), copy.join(f)).unwrap();
        }
        let out = report(&[dir.path().to_path_buf()], &dir.path().join("out"), None).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].runs, 2);
        assert_eq!(out.rows[0].offline_sd, 0.0);
        let curves = fs::read_to_string(out.curves_path).unwrap();
        for line in curves.lines().skip(1) {
            assert_eq!(line.split(',').nth(4), Some("0"), "{line}");
        }
    }

    #[test]
    fn comparison_row_has_p_value() {
        let dir = tempfile::tempdir().unwrap();
        run_config(&config(dir.path(), "a_iid", "iid"), Some(1)).unwrap();
        run_config(&config(dir.path(), "b_skew", "label-skew"), Some(1)).unwrap();
        let out = report(
            &[dir.path().to_path_buf()],
            &dir.path().join("out"),
            Some("a_iid"),
        )
        .unwrap();
        assert_eq!(out.baseline, "a_iid");
        let row = out.rows.iter().find(|r| r.config == "b_skew").unwrap();
        assert!(row.p_offline.is_some());
        let summary = fs::read_to_string(out.summary_path).unwrap();
        assert!(summary.starts_with("config,runs,offline_mean"));
        assert_eq!(summary.lines().count(), 3);
    }

    #[test]
    fn mixed_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), "x", "iid");
        c.seeds = vec![1];
        let runs = run_config(&c, Some(1)).unwrap();
        fs::write(runs[0].join(METRICS_FILE), "step,loss\n1,0.5\n").unwrap();
        assert!(report(&[dir.path().to_path_buf()], &dir.path().join("out"), None).is_err());
    }
}
