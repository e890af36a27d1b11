use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

use s2gate::training::{validation_ratio, LogRecord};

use crate::run::{csv_table, Run};
use crate::settings::Settings;

#[derive(Args, Debug)]
pub struct RatioArgs {
    /// Training log (log.jsonl) of the ungated run
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Training log of the gated run
    #[arg(long)]
    pub gated: Option<PathBuf>,
    /// [default: force_mae]
    #[arg(long)]
    pub metric: Option<String>,
    /// [default: valid]
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Serialize)]
struct Row {
    step: usize,
    baseline: f64,
    gated: f64,
    /// `(baseline − gated)/baseline · 100`; positive when the gated run is lower
    ratio_percent: f64,
}

fn read_log(path: &str, split: &str, metric: &str) -> Result<BTreeMap<usize, f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: LogRecord = serde_json::from_str(line).with_context(|| format!("{path} line {}", k + 1))?;
        if r.split == split && r.metric == metric {
            out.insert(r.step, r.value);
        }
    }
    Ok(out)
}

pub fn execute(args: &RatioArgs, settings: &mut Settings, run: &mut Run) -> Result<()> {
    let baseline = settings.get_opt("baseline", args.baseline.as_ref().map(|p| p.display().to_string()))?;
    let gated = settings.get_opt("gated", args.gated.as_ref().map(|p| p.display().to_string()))?;
    let metric = settings.get("metric", args.metric.clone(), "force_mae".to_string())?;
    let split = settings.get("split", args.split.clone(), "valid".to_string())?;
    settings.check_unused()?;
    let (Some(baseline), Some(gated)) = (baseline, gated) else { bail!("--baseline and --gated are required") };
    let b = read_log(&baseline, &split, &metric)?;
    let g = read_log(&gated, &split, &metric)?;
    let steps: Vec<usize> = b.keys().filter(|s| g.contains_key(s)).copied().collect();
    if steps.is_empty() {
        bail!("the two logs share no {split} {metric} records");
    }
    let bs: Vec<f64> = steps.iter().map(|s| b[s]).collect();
    let gs: Vec<f64> = steps.iter().map(|s| g[s]).collect();
    let ratio = validation_ratio(&bs, &gs).map_err(|e| match e {
        s2gate::Error::UndefinedRatio { index } => anyhow::anyhow!("baseline {metric} is zero at step {}", steps[index]),
        other => other.into(),
    })?;
    let rows: Vec<Row> = steps
        .iter()
        .zip(bs.iter().zip(&gs))
        .zip(&ratio)
        .map(|((&step, (&baseline, &gated)), &ratio_percent)| Row { step, baseline, gated, ratio_percent })
        .collect();
    run.write("ratio.csv", csv_table(&rows)?)?;
    for r in &rows {
        println!("step {:>6} baseline {:.6} gated {:.6} ratio {:+.2}%", r.step, r.baseline, r.gated, r.ratio_percent);
    }
    Ok(())
}
