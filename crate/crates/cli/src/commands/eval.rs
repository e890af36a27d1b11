use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;
use std::path::PathBuf;

use s2gate::structure::AtomicConfiguration;
use s2gate::training::{predict_all, tail_metrics, Labels, Split};

use crate::inputs::{load_dataset, load_model, DataSpec};
use crate::run::{csv_table, jsonl, Run};
use crate::settings::Settings;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Extended-XYZ file, synth:morse or synth:trimer
    #[arg(long)]
    pub data: Option<String>,
    /// all, train, valid or test [default: all]
    #[arg(long)]
    pub split: Option<String>,
    /// Frames to synthesise [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
    /// [default: 500]
    #[arg(long)]
    pub noise_temp: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub morse_depth: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct MetricRecord {
    pub split: String,
    /// `energy` (per frame, kcal/mol) or `forces` (per component, kcal/mol/Å)
    pub quantity: String,
    pub metric: String,
    pub value: f64,
}

/// MAE, RMSE, Q95, Q99 and MAX of energy and force errors.
pub fn error_records(split: &str, pred: &[Labels], target: &[Labels]) -> Result<Vec<MetricRecord>> {
    let energy: Vec<f64> = pred.iter().zip(target).map(|(p, t)| (p.energy - t.energy).abs()).collect();
    let forces: Vec<f64> = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.forces.iter().zip(&t.forces).flat_map(|(a, b)| (a - b).iter().map(|c| c.abs()).collect::<Vec<_>>()))
        .collect();
    let mut out = Vec::new();
    for (quantity, errors) in [("energy", energy), ("forces", forces)] {
        let tail = tail_metrics(&errors)?;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
        for (metric, value) in [("MAE", tail.mae), ("RMSE", rmse), ("Q95", tail.q95), ("Q99", tail.q99), ("MAX", tail.max)] {
            out.push(MetricRecord {
                split: split.to_string(),
                quantity: quantity.to_string(),
                metric: metric.to_string(),
                value,
            });
        }
    }
    Ok(out)
}

pub fn execute(args: &EvalArgs, settings: &mut Settings, run: &mut Run) -> Result<()> {
    let checkpoint = settings.get_opt("checkpoint", args.checkpoint.as_ref().map(|p| p.display().to_string()))?;
    let data = settings.get_opt("data", args.data.clone())?;
    let split = settings.get("split", args.split.clone(), "all".to_string())?;
    let spec = DataSpec {
        n: settings.get("n", args.n, 1000)?,
        noise_t: settings.get("noise_temp", args.noise_temp, 500.0)?,
        morse_depth: settings.get("morse_depth", args.morse_depth, 1.0)?,
        seed: settings.get("seed", args.seed, 0)?,
    };
    settings.check_unused()?;
    let (Some(checkpoint), Some(data)) = (checkpoint, data) else { bail!("--checkpoint and --data are required") };
    let model = load_model(checkpoint.as_ref())?;
    let dataset = load_dataset(&data, &spec)?;
    let splits: Vec<(&str, Vec<AtomicConfiguration>)> = match split.as_str() {
        "all" => vec![(
            "all",
            dataset.train.iter().chain(&dataset.valid).chain(&dataset.test).cloned().collect(),
        )],
        "train" => vec![("train", dataset.split(Split::Train).to_vec())],
        "valid" => vec![("valid", dataset.split(Split::Valid).to_vec())],
        "test" => vec![("test", dataset.split(Split::Test).to_vec())],
        other => bail!("unknown split {other:?}; use all, train, valid or test"),
    };
    let mut records = Vec::new();
    for (name, frames) in splits {
        if frames.is_empty() {
            bail!("split {name} has no frames");
        }
        let pred = predict_all(&model, &frames)?;
        let target = frames.iter().map(Labels::of).collect::<Result<Vec<_>, _>>()?;
        records.extend(error_records(name, &pred, &target)?);
    }
    run.write("metrics.jsonl", jsonl(&records)?)?;
    run.write("metrics.csv", csv_table(&records)?)?;
    for r in &records {
        println!("{:6} {:7} {:5} {:.6}", r.split, r.quantity, r.metric, r.value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn perfect_predictions_give_zeros() {
        let l = Labels { energy: -3.0, forces: vec![Vector3::new(1.0, 2.0, 3.0)] };
        let r = error_records("all", &[l.clone()], &[l]).unwrap();
        assert_eq!(r.len(), 10);
        assert!(r.iter().all(|m| m.value == 0.0));
    }

    #[test]
    fn matches_hand_computed_errors() {
        let p = Labels { energy: 1.0, forces: vec![Vector3::new(0.0, 0.0, 0.0)] };
        let t = Labels { energy: 3.0, forces: vec![Vector3::new(1.0, -2.0, 3.0)] };
        let r = error_records("x", &[p], &[t]).unwrap();
        let get = |q: &str, m: &str| r.iter().find(|x| x.quantity == q && x.metric == m).unwrap().value;
        assert_eq!(get("energy", "MAE"), 2.0);
        assert_eq!(get("forces", "MAE"), 2.0);
        assert_eq!(get("forces", "MAX"), 3.0);
        // linear interpolation over sorted [1, 2, 3] at rank 1.9
        assert!((get("forces", "Q95") - 2.9).abs() < 1e-12);
    }
}
