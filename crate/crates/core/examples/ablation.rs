//! Ablation sweep on the synthetic graph.
//!
//! Usage: `ablation [seeds=N] [modes=S,S+V+T] [section.key=value ...]`, where
//! keys address fields of `RunSettings` or `SyntheticConfig` (`kg.` prefix).

use std::time::Instant;

use imf_core::model::Ablation;
use imf_core::synthetic::{generate, RunSettings, SyntheticConfig};
use serde_json::Value;

fn set(root: &mut Value, path: &str, raw: &str) {
    let mut node = root;
    for key in path.split('.') {
        node = node.get_mut(key).unwrap_or_else(|| panic!("unknown key {path}"));
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
}

fn main() -> imf_core::Result<()> {
    let mut settings = serde_json::to_value(RunSettings::default())?;
    let mut kg_cfg = serde_json::to_value(SyntheticConfig::default())?;
    let mut seeds = 3u64;
    let mut modes = vec![Ablation::S, Ablation::SV, Ablation::ST, Ablation::SVT];
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        match k {
            "seeds" => seeds = v.parse().expect("seed count"),
            "modes" => modes = v.split(',').map(|m| m.parse()).collect::<Result<_, _>>()?,
            _ => match k.strip_prefix("kg.") {
                Some(rest) => set(&mut kg_cfg, rest, v),
                None => set(&mut settings, k, v),
            },
        }
    }
    let settings: RunSettings = serde_json::from_value(settings)?;
    let kg = generate(&serde_json::from_value(kg_cfg)?)?;
    let mut sums = vec![0.0; modes.len()];
    for seed in 0..seeds {
        let mut line = format!("seed {seed}:");
        for (i, &mode) in modes.iter().enumerate() {
            let t = Instant::now();
            let out = kg.run(mode, seed, &settings)?;
            let mrr = out.best_valid_mrr.unwrap_or(f64::NAN);
            sums[i] += mrr;
            line += &format!(
                "  {mode} {mrr:.3} (ep {}, {:.0}s)",
                out.best_epoch,
                t.elapsed().as_secs_f64()
            );
        }
        println!("{line}");
    }
    let means: Vec<String> = modes
        .iter()
        .zip(&sums)
        .map(|(m, s)| format!("{m} {:.3}", s / seeds as f64))
        .collect();
    println!("mean: {}", means.join("  "));
    Ok(())
}
