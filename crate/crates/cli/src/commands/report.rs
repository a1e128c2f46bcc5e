use std::io::BufRead;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use usp_core::reward::RewardRecord;

use crate::Status;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// An `evaluate` output directory or a `reward` JSONL file.
    pub input: PathBuf,
}

pub fn run(args: Args) -> Result<Status> {
    if args.input.is_dir() {
        let csv_path = args.input.join("aggregate.csv");
        let mut r = csv::Reader::from_path(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
        println!("{:<20} {:>12} {:>8}", "metric", "value", "count");
        for rec in r.records() {
            let rec = rec?;
            let value = rec.get(1).unwrap_or("");
            let shown = value.parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or_else(|_| "-".into());
            println!("{:<20} {:>12} {:>8}", rec.get(0).unwrap_or(""), shown, rec.get(2).unwrap_or(""));
        }
        return Ok(Status::Success);
    }
    let file = std::fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RewardRecord =
            serde_json::from_str(&line).with_context(|| format!("line {} is not a reward record", i + 1))?;
        records.push(rec);
    }
    if records.is_empty() {
        bail!("{} holds no reward records", args.input.display());
    }
    let n = records.len() as f64;
    let mean = |f: fn(&RewardRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let mut dialogues: Vec<&str> = records.iter().map(|r| r.dialogue_id.as_str()).collect();
    dialogues.sort_unstable();
    dialogues.dedup();
    println!("records    {}", records.len());
    println!("dialogues  {}", dialogues.len());
    println!("mean r_cc  {:.4}", mean(|r| r.r_cc));
    println!("mean r_ai  {:.4}", mean(|r| r.r_ai));
    println!("mean r     {:.4}", mean(|r| r.r));
    Ok(Status::Success)
}
