//! Versioned CSV serialization of [`PoisonedDataset`].
//!
//! ```text
//! #format=pgrl-dataset
//! #version=1
//! #trigger={"kind":"patch","coords":[...],"value":1.0}
//! n,in_dim,k,alpha,target,attack_kind
//! 1000,64,4,0.05,2,pattern
//! x0,x1,...,x63,y,flag,original_label
//! 0.41,0.57,...,0.62,2,poisoned,1
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttackKind, LabeledSample, PoisonedDataset, SampleFlag, Trigger};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "#format=pgrl-dataset";

pub fn to_csv(data: &PoisonedDataset) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "#version={DATASET_FORMAT_VERSION}").unwrap();
    writeln!(out, "#trigger={}", serde_json::to_string(&data.trigger)?).unwrap();
    writeln!(out, "n,in_dim,k,alpha,target,attack_kind").unwrap();
    writeln!(
        out,
        "{},{},{},{},{},{}",
        data.len(),
        data.in_dim,
        data.classes,
        data.alpha,
        data.target,
        data.attack.as_str()
    )
    .unwrap();
    let cols: Vec<String> = (0..data.in_dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "{},y,flag,original_label", cols.join(",")).unwrap();
    for ((s, flag), orig) in data.samples.iter().zip(&data.flags).zip(&data.original_labels) {
        for v in &s.x {
            write!(out, "{v},").unwrap();
        }
        writeln!(out, "{},{},{}", s.y, flag.as_str(), orig).unwrap();
    }
    Ok(out)
}

pub fn from_csv(text: &str) -> Result<PoisonedDataset> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| Error::Parse(format!("dataset file truncated before {what}")))
    };
    let (_, magic) = next("format line")?;
    if magic.trim() != MAGIC {
        return Err(Error::Parse("not a pgrl dataset file".into()));
    }
    let (_, version) = next("version line")?;
    let version: u32 = version
        .trim()
        .strip_prefix("#version=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse("malformed version line".into()))?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported dataset version {version}")));
    }
    let (_, trig) = next("trigger line")?;
    let trigger: Trigger = serde_json::from_str(
        trig.trim().strip_prefix("#trigger=").ok_or_else(|| Error::Parse("missing trigger line".into()))?,
    )?;
    next("header names")?;
    let (_, header) = next("header values")?;
    let h: Vec<&str> = header.trim().split(',').collect();
    if h.len() != 6 {
        return Err(Error::Parse("header must have 6 fields".into()));
    }
    let num = |s: &str, name: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse(format!("bad header field {name}: `{s}`")))
    };
    let n = num(h[0], "n")?;
    let in_dim = num(h[1], "in_dim")?;
    let classes = num(h[2], "k")?;
    let alpha: f64 = h[3].parse().map_err(|_| Error::Parse(format!("bad alpha `{}`", h[3])))?;
    let target = num(h[4], "target")?;
    let attack = AttackKind::parse(h[5])?;
    next("column names")?;

    let mut samples = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    let mut original_labels = Vec::with_capacity(n);
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != in_dim + 3 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 1,
                in_dim + 3,
                fields.len()
            )));
        }
        let x = fields[..in_dim]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("line {}: bad value `{f}`", lineno + 1))))
            .collect::<Result<Vec<_>>>()?;
        samples.push(LabeledSample { x, y: num(fields[in_dim], "y")? });
        flags.push(SampleFlag::parse(fields[in_dim + 1])?);
        original_labels.push(num(fields[in_dim + 2], "original_label")?);
    }
    if samples.len() != n {
        return Err(Error::Parse(format!("header declares {n} rows, found {}", samples.len())));
    }
    let data = PoisonedDataset { in_dim, classes, samples, flags, original_labels, alpha, target, attack, trigger };
    data.validate()?;
    Ok(data)
}

pub fn write_dataset(path: &Path, data: &PoisonedDataset) -> Result<()> {
    fs::write(path, to_csv(data)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<PoisonedDataset> {
    from_csv(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_adapblend_attack, gen_synthetic, BlendTrigger, Geometry, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn rejects_wrong_version() {
        let d = gen_synthetic(&SynthConfig::new(3, 2, 16, 1, Geometry::Blobs)).unwrap();
        let text = to_csv(&PoisonedDataset::clean(&d)).unwrap().replace("#version=1", "#version=9");
        assert!(matches!(from_csv(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_row_count_mismatch() {
        let d = gen_synthetic(&SynthConfig::new(3, 2, 16, 1, Geometry::Blobs)).unwrap();
        let text = to_csv(&PoisonedDataset::clean(&d)).unwrap();
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(from_csv(&truncated).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn csv_round_trip_is_lossless(seed in 0u64..1000, alpha in 0.0f64..0.3) {
            let d = gen_synthetic(&SynthConfig::new(10, 3, 16, seed, Geometry::GridPatterns)).unwrap();
            let p = apply_adapblend_attack(&d, alpha, 1, BlendTrigger::random(16, 0.2, 0.6, seed), 0.05, seed).unwrap();
            let back = from_csv(&to_csv(&p).unwrap()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
