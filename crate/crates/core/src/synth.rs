//! Synthetic recidivism-style tables for smoke tests and examples. Group
//! membership shifts feature distributions, so rule coverage differs by group.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{BinarizeSpec, DatasetManifest, GroupRule, SensitiveSpec};
use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "reoffend";

/// CSV text with columns age, priors, charge, sex, race, reoffend.
pub fn generate_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("age,priors,charge,sex,race,reoffend\n");
    for _ in 0..n {
        let race = match rng.gen_range(0..10) {
            0..=4 => "A",
            5..=7 => "B",
            _ => "C",
        };
        let sex = if rng.gen_bool(0.8) { "Male" } else { "Female" };
        let young = rng.gen_bool(if race == "B" { 0.5 } else { 0.3 });
        let age: u32 = if young {
            rng.gen_range(18..26)
        } else {
            rng.gen_range(26..70)
        };
        let prior_rate = match race {
            "B" => 0.45,
            "C" => 0.3,
            _ => 0.2,
        };
        let mut priors = 0u32;
        while priors < 15 && rng.gen_bool(prior_rate) {
            priors += 1;
        }
        let felony = rng.gen_bool(if sex == "Male" { 0.65 } else { 0.45 });
        let score = -1.2 + 0.45 * priors as f64 + if young { 0.9 } else { 0.0 }
            + if felony { 0.4 } else { 0.0 }
            - 0.01 * age as f64;
        let p = 1.0 / (1.0 + (-score).exp());
        let y = rng.gen_bool(p.clamp(0.02, 0.98));
        writeln!(
            out,
            "{age},{priors},{},{sex},{race},{}",
            if felony { "F" } else { "M" },
            if y { "yes" } else { "no" }
        )
        .expect("write to string");
    }
    out
}

/// Manifest for a CSV produced by [`generate_csv`], with sensitive
/// attributes Race (A, B, Other), Sex and Age (<=25, 26-45, >45).
pub fn manifest(name: &str, csv: PathBuf) -> DatasetManifest {
    DatasetManifest {
        name: name.to_string(),
        csv,
        label_column: LABEL_COLUMN.to_string(),
        positive_value: "yes".to_string(),
        binarize: BinarizeSpec {
            numeric_columns: Some(vec!["age".into(), "priors".into()]),
            categorical_columns: Some(vec!["charge".into(), "sex".into()]),
            n_bins: 3,
            sensitive: vec![
                SensitiveSpec {
                    attribute: "Race".into(),
                    column: "race".into(),
                    groups: GroupRule::Categories {
                        keep: vec!["A".into(), "B".into()],
                        other: true,
                    },
                },
                SensitiveSpec {
                    attribute: "Sex".into(),
                    column: "sex".into(),
                    groups: GroupRule::Categories {
                        keep: vec!["Male".into(), "Female".into()],
                        other: false,
                    },
                },
                SensitiveSpec {
                    attribute: "Age".into(),
                    column: "age".into(),
                    groups: GroupRule::Cuts {
                        edges: vec![25.0, 45.0],
                        labels: Some(vec!["Young".into(), "Middle".into(), "Old".into()]),
                    },
                },
            ],
        },
    }
}

/// Writes `<name>.csv` and `<name>.json` into `dir`; returns the manifest path.
pub fn write_synthetic(dir: &Path, name: &str, n: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{name}.csv"));
    fs::write(&csv, generate_csv(n, seed)).map_err(|e| Error::io(&csv, e))?;
    let m = manifest(name, PathBuf::from(format!("{name}.csv")));
    let path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
