use std::fs;
use std::path::Path;

use hybrid_icd::pipeline::{self, RunConfig};
use hybrid_icd::synth::write_synthetic;
use hybrid_icd::Error;

fn small_config(dir: &Path, n_bootstrap: usize) -> RunConfig {
    let manifest = write_synthetic(dir, "toy", 200, 11).unwrap();
    let text = format!(
        r#"{{
            "dataset": {:?},
            "n_bootstrap": {n_bootstrap},
            "seed": 5,
            "search": {{"time_limit": null, "node_limit": 2000}},
            "anneal": {{"iterations": 200}},
            "forest": {{"n_trees": 10}},
            "grids": {{"c_min": [0.0, 0.5], "anneal_set": [0.0, 0.01], "anneal_list": [0.0]}},
            "mitigation": {{"attributes": ["Race"], "eta": 0.1, "eta_sweep": [0.2]}}
        }}"#,
        manifest.to_str().unwrap()
    );
    RunConfig::from_json(&text).unwrap()
}

fn report_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(out.join("report"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn end_to_end_and_report_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 3);
    let out = dir.path().join("out");
    pipeline::run_all(&cfg, &out).unwrap();

    let names: Vec<String> = report_bytes(&out).into_iter().map(|f| f.0).collect();
    for f in [
        pipeline::FIG2,
        pipeline::FIG3,
        pipeline::FIG4,
        pipeline::FIG5_6,
        pipeline::FIG7,
        pipeline::GROWTH_REPORT,
        pipeline::TABLE1,
        pipeline::VERDICTS,
    ] {
        assert!(names.iter().any(|n| n == f), "missing {f}");
    }
    let dist = fs::read_to_string(out.join("audit").join(pipeline::DISTRIBUTIONS)).unwrap();
    let header = dist.lines().next().unwrap();
    for col in ["dataset", "method", "hyperparameters", "seed", "split_seed"] {
        assert!(header.split(',').any(|c| c == col), "{col} not in {header}");
    }
    assert!(dist.lines().count() > 10);

    // families: 4 unconstrained + 2 exact methods x Race x 2 etas
    let fams = fs::read_dir(out.join("collections")).unwrap().count();
    assert_eq!(fams, 8);

    let first = report_bytes(&out);
    pipeline::cmd_report(&cfg, &out).unwrap();
    assert_eq!(first, report_bytes(&out));

    // the whole run is reproducible from the seed
    let out2 = dir.path().join("out2");
    pipeline::run_all(&cfg, &out2).unwrap();
    assert_eq!(first, report_bytes(&out2));
}

#[test]
fn missing_upstream_artifacts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0);
    let out = dir.path().join("out");
    let err = pipeline::cmd_audit(&cfg, &out).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { .. }), "{err}");

    pipeline::cmd_prepare(&cfg, &out).unwrap();
    pipeline::cmd_mine(&cfg, &out).unwrap();
    pipeline::cmd_train(&cfg, &out).unwrap();
    let err = pipeline::cmd_audit(&cfg, &out).unwrap_err();
    assert!(err.to_string().contains("bootstrap"), "{err}");
    pipeline::cmd_bootstrap(&cfg, &out).unwrap();
    pipeline::cmd_audit(&cfg, &out).unwrap();
}

#[test]
fn unknown_attribute_is_rejected_at_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 0);
    cfg.attributes = Some(vec!["Height".into()]);
    let err = pipeline::cmd_prepare(&cfg, &dir.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("Height"), "{err}");
}
