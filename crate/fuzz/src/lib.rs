//! Bodies of the fuzz targets, shared with the corpus replay test.

use std::sync::OnceLock;

use hybrid_icd::blackbox::{read_predictions, Forest};
use hybrid_icd::data::{binarize, decode_dataset, encode_dataset, read_csv, BinarizeSpec, BinaryDataset, DatasetManifest};
use hybrid_icd::hybrid::HybridModel;
use hybrid_icd::pipeline::RunConfig;
use hybrid_icd::rashomon::collection_from_parts;
use hybrid_icd::rules::universe_from_json;
use hybrid_icd::synth;

pub const TARGETS: [(&str, fn(&[u8])); 9] = [
    ("read_csv", fuzz_read_csv),
    ("decode_dataset", fuzz_decode_dataset),
    ("manifest", fuzz_manifest),
    ("universe", fuzz_universe),
    ("predictions", fuzz_predictions),
    ("forest", fuzz_forest),
    ("model", fuzz_model),
    ("collection", fuzz_collection),
    ("run_config", fuzz_run_config),
];

/// Small synthetic dataset the JSON decoders resolve against.
pub fn fixture() -> &'static BinaryDataset {
    static DS: OnceLock<BinaryDataset> = OnceLock::new();
    DS.get_or_init(|| {
        let m = synth::manifest("fixture", "fixture.csv".into());
        let t = read_csv(synth::generate_csv(60, 1).as_bytes(), &m.label_column, &m.positive_value).unwrap();
        binarize(&t, &m.binarize).unwrap()
    })
}

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn fuzz_read_csv(data: &[u8]) {
    let Ok(t) = read_csv(data, "y", "1") else { return };
    let spec = BinarizeSpec { n_bins: 2 + data.len() % 3, ..Default::default() };
    if let Ok(ds) = binarize(&t, &spec) {
        assert_eq!(ds.n(), t.n_rows);
    }
}

pub fn fuzz_decode_dataset(data: &[u8]) {
    if let Ok(ds) = decode_dataset(data) {
        let again = decode_dataset(&encode_dataset(&ds)).expect("re-encoded cache decodes");
        assert_eq!(again, ds);
    }
}

pub fn fuzz_manifest(data: &[u8]) {
    if let Some(s) = text(data) {
        let _ = DatasetManifest::from_json(s);
    }
}

pub fn fuzz_universe(data: &[u8]) {
    if let Some(s) = text(data) {
        let _ = universe_from_json(fixture(), s);
    }
}

pub fn fuzz_predictions(data: &[u8]) {
    let n = data.first().map_or(0, |&b| b as usize % 16);
    let _ = read_predictions(data.get(1..).unwrap_or_default(), n);
}

pub fn fuzz_forest(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(f) = Forest::from_json(s) {
        let ds = fixture();
        if f.feature_names.len() == ds.n_features() {
            for i in 0..ds.n() {
                f.predict(ds, i);
            }
        }
    }
}

pub fn fuzz_model(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let ds = fixture();
    if let Ok(m) = HybridModel::from_json(ds, s) {
        for i in 0..ds.n() {
            m.predict(ds, i);
        }
    }
}

/// Index JSON and model lines, separated by the first NUL byte.
pub fn fuzz_collection(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let (index, models) = s.split_once('\0').unwrap_or((s, ""));
    let _ = collection_from_parts(fixture(), index, models);
}

pub fn fuzz_run_config(data: &[u8]) {
    if let Some(s) = text(data) {
        let _ = RunConfig::from_json(s);
    }
}
