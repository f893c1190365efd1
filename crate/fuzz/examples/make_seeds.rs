//! Regenerates `corpus/` from real artifacts: `cargo run --example make_seeds`.

use std::fs;
use std::path::Path;

use hybrid_icd::blackbox::{train_forest, BlackBox, ForestConfig};
use hybrid_icd::data::{encode_dataset, split};
use hybrid_icd::hybrid::HybridModel;
use hybrid_icd::pipeline::RunConfig;
use hybrid_icd::rashomon::{build, collection_to_parts, hybrid_grid, BuildConfig, LearnerSpec};
use hybrid_icd::rules::{mine_antecedents, universe_to_json, MiningConfig};
use hybrid_icd::search::SearchConfig;
use hybrid_icd::synth;
use hybrid_icd_fuzz::fixture;

fn put(target: &str, name: &str, bytes: impl AsRef<[u8]>) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn main() {
    let ds = fixture();

    put("read_csv", "synthetic.csv", synth::generate_csv(12, 3).replace("reoffend", "y").replace(",yes", ",1").replace(",no", ",0"));
    put("read_csv", "tiny.csv", "a,b,y\n1,x,1\n2,y,0\n3,x,1\n");
    put("read_csv", "missing_label.csv", "a,b\n1,2\n");

    put("decode_dataset", "fixture.bin", encode_dataset(ds));
    put("decode_dataset", "truncated.bin", &encode_dataset(ds)[..40]);

    let m = synth::manifest("toy", "toy.csv".into());
    put("manifest", "synthetic.json", serde_json_pretty(&m));
    put("manifest", "bad_bins.json", r#"{"name":"x","csv":"x.csv","label_column":"y","positive_value":"1","n_bins":1,"sensitive":[]}"#);

    let sp = split(ds, 0).unwrap();
    let u = mine_antecedents(ds, &sp.train_indices, &MiningConfig::default()).unwrap();
    put("universe", "fixture.json", universe_to_json(&u));

    put("predictions", "ok.csv", b"\x04index,prediction\n0,1\n1,0\n2,0\n3,1\n".to_vec());
    put("predictions", "gap.csv", b"\x03index,prediction\n0,1\n2,0\n".to_vec());

    let bb = train_forest(ds, &sp.train_indices, &ForestConfig { n_trees: 3, ..Default::default() }).unwrap();
    if let BlackBox::Forest(f) = &bb {
        put("forest", "three_trees.json", f.to_json());
    }

    let search = SearchConfig { max_prefix_len: 2, time_limit: None, memory_limit: None, node_limit: Some(200), ..Default::default() };
    let specs: Vec<LearnerSpec> = hybrid_grid(false, &search).into_iter().step_by(4).collect();
    let cfg = BuildConfig { n_bootstrap: 1, base_seed: 1, forest: ForestConfig { n_trees: 3, ..Default::default() }, workers: 1 };
    let c = build(ds, "fixture", "hybrid_post", &sp, &u, &specs, &cfg).unwrap();
    for (i, mem) in c.members.iter().take(2).enumerate() {
        put("model", &format!("member{i}.json"), mem.model.to_json());
    }
    let replay = HybridModel { blackbox: BlackBox::Replay(bb.predict_all(ds)), ..c.members[0].model.clone() };
    put("model", "replay.json", replay.to_json());
    let (index, models) = collection_to_parts(&c);
    put("collection", "fixture", format!("{index}\0{models}"));

    put("run_config", "minimal.json", r#"{"dataset": "d.json"}"#);
    put("run_config", "full.json", serde_json_pretty(&RunConfig { dataset: "d.json".into(), ..Default::default() }));
}

fn serde_json_pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap()
}
