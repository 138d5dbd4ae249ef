use std::path::PathBuf;

use encompass::manifest::{self, DatasetRef, ModelRef};
use encompass::studies;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("manifests")
}

#[test]
fn every_study_has_a_manifest_matching_its_bundled_models() {
    for name in studies::STUDIES {
        let path = manifest_dir().join(format!("{name}.json"));
        let loaded = manifest::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(loaded.manifest.dataset, DatasetRef::Fixture(name.to_string()));
        let inline: Vec<_> = loaded
            .manifest
            .models
            .iter()
            .map(|m| match m {
                ModelRef::Inline(def) => def.clone(),
                ModelRef::File { path } => panic!("{name}: unexpected file reference {}", path.display()),
            })
            .collect();
        assert_eq!(inline, studies::models_for(name).unwrap(), "{name}");
        assert_eq!(loaded.models[0].name, "M1");
        assert!(loaded.models[0].constraints.is_empty());
    }
}

#[test]
fn manifests_round_trip() {
    for name in studies::STUDIES {
        let path = manifest_dir().join(format!("{name}.json"));
        let m = manifest::RunManifest::from_file(&path).unwrap();
        let again = manifest::RunManifest::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(m, again);
    }
}

#[test]
fn model_files_resolve_relative_to_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let def = studies::father_son().remove(2);
    std::fs::write(dir.path().join("m3.json"), def.to_json_string()).unwrap();
    std::fs::write(
        dir.path().join("table.csv"),
        encompass::fixtures::father_son().to_csv_string(),
    )
    .unwrap();
    let text = r#"{"schema_version": 1, "dataset": {"path": "table.csv"}, "models": [{"path": "m3.json"}]}"#;
    std::fs::write(dir.path().join("run.json"), text).unwrap();
    let loaded = manifest::load(&dir.path().join("run.json")).unwrap();
    assert_eq!(loaded.definitions[0], def);
    assert_eq!(loaded.table.total(), 3498);
}

#[test]
fn dimension_mismatch_is_a_located_input_error() {
    let def = studies::skin_trial().remove(1);
    let m = manifest::RunManifest {
        models: vec![ModelRef::Inline(def)],
        ..manifest::RunManifest::from_json_str(r#"{"schema_version": 1, "dataset": "father_son", "models": []}"#).unwrap()
    };
    let err = m.load(std::path::Path::new(".")).unwrap_err();
    assert!(err.is_input_error());
    assert!(err.to_string().contains("M2"), "{err}");
}
