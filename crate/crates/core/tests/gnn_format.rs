use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_sched::gnn::{build_features, gnn_forward, raw_features, Arch, GnnModel, Widths, FORMAT_VERSION};
use ris_sched::math::{CMat, C64};
use ris_sched::{Error, PilotBlock, RisConfig};
use serde::Deserialize;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[derive(Deserialize)]
struct Golden {
    alpha: Vec<f64>,
    y_re: Vec<Vec<Vec<f64>>>,
    y_im: Vec<Vec<Vec<f64>>>,
    raw_features: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    ris_out: Vec<f64>,
    user_out: Vec<Vec<f64>>,
}

fn golden() -> (GnnModel, Golden, PilotBlock) {
    let model = GnnModel::load(fixture("gnn_golden.bin")).unwrap();
    let g: Golden = serde_json::from_str(&std::fs::read_to_string(fixture("gnn_golden.json")).unwrap()).unwrap();
    let arch = *model.arch();
    let columns = g
        .y_re
        .iter()
        .zip(&g.y_im)
        .map(|(re, im)| CMat::from_fn(arch.antennas, arch.depth, |i, j| C64::new(re[i][j], im[i][j])))
        .collect();
    let block = PilotBlock {
        columns,
        uplink_phases: vec![RisConfig::from_phases(&vec![0.0; arch.elements]).unwrap(); arch.depth],
        scale: 1.0,
        noise_var: 0.0,
    };
    (model, g, block)
}

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}");
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        assert!((a - b).abs() <= tol * b.abs().max(1.0), "{what}[{i}]: {a} vs {b}");
    }
}

#[test]
fn golden_features_match_reference() {
    let (model, g, block) = golden();
    let raw = raw_features(&g.alpha, &block).unwrap();
    let feats = build_features(&g.alpha, &block, &model).unwrap();
    for (k, (r, f)) in raw.iter().zip(&feats.nodes).enumerate() {
        assert_close(r.as_slice(), &g.raw_features[k], 1e-7, "raw feature");
        assert_close(f.as_slice(), &g.features[k], 1e-7, "feature");
    }
}

#[test]
fn golden_forward_matches_reference() {
    let (model, g, block) = golden();
    let out = gnn_forward(&model, &build_features(&g.alpha, &block, &model).unwrap()).unwrap();
    assert!(g.ris_out.iter().any(|v| *v != 0.0));
    assert_close(out.ris.as_slice(), &g.ris_out, 1e-5, "RIS readout");
    for (k, want) in g.user_out.iter().enumerate() {
        assert_close(out.users[k].as_slice(), want, 1e-5, "user readout");
    }
}

#[test]
fn golden_file_reloads_with_packed_blob() {
    let bytes = std::fs::read(fixture("gnn_golden.bin")).unwrap();
    let model = GnnModel::from_bytes(&bytes).unwrap();
    let again = GnnModel::from_bytes(&model.to_bytes()).unwrap();
    assert_eq!(again, model);
    let json_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let blob = bytes.len() - 8 - json_len;
    assert_eq!(blob, 4 * model.parameter_count());
}

fn small_model() -> GnnModel {
    let arch = Arch {
        antennas: 2,
        elements: 3,
        depth: 1,
        rounds: 1,
        widths: Widths {
            hidden: 4,
            embed_hidden: 3,
        },
    };
    GnnModel::random(arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn split(bytes: &[u8]) -> (serde_json::Value, Vec<u8>) {
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    (
        serde_json::from_slice(&bytes[8..8 + len]).unwrap(),
        bytes[8 + len..].to_vec(),
    )
}

fn join(manifest: &serde_json::Value, blob: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(manifest).unwrap();
    let mut out = (json.len() as u64).to_le_bytes().to_vec();
    out.extend(json);
    out.extend(blob);
    out
}

fn is_format_error<T: std::fmt::Debug>(r: ris_sched::Result<T>) -> bool {
    matches!(r, Err(Error::ModelFormat(_)))
}

#[test]
fn round_trip_in_memory_and_on_disk() {
    let m = small_model();
    assert_eq!(GnnModel::from_bytes(&m.to_bytes()).unwrap(), m);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    m.save(&path).unwrap();
    assert_eq!(GnnModel::load(&path).unwrap(), m);
    let (manifest, _) = split(&m.to_bytes());
    assert_eq!(manifest["version"], FORMAT_VERSION);
    assert_eq!(manifest["arch"]["M"], 2);
}

#[test]
fn wrong_offset_is_rejected() {
    let (mut manifest, blob) = split(&small_model().to_bytes());
    manifest["tensors"][3]["byte_offset"] =
        serde_json::json!(manifest["tensors"][3]["byte_offset"].as_u64().unwrap() + 4);
    assert!(is_format_error(GnnModel::from_bytes(&join(&manifest, &blob))));
}

#[test]
fn malformed_files_are_rejected() {
    let bytes = small_model().to_bytes();
    let (manifest, blob) = split(&bytes);

    assert!(is_format_error(GnnModel::from_bytes(&bytes[..5])));
    assert!(is_format_error(GnnModel::from_bytes(&bytes[..bytes.len() - 4])));
    let mut longer = bytes.clone();
    longer.extend([0u8; 4]);
    assert!(is_format_error(GnnModel::from_bytes(&longer)));

    let mut m = manifest.clone();
    m["version"] = serde_json::json!(2);
    assert!(is_format_error(GnnModel::from_bytes(&join(&m, &blob))));

    let mut m = manifest.clone();
    m["tensors"][0]["name"] = serde_json::json!("g_w.0.bias");
    assert!(is_format_error(GnnModel::from_bytes(&join(&m, &blob))));

    let mut m = manifest.clone();
    m["extra"] = serde_json::json!(1);
    assert!(is_format_error(GnnModel::from_bytes(&join(&m, &blob))));

    let mut m = manifest.clone();
    m["norm"]["scale"][0] = serde_json::json!(0.0);
    assert!(is_format_error(GnnModel::from_bytes(&join(&m, &blob))));

    let mut nan = blob.clone();
    nan[..4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(is_format_error(GnnModel::from_bytes(&join(&manifest, &nan))));
}

#[test]
fn parameter_count_does_not_depend_on_users() {
    let m = small_model();
    let count: usize = m
        .arch()
        .tensor_shapes()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    assert_eq!(m.parameter_count(), count);
}
