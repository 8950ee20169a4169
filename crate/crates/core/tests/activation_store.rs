// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use steerkit_core::asf::{read_asf, write_asf, ActivationSet, SampleLabel, SetTag};
use steerkit_core::ErrorKind;

/// Bitwise reflected CRC-32 (polynomial 0xEDB88320), independent of the
/// table-driven implementation the library uses.
fn crc32_reference(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

#[test]
fn reference_crc_matches_check_value() {
    assert_eq!(crc32_reference(b"123456789"), 0xCBF4_3926);
}

fn label(id: &str, tag: SetTag, tokens: u64, kw: u64) -> SampleLabel {
    SampleLabel {
        sample_id: id.to_string(),
        set_tag: tag,
        token_count: tokens,
        keyword_count: kw,
    }
}

fn le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Author an ASF directory by hand: 3 samples, d = 2, layers {0, 3}.
fn hand_fixture(dir: &Path) {
    let l0 = le(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let l3 = le(&[-1.0, 0.5, 0.25, -0.125, 8.0, 16.0]);
    fs::write(dir.join("layer_0.bin"), &l0).unwrap();
    fs::write(dir.join("layer_3.bin"), &l3).unwrap();
    let labels = r#"[
  {"sample_id": "a", "set_tag": "redundant", "token_count": 40, "keyword_count": 22},
  {"sample_id": "b", "set_tag": "concise", "token_count": 9, "keyword_count": 0},
  {"sample_id": "c", "set_tag": "redundant", "token_count": 51, "keyword_count": 30}
]"#;
    fs::write(dir.join("labels.json"), labels).unwrap();
    let manifest = format!(
        r#"{{
  "asf_version": 1,
  "model_id": "hand-fixture",
  "d": 2,
  "layers": [0, 3],
  "num_samples": 3,
  "dtype": "f32le",
  "layout": "row-major",
  "checksums": {{"layer_0.bin": "{:08x}", "layer_3.bin": "{:08x}"}}
}}"#,
        crc32_reference(&l0),
        crc32_reference(&l3)
    );
    fs::write(dir.join("manifest.json"), manifest).unwrap();
}

#[test]
fn valid_hand_fixture_loads() {
    let tmp = tempfile::tempdir().unwrap();
    hand_fixture(tmp.path());
    let set = read_asf(tmp.path()).unwrap();
    assert_eq!(set.num_samples(), 3);
    assert_eq!(set.d(), 2);
    assert_eq!(set.layer_ids(), vec![0, 3]);
    assert_eq!(set.model_id(), "hand-fixture");
    assert_eq!(set.layer_data(3).unwrap(), &[-1.0, 0.5, 0.25, -0.125, 8.0, 16.0]);
    assert_eq!(set.labels()[2].keyword_count, 30);
    let m = set.layer_matrix(0, Some(SetTag::Redundant)).unwrap();
    assert_eq!(m.rows(), 2);
    assert_eq!(m.row(0), &[1.0, 2.0]);
    assert_eq!(m.row(1), &[5.0, 6.0]);
}

#[test]
fn flipped_byte_is_corrupt_data() {
    let tmp = tempfile::tempdir().unwrap();
    hand_fixture(tmp.path());
    let p = tmp.path().join("layer_3.bin");
    let mut bytes = fs::read(&p).unwrap();
    bytes[5] ^= 0x01;
    fs::write(&p, bytes).unwrap();
    assert_eq!(read_asf(tmp.path()).unwrap_err().kind(), ErrorKind::CorruptData);
}

#[test]
fn short_rows_are_validation_errors() {
    // manifest says d = 8, file holds 7 floats per row (2 rows)
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let payload = le(&[0.5; 14]);
    fs::write(dir.join("layer_0.bin"), &payload).unwrap();
    fs::write(
        dir.join("labels.json"),
        r#"[{"sample_id":"x","set_tag":"concise","token_count":1,"keyword_count":0},
            {"sample_id":"y","set_tag":"redundant","token_count":2,"keyword_count":1}]"#,
    )
    .unwrap();
    fs::write(
        dir.join("manifest.json"),
        format!(
            r#"{{"asf_version":1,"model_id":"m","d":8,"layers":[0],"num_samples":2,
               "dtype":"f32le","layout":"row-major","checksums":{{"layer_0.bin":"{:08x}"}}}}"#,
            crc32_reference(&payload)
        ),
    )
    .unwrap();
    assert_eq!(read_asf(dir).unwrap_err().kind(), ErrorKind::Validation);
}

#[test]
fn nan_payload_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    hand_fixture(tmp.path());
    let dir = tmp.path();
    let l0 = le(&[1.0, f32::NAN, 3.0, 4.0, 5.0, 6.0]);
    fs::write(dir.join("layer_0.bin"), &l0).unwrap();
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["checksums"]["layer_0.bin"] = format!("{:08x}", crc32_reference(&l0)).into();
    fs::write(dir.join("manifest.json"), v.to_string()).unwrap();
    assert_eq!(read_asf(dir).unwrap_err().kind(), ErrorKind::Validation);
}

#[test]
fn missing_layer_file_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    hand_fixture(tmp.path());
    fs::remove_file(tmp.path().join("layer_3.bin")).unwrap();
    assert_eq!(read_asf(tmp.path()).unwrap_err().kind(), ErrorKind::Io);
}

#[test]
fn missing_manifest_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(read_asf(tmp.path()).unwrap_err().kind(), ErrorKind::Io);
}

#[test]
fn label_count_mismatch_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    hand_fixture(tmp.path());
    fs::write(
        tmp.path().join("labels.json"),
        r#"[{"sample_id":"a","set_tag":"redundant","token_count":40,"keyword_count":22}]"#,
    )
    .unwrap();
    assert_eq!(read_asf(tmp.path()).unwrap_err().kind(), ErrorKind::Validation);
}

#[test]
fn two_sample_set_writes_32_byte_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut layers = BTreeMap::new();
    layers.insert(0, vec![1.0f32; 8]);
    layers.insert(1, vec![2.0f32; 8]);
    let set = ActivationSet::new(
        "m",
        4,
        layers,
        vec![label("a", SetTag::Redundant, 5, 2), label("b", SetTag::Concise, 3, 0)],
    )
    .unwrap();
    let manifest = write_asf(&set, tmp.path()).unwrap();
    let bins: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    assert_eq!(bins.len(), 2);
    for b in &bins {
        let bytes = fs::read(b).unwrap();
        assert_eq!(bytes.len(), 32);
        let name = b.file_name().unwrap().to_str().unwrap();
        assert_eq!(manifest.checksums[name], format!("{:08x}", crc32_reference(&bytes)));
    }
    assert!(tmp.path().join("manifest.json").is_file());
    assert!(tmp.path().join("labels.json").is_file());
}

#[test]
fn empty_layer_list_is_validation_error() {
    let err = ActivationSet::new("m", 4, BTreeMap::new(), vec![]).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Validation);
}

#[test]
fn unwritable_directory_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let mut layers = BTreeMap::new();
    layers.insert(0, vec![0.0f32; 2]);
    let set = ActivationSet::new("m", 2, layers, vec![label("a", SetTag::Concise, 1, 0)]).unwrap();
    assert_eq!(write_asf(&set, &blocker.join("sub")).unwrap_err().kind(), ErrorKind::Io);
}

#[test]
fn redundant_filter_on_three_plus_two() {
    let tags = [
        SetTag::Redundant,
        SetTag::Concise,
        SetTag::Redundant,
        SetTag::Concise,
        SetTag::Redundant,
    ];
    let labels: Vec<_> = tags
        .iter()
        .enumerate()
        .map(|(i, &t)| label(&format!("s{i}"), t, 10, 0))
        .collect();
    let data: Vec<f32> = (0..10).map(|i| i as f32).collect();
    let mut layers = BTreeMap::new();
    layers.insert(2, data);
    let set = ActivationSet::new("m", 2, layers, labels).unwrap();
    let m = set.layer_matrix(2, Some(SetTag::Redundant)).unwrap();
    assert_eq!(m.rows(), 3);
    // original order preserved: samples 0, 2, 4
    assert_eq!(m.row(0), &[0.0, 1.0]);
    assert_eq!(m.row(1), &[4.0, 5.0]);
    assert_eq!(m.row(2), &[8.0, 9.0]);
    assert_eq!(set.layer_matrix(2, None).unwrap().rows(), 5);
    assert_eq!(set.layer_matrix(7, None).unwrap_err().kind(), ErrorKind::InvalidInput);
}

fn set_strategy() -> impl Strategy<Value = ActivationSet> {
    (1usize..6, 1usize..9, proptest::collection::btree_set(0usize..12, 1..4)).prop_flat_map(|(n, d, ls)| {
        let layers: Vec<usize> = ls.into_iter().collect();
        let nl = layers.len();
        (
            proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * d * nl),
            proptest::collection::vec((any::<bool>(), 0u64..500, 0u64..50), n),
        )
            .prop_map(move |(vals, labs)| {
                let mut map = BTreeMap::new();
                for (i, &l) in layers.iter().enumerate() {
                    map.insert(l, vals[i * n * d..(i + 1) * n * d].to_vec());
                }
                let labels = labs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (r, t, k))| {
                        label(
                            &format!("id{i}"),
                            if r { SetTag::Redundant } else { SetTag::Concise },
                            t,
                            k,
                        )
                    })
                    .collect();
                ActivationSet::new("prop", d, map, labels).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_is_bit_identical(set in set_strategy()) {
        let tmp = tempfile::tempdir().unwrap();
        write_asf(&set, tmp.path()).unwrap();
        let back = read_asf(tmp.path()).unwrap();
        prop_assert_eq!(back.labels(), set.labels());
        prop_assert_eq!(back.layer_ids(), set.layer_ids());
        for l in set.layer_ids() {
            let a: Vec<u32> = set.layer_data(l).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.layer_data(l).unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn filtered_rows_keep_sample_order(set in set_strategy()) {
        let l = set.layer_ids()[0];
        let all = set.layer_matrix(l, None).unwrap();
        for tag in [SetTag::Redundant, SetTag::Concise] {
            let idx = set.indices(tag);
            let sub = set.layer_matrix(l, Some(tag)).unwrap();
            prop_assert_eq!(sub.rows(), idx.len());
            for (r, &i) in idx.iter().enumerate() {
                prop_assert_eq!(sub.row(r), all.row(i));
            }
        }
    }
}
