use flowerkit::container::*;
use proptest::prelude::*;

fn one_record() -> Vec<(String, Array)> {
    vec![("a".into(), Array::f32(&[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]).unwrap())]
}

#[test]
fn empty_container_is_header_plus_empty_meta() {
    let bytes = encode(&[], &Meta::new()).unwrap();
    assert_eq!(bytes.len(), 28);
    assert_eq!(&bytes[..4], MAGIC);
    let (t, m) = decode(&bytes).unwrap();
    assert!(t.is_empty() && m.is_empty());
}

#[test]
fn small_f32_tensor_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.flw");
    let recs = one_record();
    write_container(&path, &recs, &Meta::new()).unwrap();
    let (t, _) = read_container(&path).unwrap();
    let a = &t["a"];
    assert_eq!(a.shape(), &[2, 2]);
    assert!(a.bits_eq(&recs[0].1));
    assert_eq!(a.data().dtype_name(), "f32");
}

#[test]
fn corrupt_payload_byte_is_a_checksum_mismatch_at_the_payload() {
    let mut bytes = encode(&one_record(), &Meta::new()).unwrap();
    // header 16, name length 4, name 1, tag 1, rank 1, dims 16, crc 4
    let payload = 43;
    bytes[payload + 5] ^= 0x10;
    match decode(&bytes) {
        Err(ContainerError::ChecksumMismatch { offset, section, .. }) => {
            assert_eq!(offset, payload as u64);
            assert!(section.contains('a'), "{section}");
        }
        other => panic!("expected checksum mismatch, got {other:?}"),
    }
}

#[test]
fn corrupt_metadata_is_a_checksum_mismatch() {
    let mut meta = Meta::new();
    meta.insert("k".into(), "value".into());
    let mut bytes = encode(&[], &meta).unwrap();
    bytes[16 + 8] = b'K';
    assert!(matches!(decode(&bytes), Err(ContainerError::ChecksumMismatch { offset: 24, .. })));
}

#[test]
fn wrong_magic_and_version_are_named() {
    let good = encode(&one_record(), &Meta::new()).unwrap();
    let mut bad = good.clone();
    bad[0] = b'G';
    assert!(matches!(decode(&bad), Err(ContainerError::BadMagic { offset: 0 })));
    let mut bad = good.clone();
    bad[4] = 7;
    assert!(matches!(decode(&bad), Err(ContainerError::VersionUnsupported { version: 7, offset: 4 })));
}

#[test]
fn every_truncation_is_reported_without_panicking() {
    let mut meta = Meta::new();
    meta.insert("note".into(), "x=y".into());
    let bytes = encode(&one_record(), &meta).unwrap();
    for len in 0..bytes.len() {
        match decode(&bytes[..len]) {
            Err(ContainerError::TruncatedFile { offset, needed }) => {
                assert!(offset <= len as u64 && needed > 0, "len {len}: offset {offset}");
            }
            other => panic!("prefix of {len} bytes: {other:?}"),
        }
    }
}

#[test]
fn trailing_bytes_and_non_canonical_input_are_rejected() {
    let mut bytes = encode(&[], &Meta::new()).unwrap();
    bytes.push(0);
    assert!(matches!(decode(&bytes), Err(ContainerError::Malformed { offset: 28, .. })));

    let mut bytes = encode(&[], &Meta::new()).unwrap();
    bytes[12] = 1;
    assert!(matches!(decode(&bytes), Err(ContainerError::Malformed { offset: 12, .. })));

    // an unknown dtype tag
    let mut bytes = encode(&one_record(), &Meta::new()).unwrap();
    bytes[21] = 9;
    assert!(matches!(decode(&bytes), Err(ContainerError::Malformed { .. })));
}

#[test]
fn write_read_write_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.flw"), dir.path().join("b.flw"));
    let recs = vec![
        ("zeta".to_string(), Array::f64(&[3], vec![1.0, f64::NAN, -2.0]).unwrap()),
        ("alpha".to_string(), Array::f32(&[1, 2, 1], vec![0.5, 0.25]).unwrap()),
    ];
    let mut meta = Meta::new();
    meta.insert("b".into(), "2".into());
    meta.insert("a".into(), "".into());
    write_container(&p1, &recs, &meta).unwrap();
    let (t, m) = read_container(&p1).unwrap();
    let names: Vec<&str> = t.keys().map(String::as_str).collect();
    assert_eq!(names, ["alpha", "zeta"]);
    let records: Vec<(String, Array)> = t.into_iter().collect();
    write_container(&p2, &records, &m).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn name_and_metadata_rules() {
    let a = Array::f32(&[1], vec![0.0]).unwrap();
    let dup = vec![("x".to_string(), a.clone()), ("x".to_string(), a.clone())];
    assert!(matches!(encode(&dup, &Meta::new()), Err(ContainerError::NameCollision(n)) if n == "x"));
    assert!(matches!(encode(&[("a b".into(), a.clone())], &Meta::new()), Err(ContainerError::InvalidName(_))));
    assert!(matches!(encode(&[(String::new(), a.clone())], &Meta::new()), Err(ContainerError::InvalidName(_))));
    let mut meta = Meta::new();
    meta.insert("k".into(), "two\nlines".into());
    assert!(matches!(encode(&[], &meta), Err(ContainerError::InvalidMeta { .. })));
    assert!(matches!(Array::f32(&[2, 2], vec![0.0; 3]), Err(ContainerError::ShapeMismatch { .. })));
}

#[test]
fn digest_covers_payload_only() {
    let mut t = TensorMap::new();
    t.insert("a".into(), Array::f32(&[2], vec![1.0, 2.0]).unwrap());
    let d1 = payload_digest(&t);
    let mut t2 = TensorMap::new();
    t2.insert("b".into(), Array::f32(&[1, 2], vec![1.0, 2.0]).unwrap());
    assert_eq!(d1, payload_digest(&t2));
    assert_eq!(d1.len(), 64);
    assert_eq!(
        payload_digest(&TensorMap::new()),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
}

fn array_strategy() -> impl Strategy<Value = Array> {
    prop::collection::vec(0usize..4, 1..=5).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop_oneof![
            prop::collection::vec(any::<u32>(), n).prop_map({
                let shape = shape.clone();
                move |bits| Array::f32(&shape, bits.into_iter().map(f32::from_bits).collect()).unwrap()
            }),
            prop::collection::vec(any::<u64>(), n).prop_map({
                let shape = shape.clone();
                move |bits| Array::f64(&shape, bits.into_iter().map(f64::from_bits).collect()).unwrap()
            }),
        ]
    })
}

proptest! {
    #[test]
    fn round_trip_is_the_identity(
        arrays in prop::collection::btree_map("[A-Za-z0-9._-]{1,8}", array_strategy(), 0..5),
        meta in prop::collection::btree_map("[a-z.]{1,6}", "[ -~]{0,12}", 0..4),
    ) {
        let records: Vec<(String, Array)> = arrays.into_iter().collect();
        let bytes = encode(&records, &meta).unwrap();
        let (back, meta_back) = decode(&bytes).unwrap();
        prop_assert_eq!(&meta_back, &meta);
        prop_assert_eq!(back.len(), records.len());
        for (n, a) in &records {
            prop_assert!(back[n].bits_eq(a));
        }
        let mut reversed = records.clone();
        reversed.reverse();
        prop_assert_eq!(encode(&reversed, &meta).unwrap(), bytes);
    }
}
