use std::io::BufReader;

use lodpatch::midoc::{LodTarget, OrderOptions};
use lodpatch::store::{export_ascii, read_ascii, GridSpec, PointRecord, QueryFilter, Schema, Store};
use lodpatch::synth;
use lodpatch::Error;

fn ordered_corpus() -> Store {
    let (r, s, g) = synth::class_corpus(4, 3);
    let (store, _) = Store::ingest(r, g, s);
    store.order_all(OrderOptions { levels: 6, ..Default::default() }, 2).unwrap();
    store
}

#[test]
fn ascii_export_then_ingest_keeps_point_order() {
    let store = ordered_corpus();
    let mut text = Vec::new();
    export_ascii(&store, &mut text, None, None).unwrap();
    let (schema, records) = read_ascii(BufReader::new(text.as_slice())).unwrap();
    assert_eq!(&schema, store.schema());
    let (again, report) = Store::ingest(records, *store.grid(), schema);
    assert_eq!(report.points_stored, store.total_points());
    for id in store.ids() {
        let a = store.patch(id).unwrap();
        let b = again.patch(id).unwrap();
        assert_eq!(a.meta.key, b.meta.key);
        assert_eq!(a.points, b.points, "patch {id} lost its order");
    }
}

#[test]
fn lod_export_writes_prefixes() {
    let store = ordered_corpus();
    let mut text = Vec::new();
    let n = export_ascii(&store, &mut text, None, Some(LodTarget::Level(2))).unwrap();
    let expected: usize = store.metas().iter().map(|m| m.served_len(LodTarget::Level(2)).unwrap()).sum();
    assert_eq!(n as usize, expected);
}

#[test]
fn truncated_file_is_rejected() {
    let store = ordered_corpus();
    let bytes = store.to_bytes();
    for cut in [0, 8, bytes.len() / 2, bytes.len() - 1] {
        assert!(Store::from_bytes(&bytes[..cut]).is_err(), "cut at {cut} accepted");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    assert!(matches!(Store::from_bytes(&flipped), Err(Error::Checksum { .. })));
}

#[test]
fn counts_are_conserved_and_bad_points_skipped() {
    let mut recs: Vec<PointRecord> = (0..1000).map(|i| PointRecord::new([f64::from(i) * 0.01, 0.5, 0.5])).collect();
    recs.push(PointRecord::new([f64::NAN, 0.0, 0.0]));
    recs.push(PointRecord { position: [0.0; 3], attributes: vec![1.0] });
    let (store, report) = Store::ingest(recs, GridSpec::new(1.0).unwrap(), Schema::default());
    assert_eq!(report.points_stored, 1000);
    assert_eq!(report.skipped_non_finite, 1);
    assert_eq!(report.skipped_bad_arity, 1);
    assert_eq!(store.len(), 10);
    assert_eq!(store.query(&QueryFilter::default()).unwrap().len(), 10);
}
