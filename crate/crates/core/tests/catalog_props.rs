mod common;

use chrono::Days;
use proptest::prelude::*;
use reid_core::catalog::{BBox, Catalog, ImageRecord, Orientation};

use common::{date, rec};

fn arb_record(idx: usize) -> impl Strategy<Value = ImageRecord> {
    (
        proptest::option::weighted(0.9, 0..6usize),
        proptest::option::weighted(0.9, 0..3000u64),
        0..Orientation::ALL.len(),
        proptest::option::of((0..50u32, 0..50u32, 1..100u32, 1..100u32)),
    )
        .prop_map(move |(ind, day, o, bbox)| {
            let id = format!("img_{idx:03}");
            let mut r = rec(
                &id,
                ind.map(|i| format!("ind,{i}")).as_deref(),
                day.map(|d| date("2008-02-29") + Days::new(d)),
            );
            r.orientation = Orientation::ALL[o];
            r.image_path = format!("photos/{id} copy.png").into();
            r.bbox = bbox.map(|(x, y, w, h)| BBox { x, y, w, h });
            r
        })
}

fn arb_catalog() -> impl Strategy<Value = Vec<ImageRecord>> {
    (1..40usize).prop_flat_map(|n| (0..n).map(arb_record).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(common::proptest_config(256))]

    #[test]
    fn manifest_round_trips(records in arb_catalog()) {
        let catalog = Catalog::from_records(records).unwrap();
        let mut first = Vec::new();
        catalog.write_manifest(&mut first).unwrap();
        let back = Catalog::read_manifest(&first[..]).unwrap();
        prop_assert_eq!(back.records(), catalog.records());
        let mut second = Vec::new();
        back.write_manifest(&mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn encounters_partition_labelled_dated_images(records in arb_catalog()) {
        let catalog = Catalog::from_records(records).unwrap();
        let part = catalog.derive_encounters();
        let labelled = catalog.records().iter().filter(|r| r.individual_id.is_some()).count();
        let labelled_dated = catalog
            .records()
            .iter()
            .filter(|r| r.individual_id.is_some() && r.date.is_some())
            .count();
        let sizes: usize = part.encounters.iter().map(|e| e.image_ids.len()).sum();
        prop_assert_eq!(sizes, labelled_dated);
        prop_assert_eq!(sizes + part.excluded, catalog.len());
        // with every image dated the encounters cover the labelled images exactly
        if catalog.records().iter().all(|r| r.date.is_some()) {
            prop_assert_eq!(sizes, labelled);
        }
        for e in &part.encounters {
            for id in &e.image_ids {
                let r = catalog.get(id).unwrap();
                prop_assert_eq!(r.individual_id.as_deref(), Some(e.individual_id.as_str()));
                prop_assert_eq!(r.date, Some(e.date));
            }
        }
    }

    #[test]
    fn stats_ignore_row_order(records in arb_catalog(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = Catalog::from_records(records).unwrap().compute_stats();
        let b = Catalog::from_records(shuffled).unwrap().compute_stats();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn duplicate_ids_are_rejected() {
    let r = rec("a", Some("A"), Some(date("2015-01-01")));
    assert!(Catalog::from_records(vec![r.clone(), r]).is_err());
}
