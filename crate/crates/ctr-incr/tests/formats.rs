use ctr_incr::checkpoint::{decode, encode, load_checkpoint, save_checkpoint};
use ctr_incr::dataset::{DatasetReader, DatasetWriter};
use ctr_incr::Error;
use ctr_incr_core::nn::{init_model, ModelSpec, OptimizerState, Vocabulary};
use ctr_incr_core::world::{hour_of_day, FIELD_NAMES};
use ctr_incr_core::Impression;
use proptest::prelude::*;

fn impressions() -> impl Strategy<Value = Vec<Impression>> {
    prop::collection::vec(
        (0u64..500_000, any::<u32>(), 0u32..50, 0u32..9, any::<bool>(), prop::option::of(0u32..=1_000_000_000)),
        0..60,
    )
    .prop_map(|mut rows| {
        rows.sort_by_key(|r| r.0);
        rows.into_iter()
            .map(|(ts, item, publisher, seg, click, soft)| {
                let mut i = Impression::new(ts, item, publisher, seg, click);
                i.soft_target = soft.map(|s| s as f64 / 1e9);
                i
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dataset_round_trip_is_lossless(data in impressions()) {
        let mut w = DatasetWriter::new(Vec::new()).unwrap();
        for i in &data {
            w.write(i).unwrap();
        }
        let bytes = w.finish().unwrap();
        let back: Vec<Impression> = DatasetReader::new(&bytes[..]).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert!(back.iter().all(|i| i.hour_of_day() == hour_of_day(i.timestamp)));
        prop_assert_eq!(&back, &data);
        let mut again = DatasetWriter::new(Vec::new()).unwrap();
        for i in &back {
            again.write(i).unwrap();
        }
        prop_assert_eq!(again.finish().unwrap(), bytes);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        seed in any::<u64>(),
        rows in prop::collection::vec(1u32..12, 4),
        dim in 1usize..5,
        hidden in prop::collection::vec(1usize..6, 1..3),
        with_opt in any::<bool>(),
        acc in 0.0f64..10.0,
    ) {
        let mut vocab = Vocabulary::new(&FIELD_NAMES);
        for (f, &n) in rows.iter().enumerate() {
            for v in 0..n {
                vocab.insert(f, v.wrapping_mul(2_654_435_761));
            }
        }
        let mut model = init_model(&ModelSpec::uniform(&FIELD_NAMES, dim, hidden), &vocab, seed).unwrap();
        model.meta.steps = seed % 1000;
        model.meta.teacher_hash = seed.rotate_left(7);
        let mut opt = OptimizerState::zeros_like(&model);
        opt.accumulators[0][0] = acc;
        let opt = with_opt.then_some(opt);
        let bytes = encode(&model, opt.as_ref());
        let (m2, o2) = decode(&bytes).unwrap();
        prop_assert_eq!(&m2, &model);
        prop_assert_eq!(&o2, &opt);
        prop_assert_eq!(encode(&m2, o2.as_ref()), bytes);
    }
}

#[test]
fn files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut vocab = Vocabulary::new(&FIELD_NAMES);
    for f in 0..4 {
        vocab.insert(f, 1);
    }
    let model = init_model(&ModelSpec::uniform(&FIELD_NAMES, 2, vec![3]), &vocab, 1).unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&p, &model, None).unwrap();
    let first = std::fs::read(&p).unwrap();
    let (m, o) = load_checkpoint(&p).unwrap();
    save_checkpoint(&p, &m, o.as_ref()).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);

    std::fs::write(&p, &first[..first.len() - 5]).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(Error::Corrupt(_))));
    assert!(matches!(load_checkpoint(dir.path().join("missing.ckpt")), Err(Error::Io(_))));
}
