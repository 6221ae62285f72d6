use ctr_incr::config::PipelineConfig;
use ctr_incr::pipeline::{run_on_stream, run_pipeline, Purpose, TEACHER_ROLE};
use ctr_incr::Error;
use ctr_incr_core::world::{generate_stream, WorldConfig, HOUR};
use ctr_incr_core::{KdConfig, Regime};
use proptest::prelude::*;

fn config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        world: WorldConfig {
            n_items_initial: 20,
            n_publishers: 4,
            n_user_segments: 3,
            impressions_per_hour: 60,
            base_ctr: 0.1,
            new_item_rate: 0.5,
            seed,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.schedule.teacher_window_hours = 24;
    cfg.train.hidden = vec![4];
    cfg.train.embedding_dim = 3;
    cfg.train.seed = seed;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn schedule_counts_and_isolation(
        days in 1u64..3,
        period in prop::sample::select(vec![4u64, 6, 8, 12]),
        student_window in 1u64..6,
        seed in 0u64..1000,
    ) {
        let mut cfg = config(seed);
        cfg.schedule.days = days;
        cfg.schedule.student_period_hours = period;
        cfg.schedule.student_window_hours = student_window;
        cfg.regimes.enabled = vec![Regime::WsOnly, Regime::WsKd, Regime::Baseline];
        let run = run_pipeline(&cfg).unwrap();
        prop_assert_eq!(run.registry.by_role(TEACHER_ROLE).count() as u64, days);
        for r in &cfg.regimes.enabled {
            prop_assert_eq!(run.registry.by_role(r.name()).count() as u64, days * 24 / period);
        }
        for r in [Regime::WsOnly, Regime::WsKd] {
            for e in run.registry.by_role(r.name()) {
                let lo = e.deploy_time - student_window * HOUR;
                for a in run.access_log.iter().filter(|a| a.model_id == e.model_id && a.purpose == Purpose::Train) {
                    prop_assert!(a.start == lo && a.end == e.deploy_time);
                    prop_assert!(a.first_timestamp.is_none_or(|t| t >= lo));
                }
            }
        }
        // every student of a teacher period distills from the same teacher
        for e in run.registry.by_role(Regime::WsKd.name()) {
            let parent = run.registry.active(TEACHER_ROLE, e.deploy_time).unwrap();
            prop_assert_eq!(e.parent_teacher.as_deref(), Some(parent.model_id.as_str()));
            prop_assert_eq!((e.deploy_time - parent.deploy_time) / HOUR < 24, true);
            let student = run.model(&e.model_id).unwrap();
            let teacher = run.model(&parent.model_id).unwrap();
            prop_assert_eq!(student.model.meta.teacher_hash, teacher.model.meta.config_hash);
        }
        let entries = run.registry.entries();
        prop_assert!(entries.windows(2).all(|w| w[0].deploy_time <= w[1].deploy_time));
        for r in run.reports.iter() {
            prop_assert_eq!(r.new.n + r.old.n, r.n_examples);
        }
    }
}

#[test]
fn parallel_matches_sequential() {
    let mut cfg = config(3);
    cfg.schedule.days = 2;
    cfg.regimes.parallel = true;
    let a = run_pipeline(&cfg).unwrap();
    cfg.regimes.parallel = false;
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(a.registry, b.registry);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.access_log, b.access_log);
    assert_eq!(a.models.len(), b.models.len());
    for (x, y) in a.models.iter().zip(&b.models) {
        assert_eq!(x.trained, y.trained);
    }
}

#[test]
fn students_at_one_tick_share_seed_and_alpha_matters() {
    let mut cfg = config(5);
    cfg.kd = KdConfig::new(0.8, 2.0);
    let run = run_pipeline(&cfg).unwrap();
    let seeds: Vec<u64> = Regime::ALL.iter().map(|r| run.registry.by_role(r.name()).next().unwrap().seed).collect();
    assert!(seeds.windows(2).all(|w| w[0] == w[1]));
    let ws = run.registry.by_role("ws-only").next().unwrap();
    let kd = run.registry.by_role("ws-kd").next().unwrap();
    assert_ne!(run.model(&ws.model_id).unwrap().model.blocks(), run.model(&kd.model_id).unwrap().model.blocks());
}

#[test]
fn short_stream_and_training_errors_carry_context() {
    let cfg = config(1);
    let (data, truth) = generate_stream(&cfg.world, 0, 30 * HOUR).unwrap();
    assert!(matches!(run_on_stream(&cfg, data, &truth), Err(Error::Config(_))));

    let mut empty = config(1);
    empty.schedule.student_window_hours = 1;
    empty.world.impressions_per_hour = 1;
    empty.world.diurnal_amplitude = 0.9;
    match run_pipeline(&empty) {
        Err(Error::Cycle { hour, .. }) => assert!(hour >= 24),
        other => panic!("expected a cycle error, got {:?}", other.map(|_| ())),
    }
}
