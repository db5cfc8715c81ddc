use groupdyn::analysis::{ols_fit, wilcoxon_signed_rank, Alternative};
use groupdyn::emission::{ObservationFrame, ObservationSeries};
use groupdyn::events::{classify_trajectory, window_counts, ConversationalKind};
use groupdyn::io;
use groupdyn::mjp::{EventCatalog, EventKind, EventVector, RateVector, StateVector};
use groupdyn::simulate::{gillespie_simulate, slotted_simulate};
use groupdyn::tasksim::{new_game, play_game};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn rates(cat: &EventCatalog, scale: f64) -> RateVector {
    RateVector::by_kind(cat, |e| {
        scale
            * match e.kind {
                EventKind::Take => 0.3,
                EventKind::Yield => 0.4,
                EventKind::Transfer => 0.1,
                EventKind::Backchannel => 0.2,
                EventKind::Seize => 0.05,
                EventKind::YieldUnderCompetition => 0.8,
            }
    })
    .unwrap()
}

fn state(speakers: usize) -> impl Strategy<Value = StateVector> {
    (0..1usize << speakers).prop_map(move |i| StateVector::from_index(i, speakers))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn state_encodings_round_trip(c in 1usize..=6, seed in any::<u64>()) {
        let x = StateVector::from_index(seed as usize % (1 << c), c);
        prop_assert_eq!(StateVector::from_index(x.index(), c), x);
        prop_assert_eq!(StateVector::from_bools(&x.to_bools()).unwrap(), x);
        prop_assert_eq!(StateVector::decode_indicators(&x.encode_indicators()).unwrap(), x);
        prop_assert_eq!(x.speaking().count(), x.speaking_count());
    }

    #[test]
    fn events_agree_with_reaction_matrix(x in state(4)) {
        let cat = EventCatalog::build(4).unwrap();
        let m = cat.reaction_matrix();
        for e in 0..cat.len() {
            let spec = &cat.events()[e];
            let applied = cat.apply_event(&x, e);
            prop_assert_eq!(applied.is_ok(), spec.guard(&x));
            if let Ok(y) = applied {
                let via_matrix = m.state_update(&x, &EventVector::one_hot(cat.len(), e)).unwrap();
                prop_assert_eq!(y, via_matrix);
                if !spec.is_self_transition() {
                    prop_assert_eq!(cat.event_for_transition(&x, &y), Some(e));
                }
            }
        }
        prop_assert_eq!(cat.active_events(&x).unwrap().len(), (0..cat.len()).filter(|&e| cat.events()[e].guard(&x)).count());
    }

    #[test]
    fn gillespie_paths_replay_and_round_trip(seed in any::<u64>(), c in 2usize..=4, scale in 0.2f64..3.0) {
        let cat = EventCatalog::build(c).unwrap();
        let traj = gillespie_simulate(&cat, &rates(&cat, scale), StateVector::silent(c), 40.0, seed).unwrap();
        prop_assert!(traj.events.windows(2).all(|w| w[0].time <= w[1].time));
        prop_assert!(traj.events.iter().all(|e| e.time >= 0.0 && e.time < traj.horizon));
        prop_assert!(traj.replay(&cat).is_ok());
        let csv = io::trajectory_csv(&traj, &cat).unwrap();
        prop_assert_eq!(&io::read_trajectory_csv(&csv, &cat).unwrap(), &traj);
        let (cat2, traj2) = io::read_trajectory_csv_auto(&csv).unwrap();
        prop_assert_eq!(cat2.len(), cat.len());
        prop_assert_eq!(&traj2, &traj);
        let json = io::trajectory_json(&traj).unwrap();
        prop_assert_eq!(&io::read_trajectory_json(&json, &cat).unwrap(), &traj);
    }

    #[test]
    fn slotted_paths_respect_guards(seed in any::<u64>(), dt in 0.02f64..0.5) {
        let cat = EventCatalog::build(3).unwrap();
        let slots = slotted_simulate(&cat, &rates(&cat, 1.0), StateVector::silent(3), 30.0, dt, seed).unwrap();
        prop_assert_eq!(slots.slot_events.len(), (30.0 / dt).round() as usize);
        prop_assert!(slots.states(&cat).is_ok());
        let traj = slots.to_trajectory();
        prop_assert!(traj.replay(&cat).is_ok());
    }

    #[test]
    fn window_counts_partition_events(seed in any::<u64>(), window in 5.0f64..60.0) {
        let cat = EventCatalog::build(3).unwrap();
        let traj = gillespie_simulate(&cat, &rates(&cat, 1.0), StateVector::silent(3), 120.0, seed).unwrap();
        let events = classify_trajectory(&traj, &cat).unwrap();
        let counts = window_counts(&events, window, 120.0).unwrap();
        let total: u64 = counts
            .iter()
            .map(|w| w.take + w.transfer + w.yield_ + w.backchannel + w.competition)
            .sum();
        // each competition shows up as a loss and a win but counts once
        let wins = events.iter().filter(|e| e.kind == ConversationalKind::CompetitionWin).count();
        prop_assert_eq!(total as usize, events.len() - wins);
        prop_assert!(counts.iter().all(|w| w.speaker_changes <= w.turns()));
        let csv = io::counts_csv(&counts);
        prop_assert_eq!(io::read_counts_csv(&csv, window).unwrap(), counts);
        let ev_csv = io::events_csv(&events);
        prop_assert_eq!(io::read_events_csv(&ev_csv).unwrap(), events);
    }

    #[test]
    fn observations_round_trip(
        cells in proptest::collection::vec(proptest::option::of(-50.0f64..50.0), 3 * 2 * 7),
        dt in 0.01f64..1.0,
    ) {
        let frames = cells
            .chunks(6)
            .map(|f| ObservationFrame { speakers: vec![[f[0], f[1], f[2]], [f[3], f[4], f[5]]] })
            .collect();
        let obs = ObservationSeries { frames, dt, speaker_count: 2 };
        let text = io::observations_csv(&obs);
        prop_assert_eq!(io::read_observations_csv(&text, None).unwrap(), obs);
    }

    #[test]
    fn wilcoxon_symmetry_and_scale_invariance(
        d in proptest::collection::vec((-30i32..=30).prop_filter("nonzero", |v| *v != 0), 5..25),
        scale in 0.1f64..10.0,
    ) {
        let d: Vec<f64> = d.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let scaled: Vec<f64> = d.iter().map(|v| v * scale).collect();
        for alt in [Alternative::Greater, Alternative::Less, Alternative::TwoSided] {
            let p = wilcoxon_signed_rank(&d, alt).unwrap().p_value;
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((wilcoxon_signed_rank(&scaled, alt).unwrap().p_value - p).abs() < 1e-12);
        }
        let g = wilcoxon_signed_rank(&d, Alternative::Greater).unwrap().p_value;
        let l = wilcoxon_signed_rank(&neg, Alternative::Less).unwrap().p_value;
        prop_assert!((g - l).abs() < 1e-12);
    }

    #[test]
    fn extra_regressors_never_lower_r_squared(
        vals in proptest::collection::vec(-5.0f64..5.0, 4 * 20),
    ) {
        let x = DMatrix::from_fn(20, 3, |i, j| vals[i * 4 + j]);
        let y: Vec<f64> = (0..20).map(|i| vals[i * 4 + 3]).collect();
        let full = ols_fit(&x, &y).unwrap();
        let small = ols_fit(&x.columns(0, 1).into_owned(), &y).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&full.r_squared));
        prop_assert!(full.r_squared >= small.r_squared - 1e-10);
        prop_assert!(full.rss <= small.rss + 1e-9 * small.tss);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn perfect_questions_finish_within_bound(seed in any::<u64>()) {
        let log = play_game(&new_game(seed), 1.0, seed ^ 1).unwrap();
        prop_assert!(log.question_count() <= 20);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parsers_never_panic(text in "(?s).{0,400}", n in 0usize..3) {
        let cat = EventCatalog::build(2).unwrap();
        let _ = io::read_trajectory_csv(&text, &cat);
        let _ = io::read_trajectory_csv_auto(&text);
        let _ = io::read_trajectory_json(&text, &cat);
        let _ = io::read_observations_csv(&text, None);
        let _ = io::read_badge_csv(&text, n, None);
        let _ = io::read_turns_csv(&text);
        let _ = io::read_events_csv(&text);
        let _ = io::read_counts_csv(&text, 60.0);
        let _ = io::read_records_csv(&text);
        let _ = io::read_rates_csv(&text);
    }

    #[test]
    fn parsers_never_panic_on_near_valid_rows(
        rows in proptest::collection::vec("[-0-9.,a-z]{0,30}", 0..8),
    ) {
        let cat = EventCatalog::build(2).unwrap();
        let body = rows.join("\n");
        let with = |header: &str| format!("{header}\n{body}");
        let _ = io::read_trajectory_csv(&format!("# speakers=2\n# horizon_s=10\n# initial_state=00\n{}", with("time_s,event_id,kind,actor,target")), &cat);
        let _ = io::read_observations_csv(&format!("# dt=0.1\n{}", with("slot_index,speaker,audio_logvar,motion_logvar,facing_count")), None);
        let _ = io::read_counts_csv(&with("window_start_s,take,transfer,yield,backchannel,competition,distinct_speakers,speaker_changes"), 60.0);
        let _ = io::read_rates_csv(&with("event,label,rate"));
    }
}
