use rmelab::checker::check_history;
use rmelab::lab::{run_spec, LockSpec, SystemSpec};
use rmelab::{Limits, RandomConfig, RmrModel, SeededRandom};

fn jsonl(spec: &SystemSpec, seed: u64) -> String {
    let cfg = RandomConfig { seed, crash_probability: 0.04, ..Default::default() };
    let mut sch = SeededRandom::new(cfg, spec.n, None);
    let (built, h, _) = run_spec(spec, &mut sch, Limits::default()).unwrap();
    assert!(check_history(&h, &built.topology).unwrap().clean());
    h.to_jsonl()
}

#[test]
fn same_spec_and_seed_give_byte_identical_histories() {
    for lock in [LockSpec::wr(), LockSpec::Semi { reclaim: None }, LockSpec::super_adaptive(2)] {
        let spec = SystemSpec::new(5, lock, RmrModel::dsm()).requests(3);
        for seed in 0..10 {
            assert_eq!(jsonl(&spec, seed), jsonl(&spec, seed));
        }
        assert_ne!(jsonl(&spec, 0), jsonl(&spec, 1));
    }
}
