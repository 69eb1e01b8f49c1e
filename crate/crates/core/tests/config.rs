use attrfield::config::SceneConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ten_thousand_sampled_sets_obey_the_rules() {
    let cfg = SceneConfig::default();
    let rules = &cfg.rules;
    let body = cfg.catalog.label("Body").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = vec![0usize; cfg.catalog.len()];
    let mut tags = vec![0usize; rules.tags.len()];
    for _ in 0..10_000 {
        let (tag, set) = rules.sample_set(3, &mut rng);
        tags[tag] += 1;
        assert!(set.len() <= 3 && set.contains(&body));
        assert!(set.windows(2).all(|w| w[0] < w[1]), "{set:?}");
        assert!(rules.is_compatible(&set));
        for &l in &set {
            assert!(l == body || rules.tags[tag].allowed.contains(&l));
            seen[l] += 1;
        }
    }
    // Every attribute allowed by some tag shows up.
    for (l, &n) in seen.iter().enumerate() {
        let reachable = rules.tags.iter().any(|t| t.allowed.contains(&l));
        assert_eq!(n > 0, reachable || l == body, "{} drawn {n} times", cfg.catalog.name(l));
    }
    assert!(tags.iter().all(|&n| n > 2_000));
}

#[test]
fn exclusive_pairs_never_co_occur() {
    let cfg = SceneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let (_, set) = cfg.rules.sample_set(5, &mut rng);
        for &(a, b) in cfg.rules.exclusive_pairs() {
            assert!(!(set.contains(&a) && set.contains(&b)));
        }
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, attrfield::config::DEFAULT_CONFIG).unwrap();
    assert_eq!(SceneConfig::load(&path).unwrap(), SceneConfig::default());
    std::fs::write(&path, "[bboxes]\nNope = { min = [0, 0, 0], max = [1, 1, 1] }\n").unwrap();
    assert!(SceneConfig::load(&path).is_err());
}
