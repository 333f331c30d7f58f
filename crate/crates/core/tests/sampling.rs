use jointinf_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sample_frequencies_match_the_conditional() {
    let (ds, model) = Fixture::Reference.load().unwrap();
    let x = &ds.instances[0];
    let s = &ds.instances[1];
    let ctx: SupportContext = [(s, 1usize)].into_iter().collect();
    let p: Vec<f64> = model.answer_log_probs(x, &ctx).unwrap().iter().map(|l| l.exp()).collect();
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = [0usize; 2];
    for _ in 0..draws {
        counts[model.sample_answer(x, &ctx, &mut rng).unwrap()] += 1;
    }
    for k in 0..2 {
        let freq = counts[k] as f64 / draws as f64;
        let sd = (p[k] * (1.0 - p[k]) / draws as f64).sqrt();
        assert!((freq - p[k]).abs() <= 3.0 * sd, "answer {k}: {freq} vs {}", p[k]);
    }
}

#[test]
fn seeded_sampling_is_reproducible() {
    let (ds, model) = Fixture::Small.load().unwrap();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ds.instances
            .iter()
            .map(|x| model.sample_answer(x, &SupportContext::empty(), &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    let scorer = model.scorer(&ds.instances).unwrap();
    let labeling = Labeling(ds.gold.clone().unwrap());
    let a = mc_joint_objective(&scorer, &labeling, 4, 500, &mut rng::stream(1, &[])).unwrap();
    let b = mc_joint_objective(&scorer, &labeling, 4, 500, &mut rng::stream(1, &[])).unwrap();
    assert_eq!(a, b);
}
