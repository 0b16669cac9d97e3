use autoquery::classifier::{save_model, train, ClassifierModel, TrainConfig};
use autoquery::dataset::SeedSample;
use autoquery::desk::load_desk_dataset;
use autoquery::embed::EmbedderConfig;

fn accuracy(model: &ClassifierModel, set: &[SeedSample]) -> f64 {
    let hits = set.iter().filter(|s| model.predict(&s.query).unwrap().tool == s.tool).count();
    hits as f64 / set.len() as f64
}

#[test]
fn desk_training_fits_and_generalizes() {
    let ds = load_desk_dataset().unwrap();
    let examples: Vec<_> = ds.train.iter().map(SeedSample::labeled).collect();
    let model = train(&examples, &TrainConfig::default(), EmbedderConfig::default()).unwrap();

    let missed: Vec<_> = ds
        .train
        .iter()
        .filter_map(|s| {
            let got = model.predict(&s.query).unwrap().tool;
            (got != s.tool).then(|| format!("{} -> {got}", s.query))
        })
        .collect();
    assert!(missed.is_empty(), "train misses: {missed:#?}");
    let holdout = accuracy(&model, &ds.holdout);
    assert!(holdout >= 0.85, "holdout accuracy {holdout}");
    for s in &ds.canonical {
        assert_eq!(model.predict(&s.query).unwrap().tool, s.tool, "{}", s.query);
    }
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let ds = load_desk_dataset().unwrap();
    let examples: Vec<_> = ds.train.iter().map(SeedSample::labeled).collect();
    let cfg = TrainConfig { seed: 7, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.json"), dir.path().join("b.json")];
    for p in &paths {
        let model = train(&examples, &cfg, EmbedderConfig::default()).unwrap();
        save_model(&model, p).unwrap();
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
}
