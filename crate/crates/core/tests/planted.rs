use scout_core::attribution::attribution_from_pass;
use scout_core::dataset::Split;
use scout_core::micronet::{train, Architecture, ModelBundle, Selector, TrainConfig};
use scout_core::synthgen::{generate_dataset, DatasetConfig, GeneratedDataset};

fn trained(config: &DatasetConfig, seed: u64) -> (GeneratedDataset, ModelBundle) {
    let data = generate_dataset(config, seed).unwrap();
    let set = data.labeled(Split::Train).unwrap();
    let model = train(&set, &Architecture::standard(4), &TrainConfig::default(), seed).unwrap();
    (data, model)
}

fn test_scenes(data: &GeneratedDataset) -> impl Iterator<Item = &scout_core::synthgen::SceneImage> {
    data.scenes.iter().filter(|s| s.annotation.split == Split::Test)
}

#[test]
fn top_attribution_cell_lies_on_a_class_defining_part() {
    let (data, model) = trained(&DatasetConfig::planted(200), 1);
    let (mut correct, mut upper) = (0, 0);
    for scene in test_scenes(&data) {
        let label = scene.annotation.label;
        let pass = model.forward(&scene.image).unwrap();
        if pass.prediction() != label {
            continue;
        }
        correct += 1;
        let a = attribution_from_pass(&model, &pass, Selector::Posterior(label), true).unwrap();
        let top = a.grid.argmax().unwrap();
        // crest and bill occupy the two upper quadrants
        upper += (top / a.grid.cols() < a.grid.rows() / 2) as usize;
    }
    let accuracy = correct as f64 / data.ids(Split::Test).len() as f64;
    assert!(accuracy > 0.85, "accuracy {accuracy}");
    assert!(upper as f64 >= 0.9 * correct as f64, "{upper}/{correct}");
}

#[test]
fn unambiguous_classes_are_easier() {
    let (data, model) = trained(&DatasetConfig::ambiguous(200), 11);
    let (mut easy, mut hard) = (Vec::new(), Vec::new());
    for scene in test_scenes(&data) {
        let easiness = 1.0 - model.forward(&scene.image).unwrap().hardness();
        // classes 2 and 3 share an attribute on the bill
        if scene.annotation.label < 2 {
            easy.push(easiness);
        } else {
            hard.push(easiness);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&easy) > mean(&hard), "{} vs {}", mean(&easy), mean(&hard));
}

#[test]
fn training_is_deterministic() {
    let data = generate_dataset(&DatasetConfig::planted(12), 5).unwrap();
    let config = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let set = data.labeled(Split::Train).unwrap();
    let a = train(&set, &Architecture::standard(4), &config, 9).unwrap();
    let b = train(&set, &Architecture::standard(4), &config, 9).unwrap();
    assert_eq!(a.params, b.params);
}
