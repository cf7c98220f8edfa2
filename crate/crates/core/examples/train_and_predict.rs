//! Train the dense classifier on a synthetic task, save it, load it back and
//! predict.

use fairaudit::data::{Dataset, Split};
use fairaudit::model_file;
use fairaudit::nn::{ModelSpec, TrainedModel};
use fairaudit::train::{accuracy, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| vec![f64::from(rng.random_range(0..2u8)), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[1] + 0.5 * r[2] > 0.0)).collect();
    let data = Dataset::from_rows(Split::Train, &rows, labels, 0)?;

    let config = TrainConfig {
        epochs: 30,
        seed: 7,
        ..TrainConfig::default()
    };
    let (model, log) = train(TrainedModel::build(ModelSpec::linear(3, 7))?, &data, &config)?;
    for e in log.epochs.iter().step_by(10) {
        println!("epoch {:>2}: loss {:.4}, accuracy {:.3}", e.epoch, e.train_loss, e.train_accuracy);
    }
    println!("accuracy after training: {:.3}", accuracy(&model, &data)?);

    let path = std::env::temp_dir().join("fairaudit-example-model.json");
    model_file::save(&model, &path)?;
    let loaded = model_file::load(&path)?;
    println!("saved {} weights to {}", loaded.network.parameter_count(), path.display());
    for x in [[1.0, 1.5, 0.0], [0.0, -1.5, 0.0]] {
        println!("p(y=1 | {x:?}) = {:.3}", loaded.predict(&x)?);
    }
    Ok(())
}
