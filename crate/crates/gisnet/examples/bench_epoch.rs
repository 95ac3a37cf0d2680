use std::time::Instant;
use gisnet::data::{generate_synthetic, split_dataset, Scenario};
use gisnet::train::{evaluate_rmse, evaluate_rmse_baseline, train_loop};

fn main() {
    let mut config = gisnet::RunConfig::default();
    config.max_epochs = 30;
    config.patience = 30;
    
    let t0 = Instant::now();
    let train_data = generate_synthetic(Scenario::LaneChange, 1000, 11, &config).unwrap();
    let split = split_dataset(train_data.samples, 11, (0.9, 0.1, 0.0)).unwrap();
    let test_data = generate_synthetic(Scenario::LaneChange, 80, 1234, &config).unwrap();
    println!("gen: {:?}; train {} val {} test {}", t0.elapsed(), split.train.len(), split.val.len(), test_data.samples.len());

    let t1 = Instant::now();
    let outcome = train_loop(&split, &config, None, None).unwrap();
    println!("train 30 epochs: {:?}", t1.elapsed());
    for r in &outcome.log {
        println!("epoch {}: loss {:.4} val {:?}", r.epoch, r.train_loss, r.val_rmse.map(|v| v.map(|x| (x*1000.0).round()/1000.0)));
    }
    let mut params = outcome.params;
    let model = evaluate_rmse(&test_data.samples, &mut params, &config).unwrap();
    let cv = evaluate_rmse_baseline(&test_data.samples, &config).unwrap();
    println!("horizon  model   cv      ratio");
    for i in 0..5 {
        println!("{}s      {:.3}   {:.3}   {:.2}", i+1, model.rmse_by_horizon[i], cv.rmse_by_horizon[i], model.rmse_by_horizon[i]/cv.rmse_by_horizon[i]);
    }
}
