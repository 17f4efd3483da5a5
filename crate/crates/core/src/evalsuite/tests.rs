use super::*;
use crate::metrics::PSNR_CAP_DB;
use crate::model::AlphaInput;
use crate::textgen::{self, GenConfig};
use tempfile::TempDir;

fn tiny_gen_cfg() -> GenConfig {
    GenConfig {
        hr_size: 32,
        scale: 2,
        chars_min: 1,
        chars_max: 2,
        min_contrast: 0.3,
        glyph_cell: 12,
    }
}

fn tiny_dataset(n: usize, seed: u64) -> TempDir {
    let dir = TempDir::new().unwrap();
    textgen::dataset_generate(n, seed, dir.path(), &tiny_gen_cfg()).unwrap();
    dir
}

fn untrained_classifier() -> CharClassifier {
    CharClassifier::init(&mut ChaCha8Rng::seed_from_u64(3))
}

#[test]
fn perfect_outputs_score_perfectly() {
    let data = tiny_dataset(4, 50);
    let ds = Dataset::load(data.path()).unwrap();
    let row = score_outputs("gt", &ds, &untrained_classifier(), |s| Ok(s.hr.clone())).unwrap();
    assert_eq!(row.rmse, 0.0);
    assert_eq!(row.psnr, PSNR_CAP_DB);
    assert_eq!(row.mssim, 1.0);
}

#[test]
fn empty_dataset_is_an_error() {
    let data = tiny_dataset(2, 51);
    let mut ds = Dataset::load(data.path()).unwrap();
    ds.entries.clear();
    assert!(score_outputs("gt", &ds, &untrained_classifier(), |s| Ok(s.hr.clone())).is_err());
}

#[test]
fn bicubic_baseline_deterministic_and_bounded() {
    let data = tiny_dataset(5, 52);
    let ds = Dataset::load(data.path()).unwrap();
    let c = untrained_classifier();
    let a = baseline_bicubic(&ds, 2, &c).unwrap();
    let b = baseline_bicubic(&ds, 2, &c).unwrap();
    assert_eq!(a, b);
    assert!(a.psnr.is_finite() && a.psnr < PSNR_CAP_DB);
    assert!(a.rmse > 0.0);
    assert!((0.0..=1.0).contains(&a.mssim));
    assert!((0.0..=100.0).contains(&a.ocr_percent));
}

#[test]
fn evaluation_is_order_independent() {
    let data = tiny_dataset(6, 53);
    let ds = Dataset::load(data.path()).unwrap();
    let c = untrained_classifier();
    let forward = baseline_bicubic(&ds, 2, &c).unwrap();
    let mut shuffled = Dataset::load(data.path()).unwrap();
    shuffled.entries.reverse();
    let reversed = baseline_bicubic(&shuffled, 2, &c).unwrap();
    assert!((forward.rmse - reversed.rmse).abs() < 1e-9);
    assert!((forward.psnr - reversed.psnr).abs() < 1e-9);
    assert!((forward.mssim - reversed.mssim).abs() < 1e-9);
    assert!((forward.ocr_percent - reversed.ocr_percent).abs() < 1e-9);
}

#[test]
fn untrained_model_evaluates_near_its_bicubic_base() {
    let data = tiny_dataset(4, 54);
    let ds = Dataset::load(data.path()).unwrap();
    let c = untrained_classifier();
    let cfg = TrainConfig::default();
    let models = ModelSet::init(&mut ChaCha8Rng::seed_from_u64(1), 2, AlphaInput::Stacked);
    let ours = evaluate(&models, &ds, &cfg, &c, None).unwrap();
    let bicubic = baseline_bicubic(&ds, 2, &c).unwrap();
    assert_eq!(ours.method, "ours");
    // Identity-start generators compose bicubic-upsampled layers, which is
    // close to (not identical to) bicubic on the flat image.
    assert!(
        (ours.psnr - bicubic.psnr).abs() < 5.0,
        "ours {} vs bicubic {}",
        ours.psnr,
        bicubic.psnr
    );
}

#[test]
fn ablation_grid_shape_and_labels() {
    let train = tiny_dataset(4, 55);
    let holdout = tiny_dataset(3, 56);
    let cfg = TrainConfig {
        train_dir: train.path().to_str().unwrap().into(),
        holdout_dir: holdout.path().to_str().unwrap().into(),
        batch_size: 2,
        pretrain_steps: 1,
        gan_steps: 1,
        refine_steps: 1,
        ..TrainConfig::default()
    };
    let report = ablation_run(&cfg, &untrained_classifier()).unwrap();
    let labels: Vec<&str> = report.report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(labels, vec!["baseline", "+matting", "+charloss", "full"]);
    for row in &report.report.rows {
        assert!(row.rmse.is_finite() && row.psnr.is_finite());
    }
    assert_eq!(
        report.dataset_hash,
        Dataset::load(train.path()).unwrap().hash().unwrap()
    );
    assert_eq!(report.config_hash, cfg.hash());
    let csv = report.report.render_csv();
    assert!(csv.lines().count() == 5);
}
