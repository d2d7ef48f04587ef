mod common;

use dilseg_nn::data::{SampleLayout, SliceDataset};
use dilseg_nn::folds::make_folds;
use dilseg_nn::networks::{Architecture, NetworkSpec};
use dilseg_nn::predict::{binarize, predict_case};
use dilseg_nn::train::{StopReason, cross_validate, log_csv, train_model, validation_dice};

fn spec() -> NetworkSpec {
    NetworkSpec::new(Architecture::MrrnDs).with_base_width(4)
}

#[test]
fn training_is_bitwise_reproducible_and_learns() {
    let cases = common::phantom_cases(2, 32, 21);
    let refs: Vec<_> = cases.iter().collect();
    let config = dilseg_nn::config::TrainConfig { lr: 3e-3, ..common::quick_config(6) };
    let a = train_model(&spec(), &config, &refs, &[]).unwrap();
    let b = train_model(&spec(), &config, &refs, &[]).unwrap();
    assert_eq!(a.first_batch_loss.to_bits(), b.first_batch_loss.to_bits());
    assert_eq!(log_csv(&a.log), log_csv(&b.log));
    assert_eq!(a.log.len(), 6);
    assert_eq!(a.stop, StopReason::Completed);
    assert!(a.best_val_dice.is_none());
    let (first, last) = (a.log[0].train_loss, a.log.last().unwrap().train_loss);
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn best_validation_weights_are_restored() {
    let cases = common::phantom_cases(3, 32, 4);
    let (train, val) = (vec![&cases[0], &cases[1]], vec![&cases[2]]);
    let config = dilseg_nn::config::TrainConfig { early_stop_patience: 2, ..common::quick_config(5) };
    let out = train_model(&spec(), &config, &train, &val).unwrap();
    let best = out.best_val_dice.unwrap();
    let logged = out.log[out.best_epoch].val_dice.unwrap();
    assert_eq!(best, logged);
    assert!(out.log.iter().all(|r| r.val_dice.unwrap() <= best));
    let ds = SliceDataset::new(val, SampleLayout::for_spec(&spec())).unwrap();
    let again = validation_dice(&out.network, &ds, config.batch_size).unwrap();
    assert!((again - best).abs() < 1e-9, "{again} vs {best}");
}

#[test]
fn cross_validation_holds_out_each_fold_once() {
    let cases = common::phantom_cases(4, 32, 8);
    let patients: Vec<_> = cases.iter().map(|c| (c.sidecar.case_id.clone(), 0)).collect();
    let folds = make_folds(&patients, 2, 1, false).unwrap();
    let config = common::quick_config(1);
    let seen = cross_validate(&spec(), &config, &cases, &folds, |fold, outcome| {
        assert!(outcome.best_val_dice.is_some());
        Ok(fold)
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1]);
    let mut held: Vec<&str> = (0..2).flat_map(|f| folds.members(f)).collect();
    held.sort();
    held.dedup();
    assert_eq!(held.len(), 4);
}

#[test]
fn predictions_come_back_on_the_original_grid() {
    use dilseg_core::phantom::{PhantomConfig, case_rng, generate_case};
    use dilseg_core::preprocess::{Normalization, PreprocessConfig, preprocess_volumes};
    let pc = PhantomConfig {
        dims: [40, 36, 6],
        gland_semi_axes_mm: [8.0, 7.0, 6.0],
        lesion_count: [1, 1],
        lesion_median_cc: 0.15,
        lesion_volume_range_cc: [0.1, 0.25],
        lesion_radius_range_mm: [1.5, 6.0],
        ..Default::default()
    };
    let raw = generate_case(&pc, &mut case_rng(2, 0)).unwrap();
    // larger than the grid, so the crop pads
    let pre = PreprocessConfig { normalization: Normalization::ZScore, crop_size: [64, 64], ..Default::default() };
    let case = preprocess_volumes("p", &raw.image, &raw.mask, Some(&raw.prostate), &pre).unwrap();
    for arch in [Architecture::Unet, Architecture::FpsnetSl] {
        let spec = NetworkSpec::new(arch).with_base_width(if arch.is_fps() { 8 } else { 4 });
        let net = dilseg_nn::networks::build_network(&spec, 0).unwrap();
        let prob = predict_case(&net, &case, 2).unwrap();
        assert_eq!(prob.dims_xyz(), raw.image.dims_xyz(), "{arch}");
        assert!(prob.data().iter().all(|p| (0.0..=1.0).contains(p)));
        let mask = binarize(&prob, 0.5);
        assert_eq!(mask.dims_xyz(), raw.mask.dims_xyz());
    }
}
