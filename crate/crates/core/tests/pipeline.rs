use dilseg_core::evaluation::{EvalOptions, MatchStatus, evaluate_case};
use dilseg_core::manifest::{load_manifest, save_manifest};
use dilseg_core::phantom::{PhantomConfig, generate_dataset};
use dilseg_core::preprocess::{PreprocessConfig, load_preprocessed, preprocess_case, restore_probability, save_preprocessed};
use dilseg_core::volumes::{Volume, load_label_volume, load_scalar_volume};

fn phantom(spacing: [f32; 3]) -> PhantomConfig {
    PhantomConfig {
        dims: [48, 44, 10],
        spacing,
        gland_semi_axes_mm: [11.0, 9.0, 12.0],
        lesion_count: [1, 2],
        lesion_median_cc: 0.3,
        lesion_volume_range_cc: [0.15, 0.6],
        seed: 13,
        ..Default::default()
    }
}

/// Writes a phantom dataset, reloads it through the manifest and feeds the
/// preprocessed ground truth back as a prediction. Returns the per-case
/// evaluations.
fn round_trip(spacing: [f32; 3]) -> Vec<dilseg_core::evaluation::CaseEvaluation> {
    let dir = tempfile::tempdir().unwrap();
    let cases = generate_dataset(&phantom(spacing), 3, dir.path()).unwrap();
    let manifest = dir.path().join("manifest.json");
    save_manifest(&cases, &manifest).unwrap();
    let loaded = load_manifest(&manifest).unwrap().into_result().unwrap();
    assert_eq!(loaded.len(), 3);
    assert!(loaded.iter().flat_map(|c| &c.lesions).all(|l| l.volume_cc.is_some()));

    let config = PreprocessConfig { crop_size: [48, 48], ..Default::default() };
    let mut evaluations = Vec::new();
    for case in &loaded {
        let pre = preprocess_case(case, &config).unwrap();
        let stored = dir.path().join("pre").join(&case.case_id);
        save_preprocessed(&pre, &stored).unwrap();
        let back = load_preprocessed(&stored).unwrap();
        assert_eq!(back.image.data(), pre.image.data());
        assert_eq!(back.mask.data(), pre.mask.data());
        assert_eq!(back.sidecar, pre.sidecar);

        let prob = pre.mask.map(|&v| if v > 0 { 1.0f32 } else { 0.0 });
        let restored = restore_probability(&prob, &pre.sidecar).unwrap();
        let gt = load_label_volume(&case.mask_path).unwrap();
        assert_eq!(restored.dims_xyz(), gt.dims_xyz());
        let prediction: Volume<bool> = restored.map(|&p| p > 0.5);
        let prostate = load_label_volume(case.prostate_mask_path.as_ref().unwrap()).unwrap();
        let image = load_scalar_volume(&case.image_path).unwrap();
        let options = EvalOptions::default();
        evaluations.push(
            evaluate_case(&case.case_id, &gt, &prediction, &case.lesions, Some(&prostate), Some(&image), &options).unwrap(),
        );
    }
    evaluations
}

#[test]
fn ground_truth_survives_preprocessing_on_the_target_grid() {
    for eval in round_trip([0.625, 0.625, 3.0]) {
        assert_eq!(eval.fp_count, 0);
        assert_eq!(eval.fn_count, 0);
        assert!(eval.tp_count >= 1);
        for lesion in &eval.lesions {
            assert!(lesion.detected);
            assert_eq!(lesion.dsc, 1.0);
            assert!(lesion.median_adc.is_some());
        }
    }
}

#[test]
fn ground_truth_survives_resampling() {
    let evals = round_trip([0.5, 0.5, 2.5]);
    for eval in &evals {
        assert_eq!(eval.fp_count, 0, "{}", eval.case_id);
        for m in &eval.matches {
            assert_ne!(m.status, MatchStatus::FalseNegative, "{}: {m:?}", eval.case_id);
        }
        for lesion in &eval.lesions {
            assert!(lesion.dsc > 0.6, "{}: {}", eval.case_id, lesion.dsc);
        }
    }
}

#[test]
fn empty_prediction_misses_every_lesion() {
    let dir = tempfile::tempdir().unwrap();
    let cases = generate_dataset(&phantom([0.625, 0.625, 3.0]), 1, dir.path()).unwrap();
    let case = &cases[0];
    let gt = load_label_volume(dir.path().join(&case.mask_path)).unwrap();
    let empty = gt.map(|_| false);
    let eval = evaluate_case("c", &gt, &empty, &case.lesions, None, None, &EvalOptions::default()).unwrap();
    assert_eq!(eval.tp_count, 0);
    assert_eq!(eval.fp_count, 0);
    assert_eq!(eval.fn_count + eval.ignored_count, case.lesions.len());
    assert!(eval.out_of_gland_fp_count.is_none());
}
