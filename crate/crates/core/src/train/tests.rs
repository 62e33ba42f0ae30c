use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rsg::HashGridConfig;
use crate::scene::{
    generate_synthetic_scene, init_scene_graph, lateral_shift, CameraView, GroundTruth, InitConfig, SceneGraph,
    SyntheticSceneSpec,
};

fn small_init() -> InitConfig {
    let mut c = InitConfig {
        rsg_pitch: 1.0,
        billboard_pitch: 0.75,
        far_samples: 6,
        prior_steps: 20,
        ..Default::default()
    };
    c.sdf.grid = HashGridConfig {
        levels: 4,
        base_resolution: 4,
        max_resolution: 64,
        features_per_level: 2,
        log2_table_size: 10,
    };
    c
}

fn small_setup() -> (GroundTruth, Vec<CameraView>, SceneGraph, TrainConfig) {
    let mut spec = SyntheticSceneSpec::default();
    spec.image.width = 48;
    spec.image.height = 32;
    spec.image.fx = 30.0;
    spec.camera_path.count = 3;
    spec.supersample = 1;
    let (gt, views) = generate_synthetic_scene(&spec).unwrap();
    let mut config = TrainConfig::default().scaled(0.001);
    config.init = small_init();
    config.sdf_rays = 16;
    config.psnr_every = 0;
    let scene = init_scene_graph(&views, &spec, &config.init).unwrap();
    (gt, views, scene, config)
}

fn encoder() -> PseudoColorEncoder {
    PseudoColorEncoder::new(&mut ChaCha8Rng::seed_from_u64(0))
}

#[test]
fn all_extrapolated_batch_leaves_sdf_and_uncertainty_untouched() {
    let (gt, views, scene, config) = small_setup();
    let shifted: Vec<CameraView> = views.iter().map(|v| lateral_shift(v, 1.5).unwrap()).collect();
    let targets: Vec<_> = shifted.iter().map(|v| gt.render(&v.camera).0).collect();
    let items: Vec<TrainItem> = shifted
        .iter()
        .zip(&targets)
        .map(|(v, t)| TrainItem {
            view: v,
            pseudo_gt: Some(t),
        })
        .collect();
    let out = total_loss(&scene, &encoder(), &items, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(out.field.is_zero());
    assert!(out.scene.uncertainty_is_zero());
    assert!(out.terms.ex > 0.0);
    assert_eq!((out.terms.l1, out.terms.sdf, out.terms.nll), (0.0, 0.0, 0.0));
    assert!(out.encoder.iter().any(|g| *g != 0.0));
}

#[test]
fn all_original_batch_has_no_extrapolation_term() {
    let (_, views, scene, config) = small_setup();
    let items: Vec<TrainItem> = views
        .iter()
        .map(|v| TrainItem {
            view: v,
            pseudo_gt: None,
        })
        .collect();
    let out = total_loss(&scene, &encoder(), &items, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.terms.ex, 0.0);
    assert!(out.encoder.iter().all(|g| *g == 0.0));
    assert!(out.terms.l1 > 0.0 && out.terms.nll > 0.0 && out.terms.sdf > 0.0);
}

#[test]
fn mixed_batch_is_the_sum_of_single_views() {
    let (gt, views, scene, mut config) = small_setup();
    // the SDF term samples rays, so compare without it
    config.weights.sdf = 0.0;
    let shifted = lateral_shift(&views[1], -3.0).unwrap();
    let target = gt.render(&shifted.camera).0;
    let a = TrainItem {
        view: &views[0],
        pseudo_gt: None,
    };
    let b = TrainItem {
        view: &shifted,
        pseudo_gt: Some(&target),
    };
    let e = encoder();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let both = total_loss(&scene, &e, &[a, b], &config, &mut rng).unwrap().terms.total;
    let ta = total_loss(&scene, &e, &[a], &config, &mut rng).unwrap().terms.total;
    let tb = total_loss(&scene, &e, &[b], &config, &mut rng).unwrap().terms.total;
    assert!((both - (ta + tb)).abs() < 1e-12);
}

#[test]
fn extrapolated_view_without_target_is_an_error() {
    let (_, views, scene, config) = small_setup();
    let shifted = lateral_shift(&views[2], 1.5).unwrap();
    let items = [TrainItem {
        view: &shifted,
        pseudo_gt: None,
    }];
    let err = total_loss(&scene, &encoder(), &items, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, crate::Error::Provider { view_id: 2, .. }));
}

#[test]
fn phases_and_shifts_follow_the_stages() {
    let c = TrainConfig::desk();
    assert_eq!(phase_at(0, &c), Phase::A);
    assert_eq!(phase_at(299, &c), Phase::A);
    assert_eq!(phase_at(300, &c), Phase::B);
    assert_eq!(phase_at(350, &c), Phase::C);
    assert!(shifts_at(10, &c, 2).is_empty());
    assert_eq!(shifts_at(310, &c, 2), vec![1.5, 1.5]);
    assert_eq!(shifts_at(360, &c, 2), vec![1.5, 3.0]);
    let mut r = c.clone();
    r.ramp_shifts = true;
    assert!((shifts_at(300, &r, 1)[0] - 1.5 / 50.0).abs() < 1e-12);
    assert!((shifts_at(349, &r, 1)[0] - 1.5).abs() < 1e-12);
    assert!((shifts_at(399, &r, 2)[1] - 3.0).abs() < 1e-12);
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let (gt, views, scene, mut config) = small_setup();
    config.total_iters = 24;
    config.stage_iters = [16, 20];
    let provider = IdentityProvider::new(gt);
    let before = mean_psnr(&scene, &views, &config.raster).unwrap();
    let (a, _, logs) = run_schedule(&config, scene.clone(), &views, Some(&provider)).unwrap();
    assert_eq!(logs.len(), 24);
    assert_eq!(logs.iter().filter(|l| l.extrapolated > 0).count(), 8);
    assert!(logs.last().unwrap().psnr.is_some());
    let after = mean_psnr(&a, &views, &config.raster).unwrap();
    assert!(after > before, "{before} -> {after}");
    let (b, _, logs_b) = run_schedule(&config, scene, &views, Some(&provider)).unwrap();
    assert_eq!(a, b);
    assert_eq!(logs, logs_b);
}

#[test]
fn shift_stage_without_provider_fails_with_view_id() {
    let (_, views, scene, mut config) = small_setup();
    config.total_iters = 3;
    config.stage_iters = [1, 2];
    let err = run_schedule(&config, scene, &views, None).unwrap_err();
    assert!(matches!(err, crate::Error::Provider { .. }), "{err}");
}

#[test]
fn csv_rows_match_the_header() {
    let row = IterationLog {
        iteration: 3,
        phase: Phase::B,
        terms: LossTerms::default(),
        extrapolated: 2,
        skipped_groups: 0,
        psnr: None,
    };
    let cols = IterationLog::CSV_HEADER.split(',').count();
    assert_eq!(row.csv_row().split(',').count(), cols);
    assert!(row.csv_row().starts_with("3,B,"));
}
