use cloudless_web::{coverage_bins, coverage_sweep, Scene};

#[test]
fn scene_buffers_have_rgba_size() {
    let s = Scene::build(3, 32, 0.4, 4.0).unwrap();
    for buf in [s.clean_rgba(), s.cloudy_rgba(), s.mask_rgba(), s.radar_rgba()] {
        assert_eq!(buf.len(), 32 * 32 * 4);
        assert!(buf.chunks(4).all(|px| px[3] == 255));
    }
    assert!((s.coverage() - 0.4).abs() <= 0.02);
}

#[test]
fn cloud_free_scene_scores_perfectly() {
    let m = Scene::build(1, 16, 0.0, 4.0).unwrap().metrics();
    assert_eq!(m.psnr(), 100.0);
    assert!((m.ssim() - 1.0).abs() < 1e-9);
    assert_eq!(m.masked_l1(), 0.0);
}

#[test]
fn more_cloud_means_lower_psnr() {
    let sweep = coverage_sweep(5, 32).unwrap();
    assert_eq!(sweep.len(), coverage_bins().len());
    assert!(sweep.windows(2).all(|w| w[1] < w[0]), "{sweep:?}");
}

#[test]
fn bad_arguments_are_reported() {
    assert!(Scene::build(0, 4, 0.5, 4.0).is_err());
    assert!(Scene::build(0, 16, 0.5, 0.5).is_err());
    assert!(Scene::build(0, 16, 1.5, 4.0).is_err());
}
