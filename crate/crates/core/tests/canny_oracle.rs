mod common;

use common::{ramp_fixture, reference_canny, step_fixture};
use isl_core::nn::Rng;
use isl_core::preproc::{canny, run_pipeline, GrayImage, PipelineConfig, RgbImage, Stage};

fn library(w: usize, h: usize, px: &[u8], low: f64, high: f64, gaussian: bool) -> Vec<u8> {
    let img = GrayImage::from_raw(w, h, px.to_vec()).unwrap();
    let cfg = PipelineConfig { canny_low: low, canny_high: high, gaussian, ..PipelineConfig::default() };
    canny(&img, &cfg).unwrap().pixels().to_vec()
}

fn random_image(seed: u64, w: usize, h: usize) -> Vec<u8> {
    let mut rng = Rng::new(seed);
    (0..w * h).map(|_| rng.below(256) as u8).collect()
}

#[test]
fn random_images_match_reference() {
    for seed in 0..100 {
        let px = random_image(seed, 16, 16);
        for (low, high, gaussian) in [(50.0, 150.0, true), (50.0, 150.0, false), (20.0, 60.0, true), (100.0, 400.0, false)] {
            assert_eq!(
                library(16, 16, &px, low, high, gaussian),
                reference_canny(16, 16, &px, low, high, gaussian),
                "seed {seed} thresholds {low}/{high} gaussian {gaussian}"
            );
        }
    }
}

#[test]
fn fixtures_match_reference() {
    let fixtures = [
        ("step", step_fixture(16, 16, 8)),
        ("step-edge", step_fixture(16, 16, 1)),
        ("ramp", ramp_fixture(16, 16, 16)),
        ("steep-ramp", ramp_fixture(16, 16, 40)),
        ("constant", vec![77; 256]),
    ];
    for (name, px) in &fixtures {
        for gaussian in [true, false] {
            let got = library(16, 16, px, 50.0, 150.0, gaussian);
            assert_eq!(got, reference_canny(16, 16, px, 50.0, 150.0, gaussian), "{name} gaussian {gaussian}");
        }
    }
    assert!(library(16, 16, &fixtures[4].1, 50.0, 150.0, true).iter().all(|&p| p == 0));
    let step = library(16, 16, &fixtures[0].1, 50.0, 150.0, true);
    assert!((0..16).all(|y| step[y * 16 + 7] == 1));
    assert_eq!(step.iter().map(|&p| p as usize).sum::<usize>(), 16);
}

#[test]
fn pipeline_canny_stage_matches_reference() {
    for seed in 0..20 {
        let gray = random_image(1000 + seed, 16, 16);
        let rgb: Vec<u8> = gray.iter().flat_map(|&g| [g, g, g]).collect();
        let cfg = PipelineConfig {
            target_size: [16, 16],
            stages: vec![Stage::Grayscale, Stage::Canny],
            ..PipelineConfig::default()
        };
        let t = run_pipeline(&RgbImage::from_raw(16, 16, rgb).unwrap(), &cfg).unwrap();
        let got: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
        assert_eq!(got, reference_canny(16, 16, &gray, 50.0, 150.0, true), "seed {seed}");
    }
}

#[test]
fn non_square_and_larger_images() {
    for seed in 0..10 {
        let px = random_image(500 + seed, 23, 11);
        assert_eq!(library(23, 11, &px, 50.0, 150.0, true), reference_canny(23, 11, &px, 50.0, 150.0, true));
    }
}
