#![allow(dead_code)]

use std::path::PathBuf;

use chrono::NaiveDate;
use image::DynamicImage;
use reid_core::catalog::{ImageRecord, Orientation};
use reid_core::features::{extract_features, FeatureSet, GrayImage, SiftParams};
use reid_core::par::Execution;
use reid_core::synthgen::{plan_dataset, DatasetPlan, SynthConfig};

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

pub fn rec(id: &str, ind: Option<&str>, d: Option<NaiveDate>) -> ImageRecord {
    ImageRecord {
        image_id: id.into(),
        individual_id: ind.map(String::from),
        date: d,
        orientation: Orientation::Left,
        image_path: PathBuf::from(format!("{id}.png")),
        bbox: None,
    }
}

pub fn gray(rgb: &image::RgbImage) -> GrayImage {
    GrayImage::from_dynamic(&DynamicImage::ImageRgb8(rgb.clone()))
}

pub struct Rendered {
    pub plan: DatasetPlan,
    pub images: Vec<(String, GrayImage)>,
}

pub fn render(cfg: &SynthConfig) -> Rendered {
    let plan = plan_dataset(cfg).unwrap();
    let images = plan
        .render_all(Execution::default())
        .into_iter()
        .map(|(id, rgb)| (id, gray(&rgb)))
        .collect();
    Rendered { plan, images }
}

pub fn extract(img: &GrayImage, params: &SiftParams) -> FeatureSet {
    extract_features(img, None, params).unwrap()
}

/// Proptest settings for integration tests: failing seeds are kept beside
/// the test file since there is no lib.rs to anchor them to.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: Some(Box::new(proptest::test_runner::FileFailurePersistence::WithSource("regressions"))),
        ..proptest::test_runner::Config::default()
    }
}
