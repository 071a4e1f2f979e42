//! Fuzz bodies, one per decoder entry point. Shared by the libFuzzer
//! targets and the stable corpus replay test.
#![allow(dead_code)]

use tryon_cli::config::RunConfig;
use tryon_core::dataset::DatasetManifest;
use tryon_core::image::{Image, Mask};
use tryon_core::perceptual::FeatureEncoder;
use tryon_core::sampler::{parse_presets, SamplerConfig};
use tryon_core::schema::{load_schema, parse_params_document, ParameterSchema, RendererId};
use tryon_tensor::io::{decode, encode};

pub fn tensor_file(data: &[u8]) {
    if let Ok(tensors) = decode(data) {
        // Re-encoding a decoded file is a fixed point.
        let once = encode(tensors.iter().map(|(n, t)| (n.as_str(), t)));
        let again = decode(&once).expect("re-encoded file decodes");
        assert_eq!(once, encode(again.iter().map(|(n, t)| (n.as_str(), t))));
    }
}

pub fn feature_weights(data: &[u8]) {
    if let Ok(enc) = FeatureEncoder::from_bytes(data) {
        let bytes = enc.to_bytes();
        assert_eq!(FeatureEncoder::from_bytes(&bytes).expect("round trip").to_bytes(), bytes);
    }
}

pub fn png(data: &[u8]) {
    if let Ok(img) = Image::from_png(data) {
        assert_eq!(img.data.len(), img.num_pixels() * 3);
    }
    let _ = Mask::from_png(data);
}

pub fn params_document(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for id in [RendererId::Lipstick, RendererId::Hair] {
        let schema = load_schema(id);
        if let Ok(g) = parse_params_document(&schema, text) {
            assert_eq!(g.values.len(), schema.m());
            let _ = schema.validate(&g);
        }
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(text) {
            let _ = schema.params_from_json(&v);
        }
    }
}

pub fn presets(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for id in [RendererId::Lipstick, RendererId::Hair] {
        let _ = parse_presets(text, &load_schema(id));
    }
}

pub fn schema(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(s) = ParameterSchema::from_json(text) {
        let again = ParameterSchema::from_json(&s.to_json()).expect("round trip");
        assert_eq!(again.hash(), s.hash());
    }
}

pub fn sampler_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = SamplerConfig::from_json(text) {
        let _ = SamplerConfig::from_json(&cfg.to_json()).expect("round trip");
    }
}

pub fn dataset_manifest(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = DatasetManifest::from_json(text);
    }
}

pub fn run_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json(text) {
        assert_eq!(RunConfig::from_json(&cfg.to_json()).expect("round trip"), cfg);
    }
}
