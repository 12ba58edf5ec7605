//! Fixture files for driving the binary.
#![allow(dead_code)]

#[path = "../../../core/tests/support/mod.rs"]
pub mod support;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurolens::tensorio::{write_concepts, write_tensor};
use neurolens::{TensorMeta, TensorTag};
use support::planted::{planted, Planted, PlantedSpec};

pub struct Fixture {
    pub dir: PathBuf,
    pub activations: PathBuf,
    pub image_emb: PathBuf,
    pub text_emb: PathBuf,
    pub concepts: PathBuf,
    pub planted: Planted,
}

/// Writes a planted layer as the tensor files an extractor would produce.
pub fn write_fixture(dir: &Path, spec: &PlantedSpec) -> Fixture {
    let p = planted(spec);
    let activations = dir.join("acts");
    let image_emb = dir.join("image");
    let text_emb = dir.join("text");
    let concepts = dir.join("concepts.txt");
    let (k, n) = p.acts.values().dim();
    write_tensor(
        &activations,
        p.acts.values().view(),
        &TensorMeta::new("layer4", TensorTag::Activations, k, n)
            .with_layer("layer4")
            .with_summary(neurolens::SummaryKind::Mean),
    )
    .unwrap();
    let (rows, dim) = p.image.dim();
    write_tensor(
        &image_emb,
        p.image.view(),
        &TensorMeta::new("probe", TensorTag::ImageEmbeddings, rows, dim).with_encoder("stub"),
    )
    .unwrap();
    let (rows, dim) = p.text.dim();
    write_tensor(
        &text_emb,
        p.text.view(),
        &TensorMeta::new("concepts", TensorTag::TextEmbeddings, rows, dim).with_encoder("stub"),
    )
    .unwrap();
    write_concepts(&concepts, &p.concepts).unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        activations,
        image_emb,
        text_emb,
        concepts,
        planted: p,
    }
}

pub fn neurolens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurolens"))
        .args(args)
        .env_remove("NEUROLENS_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn dissect_args<'a>(f: &'a Fixture, out: &'a Path) -> Vec<String> {
    vec![
        "dissect".into(),
        "--activations".into(),
        f.activations.display().to_string(),
        "--image-emb".into(),
        f.image_emb.display().to_string(),
        "--text-emb".into(),
        f.text_emb.display().to_string(),
        "--concepts".into(),
        f.concepts.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]
}

pub fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    neurolens(&refs)
}
