mod common;

use std::fs;

use protonet::checkpoint::{load_model, load_pretrained, read_tensors, save_model, write_tensors, CheckpointMeta, NamedTensor};
use protonet::embeddings::{read_psemb, read_psemb_text, write_psemb, write_psemb_text};
use protonet::ingest::{ingest_images, write_images};
use protonet::manifest::{read_manifest, read_psc1, write_episode_dump, write_manifest, write_psc1, Packed, Payload};
use protonet_core::dataset::{ClassKey, ImageView, SourceImage, View};
use protonet_core::episode::{episode_stream, test_pool, EpisodeSpec};
use protonet_core::experiment::{train_cell, CellModel, ExperimentConfig, Mode};
use protonet_core::metrics::EmbeddingDump;
use protonet_core::nn::{Encoder, EncoderKind, Tensor};
use protonet_core::proto::patch_batch;

#[test]
fn manifest_round_trips_in_both_payloads() {
    let m = common::manifest(12, 8, 4);
    for payload in [Payload::Png, Payload::Psc1] {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &m, payload).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert_eq!(read_manifest(&path).unwrap(), m);
    }
}

#[test]
fn psc1_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.psc1");
    let packed = Packed {
        count: 2,
        height: 2,
        width: 3,
        channels: 3,
        data: (0..36).map(|i| i as f32 * 0.5 - 3.0).collect(),
    };
    write_psc1(&path, &packed).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"PSC1");
    assert_eq!(bytes.len(), 20 + 36 * 4);
    assert_eq!(read_psc1(&path).unwrap(), packed);
    fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(read_psc1(&path).is_err());
}

fn dump() -> EmbeddingDump {
    let vectors = vec![0.1f32, -0.0, 1e-38, f32::MIN_POSITIVE / 3.0, f32::MAX, -7.25, 3.0e-7, 123456.79];
    let labels = vec![ClassKey::Ww, ClassKey::Cys, ClassKey::Ua, ClassKey::Str];
    EmbeddingDump::new(2, vectors, labels, View::Mix, "abc123".into()).unwrap()
}

fn bits(d: &EmbeddingDump) -> Vec<u32> {
    d.vectors.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn embedding_dumps_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dump();
    let bin = dir.path().join("e.psemb");
    let txt = dir.path().join("e.txt");
    write_psemb(&bin, &d).unwrap();
    write_psemb_text(&txt, &d).unwrap();
    assert_eq!(&fs::read(&bin).unwrap()[..6], b"PSEMB1");
    for back in [read_psemb(&bin).unwrap(), read_psemb_text(&txt).unwrap()] {
        assert_eq!(bits(&back), bits(&d));
        assert_eq!((back.dim, &back.labels, back.view, &back.config_hash), (d.dim, &d.labels, d.view, &d.config_hash));
    }
}

#[test]
fn empty_embedding_dump_is_rejected() {
    assert!(EmbeddingDump::new(4, vec![], vec![], View::Sur, "h".into()).is_err());
}

fn config(mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        backbone: EncoderKind::TinyTestCnn,
        k_shot: 2,
        n_query: 2,
        train_iterations: 3,
        eval_episodes: 2,
        mode,
        ..ExperimentConfig::default()
    }
}

fn meta(c: &ExperimentConfig, classes: Option<Vec<ClassKey>>) -> CheckpointMeta {
    CheckpointMeta {
        backbone: c.backbone,
        dim: c.backbone.embedding_dim(),
        pretrained: false,
        mode: c.mode,
        config_hash: c.config_hash(),
        step: c.train_iterations,
        final_loss: Some(0.5),
        classes,
        config: Some(*c),
        artifact_version: protonet::ARTIFACT_VERSION.into(),
    }
}

#[test]
fn checkpoints_reproduce_model_outputs() {
    let m = common::manifest(12, 8, 5);
    let input: Tensor<f32> = patch_batch(&m, &[0, 5, 17]).unwrap();
    for mode in [Mode::Prototypical, Mode::Baseline] {
        let c = config(mode);
        let trained = train_cell::<f32>(&c, &m, Encoder::new(c.backbone, 1)).unwrap();
        let classes = match &trained.model {
            CellModel::Baseline(cl) => Some(cl.classes.clone()),
            CellModel::Prototypical(_) => None,
        };
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ck");
        let want = meta(&c, classes);
        save_model(&stem, &trained.model, &want).unwrap();
        let (loaded, got) = load_model::<f32>(&stem).unwrap();
        assert_eq!(got, want);
        let out = |model: &CellModel<f32>| match model {
            CellModel::Prototypical(e) => e.forward(&input).data,
            CellModel::Baseline(cl) => cl.logits(&input).data,
        };
        assert_eq!(out(&loaded), out(&trained.model));
        assert_eq!(loaded.encoder().state_hash(), trained.model.encoder().state_hash());
    }
}

#[test]
fn pretrained_blobs_load_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let blob = dir.path().join("w.bin");
    let source = Encoder::<f32>::new(EncoderKind::TinyTestCnn, 8);
    let mut tensors: Vec<NamedTensor> = source
        .state()
        .into_iter()
        .map(|(name, shape, values)| NamedTensor { name, shape, values })
        .collect();
    tensors.push(NamedTensor {
        name: "fc.weight".into(),
        shape: vec![2, 2],
        values: vec![0.0; 4],
    });
    write_tensors(&blob, &tensors).unwrap();
    assert_eq!(read_tensors(&blob).unwrap(), tensors);

    let mut target = Encoder::<f32>::new(EncoderKind::TinyTestCnn, 9);
    let ignored = load_pretrained(&mut target, &blob).unwrap();
    assert_eq!(ignored, vec!["fc.weight".to_string()]);
    assert!(target.pretrained);
    assert_eq!(target.state_hash(), source.state_hash());

    tensors.remove(0);
    write_tensors(&blob, &tensors).unwrap();
    assert!(load_pretrained(&mut target, &blob).is_err());
}

fn image(id: &str, class: ClassKey, w: usize, h: usize) -> SourceImage {
    SourceImage::new(id, class, ImageView::Sur, w, h, (0..w * h * 3).map(|i| (i % 251) as u8).collect()).unwrap()
}

#[test]
fn ingest_reads_layout_and_skips_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_images(root, &[image("b", ClassKey::Ww, 20, 12), image("a", ClassKey::Ww, 16, 16), image("c", ClassKey::Cys, 8, 8)]).unwrap();
    fs::write(root.join("SUR/WW/notes.txt"), "x").unwrap();
    fs::write(root.join("SUR/WW/broken.png"), "not a png").unwrap();

    let got = ingest_images(root, ImageView::Sur).unwrap();
    let ids: Vec<&str> = got.images.iter().map(|i| i.image_id.as_str()).collect();
    assert_eq!(ids, ["SUR_CYS_c", "SUR_WW_a", "SUR_WW_b"]);
    assert_eq!((got.images[2].width, got.images[2].height), (20, 12));
    assert_eq!(got.images[1].pixels, image("a", ClassKey::Ww, 16, 16).pixels);
    assert_eq!(got.warnings.len(), 2);

    let empty = ingest_images(root, ImageView::Sec).unwrap();
    assert!(empty.images.is_empty() && !empty.warnings.is_empty());

    fs::create_dir_all(root.join("SUR/QUARTZ")).unwrap();
    assert!(ingest_images(root, ImageView::Sur).is_err());
}

#[test]
fn episode_dump_lists_roles() {
    let m = common::manifest(12, 8, 6);
    let pool = test_pool(&m, 1);
    let spec = EpisodeSpec::new(3, 1, 1, 2).unwrap();
    let episodes: Vec<_> = episode_stream(&pool, &spec, 2).unwrap().collect::<Result<_, _>>().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.jsonl");
    write_episode_dump(&path, &episodes, &m).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["support"].as_array().unwrap().len(), 3);
    assert_eq!(first["query"][0]["patch_id"], m.records[episodes[0].query[0].record].patch_id.as_str());
}
