use proptest::prelude::*;
use radionet::dataset::{generate_dataset, Dataset, GenerationSpec};
use radionet::io::image::ramp;
use radionet::io::{config_digest, Checkpoint, GrayImage, RunConfig};
use radionet::model::{ModelConfig, RadioNet, Variant};
use radionet::nn::ParamStore;
use radionet::oracle::OracleConfig;
use radionet::scene::SceneParams;
use radionet::tensor::RngState;
use radionet::train::{TrainConfig, Trainer};
use radionet::Error;

fn tiny_data(n: usize) -> Dataset {
    let spec = GenerationSpec {
        count: n,
        seed: 4,
        input_res: 32,
        output_res: 16,
        scene: SceneParams::default(),
        oracle: OracleConfig { n_rays: 720, ..OracleConfig::default() },
    };
    generate_dataset(&spec, &|_| {}).unwrap()
}

fn same_values(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|((na, ta), (nb, tb))| na == nb && ta.data() == tb.data())
}

fn trainer(iterations: usize) -> Trainer {
    let model = RadioNet::new(ModelConfig::tiny(Variant::RadioNet), &mut RngState::new(5)).unwrap();
    let cfg = TrainConfig { lr: 1e-3, batch_size: 2, iterations, seed: 8, eval_every: 1, ..TrainConfig::default() };
    Trainer::new(model, cfg, (0..3).collect()).unwrap()
}

#[test]
fn checkpoint_round_trips_byte_exactly() {
    let data = tiny_data(3);
    let mut t = trainer(2);
    t.run(&data, None, &mut |_| {}).unwrap();
    let bytes = Checkpoint::from_trainer(&t).to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.iteration, 2);
    assert_eq!(&bytes[..4], b"RNCK");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rnck");
    back.write(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let model = Checkpoint::read(&path).unwrap().restore_model(None).unwrap();
    assert!(same_values(&model.params, &t.model.params));
}

#[test]
fn checkpoint_refuses_other_config() {
    let t = trainer(1);
    let ck = Checkpoint::from_model(&t.model, 0);
    assert!(ck.restore_model(Some(&ModelConfig::tiny(Variant::RadioNet))).is_ok());
    let other = ModelConfig::tiny(Variant::RadioNetNoSkip);
    assert!(matches!(ck.restore_model(Some(&other)), Err(Error::Config(_))));
    let mut tampered = ck.clone();
    tampered.config_text = tampered.config_text.replace("ch = 4", "ch = 8");
    assert!(matches!(tampered.restore_model(None), Err(Error::Format(_))));
}

#[test]
fn checkpoint_rejects_corruption() {
    let t = trainer(1);
    let bytes = Checkpoint::from_model(&t.model, 0).to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let data = tiny_data(3);
    let mut full = trainer(4);
    full.run(&data, None, &mut |_| {}).unwrap();

    let mut first = trainer(2);
    first.run(&data, None, &mut |_| {}).unwrap();
    let ck = Checkpoint::from_bytes(&Checkpoint::from_trainer(&first).to_bytes().unwrap()).unwrap();
    let mut resumed = ck
        .restore_trainer(None, TrainConfig { iterations: 4, ..first.cfg.clone() }, (0..3).collect())
        .unwrap();
    assert_eq!(resumed.iteration, 2);
    let curve = resumed.run(&data, None, &mut |_| {}).unwrap();
    assert_eq!(curve.first().unwrap().iteration, 3);
    assert_eq!(resumed.iteration, 4);
    assert!(same_values(&resumed.model.params, &full.model.params));
}

#[test]
fn config_digest_tracks_architecture() {
    let a = ModelConfig::tiny(Variant::RadioNet);
    let mut b = a.clone();
    assert_eq!(config_digest(&a), config_digest(&b));
    b.patch_grid = 2;
    assert_ne!(config_digest(&a), config_digest(&b));
    for v in Variant::ALL {
        let c = ModelConfig::build_variant(v);
        assert_eq!(ModelConfig::from_canonical(&c.canonical()).unwrap(), c);
    }
}

#[test]
fn run_config_round_trips() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    let text = "# desk run\nmodel.variant = unet\ntrain.lr = 0.0003\ntrain.split = 4:1\noracle.n_rays = 720\n";
    let c = RunConfig::parse(text).unwrap();
    assert_eq!(c.model, ModelConfig::build_variant(Variant::Unet));
    assert_eq!(c.train.lr, 3e-4);
    assert_eq!(c.train.split, (4, 1));
    assert_eq!(c.oracle.n_rays, 720);
    assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
}

#[test]
fn run_config_rejects_bad_input() {
    assert!(matches!(RunConfig::parse("train.momentum = 0.9"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::parse("model.foo = 1"), Err(Error::Config(_))));
    assert!(RunConfig::parse("train.lr = fast").is_err());
    assert!(RunConfig::parse("train.lr 0.1").is_err());
    assert!(RunConfig::parse("train.lr = 0.1\ntrain.lr = 0.2").is_err());
    let err = RunConfig::parse("model.variant = resnet").unwrap_err().to_string();
    assert!(err.contains("radionet_no_skip") && err.contains("unet"), "{err}");
}

#[test]
fn run_config_variant_switch_keeps_shape() {
    let mut c = RunConfig::default();
    c.model = ModelConfig::tiny(Variant::RadioNet);
    for v in Variant::ALL {
        let s = c.with_variant(v);
        assert_eq!(s.model.variant, v);
        assert_eq!(s.model.input_res, 32);
        s.model.validate().unwrap();
    }
}

proptest! {
    #[test]
    fn run_config_every_key_round_trips(lr in 1e-6f64..1.0, batch in 1usize..64, rays in 360usize..9000,
                                          gap in 0.0f64..10.0, bounces in 0usize..5, v in 0usize..6) {
        let mut c = RunConfig::default().with_variant(Variant::ALL[v]);
        c.train.lr = lr;
        c.train.batch_size = batch;
        c.oracle.n_rays = rays;
        c.oracle.max_bounces = bounces;
        c.scene.building_gap_m = gap;
        let text = c.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_text(), text);
    }
}

#[test]
fn image_intensity_mapping() {
    let img = GrayImage::from_power_db(&[-250.0, -70.0, -160.0, -300.0, 0.0, -250.0], 3, 2, -250.0, -70.0).unwrap();
    assert_eq!(img.pixels, vec![0, 255, 128, 0, 255, 0]);
    let pgm = img.to_pgm();
    assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
    assert_eq!(GrayImage::from_pgm(&pgm).unwrap(), img);
    assert!(GrayImage::from_power_db(&[0.0; 5], 3, 2, -250.0, -70.0).is_err());
}

#[test]
fn error_image_black_for_exact_prediction() {
    let m: Vec<f32> = (0..256).map(|i| i as f32 / 255.0).collect();
    let img = GrayImage::error_map(&m, &m, 16, 16).unwrap();
    assert_eq!((img.width, img.height), (16, 16));
    assert!(img.pixels.iter().all(|&p| p == 0));
    let off: Vec<f32> = m.iter().map(|x| 1.0 - x).collect();
    assert_eq!(GrayImage::error_map(&m, &off, 16, 16).unwrap().pixels[0], 255);
}

#[test]
fn color_ramp_endpoints() {
    assert_eq!(ramp(0), [0, 0, 0]);
    assert_eq!(ramp(255), [255, 255, 255]);
    let img = GrayImage { width: 2, height: 1, pixels: vec![0, 255] };
    assert_eq!(img.to_ppm(), [b"P6\n2 1\n255\n".as_slice(), &[0, 0, 0, 255, 255, 255]].concat());
}
