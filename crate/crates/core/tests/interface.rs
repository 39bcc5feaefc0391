//! The flow pipeline only sees a codec through encode/decode; the same calls
//! must work in pixel space and in a learned latent space.

use flowseg::anchor::CategoryId;
use flowseg::checkpoint::{Checkpoint, Dtype, Model, Provenance};
use flowseg::dataset::{generate, paired_batch, ImageTaskSpec, SplitName, SplitSizes, TaskSpec};
use flowseg::flow::{self, FlowModel};
use flowseg::latent::{train_linear_autoencoder, AutoencoderConfig, LatentCodec};
use flowseg::sampler::{self, Direction, SolveConfig};
use flowseg::training::TrainConfig;
use flowseg::velocity::Architecture;
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(codec_for: impl Fn(&flowseg::dataset::Dataset) -> LatentCodec) -> (FlowModel, Vec<CategoryId>, ndarray::Array2<f64>) {
    let spec = TaskSpec::Image(ImageTaskSpec::default());
    let data = generate(&spec, 4, SplitSizes { train: 48, val: 4, test: 4 }).unwrap();
    let geometry = spec.geometry().unwrap();
    let codec = codec_for(&data);
    let arch = Architecture::for_shape(codec.latent_shape(geometry.data_shape()), false);
    let cfg = TrainConfig {
        steps: 4,
        batch_size: 8,
        eval_every: 4,
        seed: 4,
        ..TrainConfig::default()
    };
    let model = flow::train(&data, codec, arch, &cfg).unwrap().model;
    let solve = SolveConfig::euler(Direction::Forward, 3);
    let labels = sampler::segment(&model, data.test.images.view(), &solve).unwrap();
    let images = sampler::synthesize(&model, &data.test.layouts, None, 1, &solve.with_direction(Direction::Reverse)).unwrap();
    (model, labels, images)
}

fn linear_codec(data: &flowseg::dataset::Dataset) -> LatentCodec {
    let g = data.spec.geometry().unwrap();
    let idx: Vec<usize> = (0..data.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let id = LatentCodec::identity(g.sample_dim());
    let b = paired_batch(&data.train, SplitName::Train, &idx, &g, &id, None, &mut rng).unwrap();
    let stacked = ndarray::concatenate(Axis(0), &[b.z0.view(), b.z1.view()]).unwrap();
    let cfg = AutoencoderConfig {
        latent_dim: 48,
        steps: 50,
        ..AutoencoderConfig::default()
    };
    train_linear_autoencoder(stacked.view(), &cfg).unwrap().0
}

#[test]
fn identity_and_linear_codecs_share_one_interface() {
    let (m_id, l_id, x_id) = run(|d| LatentCodec::identity(d.spec.geometry().unwrap().sample_dim()));
    let (m_lin, l_lin, x_lin) = run(linear_codec);
    assert_eq!(m_id.codec.latent_dim(), 768);
    assert_eq!(m_lin.codec.latent_dim(), 48);
    // outputs live in pixel space either way
    assert_eq!(l_id.len(), l_lin.len());
    assert_eq!(x_id.dim(), x_lin.dim());
    assert_eq!(x_id.dim(), (4, 768));
}

#[test]
fn checkpoint_reload_reproduces_outputs_for_both_codecs() {
    for linear in [false, true] {
        let (model, labels, images) = if linear {
            run(linear_codec)
        } else {
            run(|d| LatentCodec::identity(d.spec.geometry().unwrap().sample_dim()))
        };
        let prov = Provenance { config_hash: "x".into(), steps: 4, seed: 4 };
        let bytes = Checkpoint::flow(model.clone(), prov).to_bytes(Dtype::F64).unwrap();
        let Model::Flow(back) = Checkpoint::from_bytes(&bytes).unwrap().model else {
            panic!("flow checkpoint came back as something else");
        };
        let spec = TaskSpec::Image(ImageTaskSpec::default());
        let data = generate(&spec, 4, SplitSizes { train: 48, val: 4, test: 4 }).unwrap();
        let solve = SolveConfig::euler(Direction::Forward, 3);
        assert_eq!(sampler::segment(&back, data.test.images.view(), &solve).unwrap(), labels);
        let again = sampler::synthesize(&back, &data.test.layouts, None, 1, &solve.with_direction(Direction::Reverse)).unwrap();
        assert_eq!(again, images);
    }
}
