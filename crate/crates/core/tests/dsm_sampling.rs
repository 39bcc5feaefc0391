use flowseg::anchor::CategoryId;
use flowseg::dataset::{generate, Dataset, PointTaskSpec, SplitSizes, TaskSpec};
use flowseg::dsm::{self, DsmModel, NoiseSchedule, SamplerMode, VarianceForm};
use flowseg::metrics::{agreement, miou};
use flowseg::training::TrainConfig;
use flowseg::velocity::{Architecture, Network};

fn data() -> Dataset {
    generate(&TaskSpec::Point(PointTaskSpec::default()), 1, SplitSizes { train: 2048, val: 256, test: 1024 }).unwrap()
}

fn trained(data: &Dataset, steps: usize) -> DsmModel {
    let cfg = TrainConfig {
        steps,
        eval_every: steps,
        eval_samples: 64,
        seed: 0,
        ..TrainConfig::default()
    };
    let shape = data.spec.geometry().unwrap().data_shape();
    dsm::train_dsm(data, Architecture::for_shape(shape, true), NoiseSchedule::default(), VarianceForm::Standard, &cfg)
        .unwrap()
        .model
}

#[test]
fn ddpm_seeds_disagree_on_some_points() {
    let d = data();
    let m = trained(&d, 300);
    let a = dsm::dsm_segment(&m, d.test.images.view(), 50, SamplerMode::Ddpm, 1).unwrap();
    let b = dsm::dsm_segment(&m, d.test.images.view(), 50, SamplerMode::Ddpm, 2).unwrap();
    let differ = 1.0 - agreement(&a, &b, CategoryId::VOID).unwrap();
    eprintln!("DDPM seed disagreement after 300 steps: {differ:.4}");
    assert!(differ > 0.0);
}

#[test]
fn untrained_model_is_near_chance() {
    let d = data();
    let g = d.spec.geometry().unwrap();
    let arch = Architecture::for_shape(g.data_shape(), true);
    let m = DsmModel::new(g, NoiseSchedule::default(), Network::new(arch, 0).unwrap(), VarianceForm::Standard).unwrap();
    let p = dsm::dsm_segment(&m, d.test.images.view(), 200, SamplerMode::Ddim, 0).unwrap();
    let r = miou(&p, &d.test.layouts, 4, CategoryId::VOID).unwrap();
    assert!(r.miou < 0.4, "{}", r.miou);
}

/// On the point task a trained model stays exact down to a 5-step stride and
/// only collapses at a single step, so this trend does not appear at T/8.
#[test]
#[ignore = "does not hold at toy scale: T/8 DDIM is as accurate as T (see README)"]
fn fewer_steps_lose_accuracy() {
    let d = data();
    let m = trained(&d, 2000);
    let acc = |steps| {
        let p = dsm::dsm_segment(&m, d.test.images.view(), steps, SamplerMode::Ddim, 0).unwrap();
        agreement(&p, &d.test.layouts, CategoryId::VOID).unwrap()
    };
    let (full, eighth) = (acc(200), acc(25));
    assert!(eighth < full, "T: {full}, T/8: {eighth}");
}
