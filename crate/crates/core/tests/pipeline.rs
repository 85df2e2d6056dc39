//! End-to-end properties of rendering, warping and the self-supervised loss.

use lightdepth_core::config::ModelConfig;
use lightdepth_core::depth::{depth_to_disp, total_loss, LossInputs, LossSettings, Model, PoseBatch};
use lightdepth_core::nn::Ctx;
use lightdepth_core::training::{stack_images, eigen_metrics, EvalSettings, RenderedTriplet, SceneSettings, SyntheticScene};
use lightdepth_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 48;

fn triplet(seed: u64) -> (SyntheticScene, RenderedTriplet) {
    let scene = SyntheticScene::generate(seed, &SceneSettings { height: SIZE, width: SIZE, frames: 3, speed: 0.4 }).unwrap();
    let t = scene.render_triplet(1).unwrap();
    (scene, t)
}

/// Loss of the triplet with the true motion and the given depth map.
fn loss_with_depth(scene: &SyntheticScene, t: &RenderedTriplet, depth: &[f64], settings: &LossSettings) -> (f64, f64) {
    let disp: Vec<f64> = depth.iter().map(|&d| depth_to_disp(d, settings.min_depth, settings.max_depth)).collect();
    let disparities = [Tensor::from_vec(&[1, 1, SIZE, SIZE], disp).unwrap()];
    let target: Tensor<f64> = stack_images(&[&t.current]).unwrap();
    let sources = [stack_images(&[&t.prev]).unwrap(), stack_images(&[&t.next]).unwrap()];
    let poses = [PoseBatch::from_poses(&t.motion[..1]).unwrap(), PoseBatch::from_poses(&t.motion[1..]).unwrap()];
    let intrinsics = [scene.intrinsics];
    let inputs = LossInputs { target: &target, sources: &sources, poses: &poses, disparities: &disparities, intrinsics: &intrinsics };
    let report = total_loss(&inputs, settings).unwrap();
    (report.total.item(), report.photometric)
}

#[test]
fn ground_truth_beats_perturbed_depth() {
    let settings = LossSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let trials = 40;
    let mut wins = 0;
    for seed in 0..trials {
        let (scene, t) = triplet(seed);
        let (truth, _) = loss_with_depth(&scene, &t, &t.depth, &settings);
        // Global ±20% scale, with a little per-pixel jitter on top.
        let scale = if rng.gen_bool(0.5) { 1.2 } else { 0.8 };
        let perturbed: Vec<f64> = t.depth.iter().map(|d| d * scale * rng.gen_range(0.97..1.03)).collect();
        let (worse, _) = loss_with_depth(&scene, &t, &perturbed, &settings);
        if truth < worse {
            wins += 1;
        }
    }
    assert!(wins as f64 >= 0.95 * trials as f64, "ground truth won {wins} of {trials}");
}

#[test]
fn rendered_triplet_is_photometrically_consistent() {
    for seed in [1, 2, 3] {
        let (scene, t) = triplet(seed);
        let (_, photometric) = loss_with_depth(&scene, &t, &t.depth, &LossSettings::default());
        assert!(photometric < 1e-3, "seed {seed}: photometric {photometric}");
    }
}

#[test]
fn gradients_reach_every_network() {
    let config = ModelConfig { input_size: (32, 32), ..ModelConfig::toy() };
    let model = Model::<f64>::new(&config).unwrap();
    let scene = SyntheticScene::generate(5, &SceneSettings { height: 32, width: 32, frames: 3, speed: 0.4 }).unwrap();
    let t = scene.render_triplet(1).unwrap();
    let target: Tensor<f64> = stack_images(&[&t.current]).unwrap();
    let sources = [stack_images(&[&t.prev]).unwrap(), stack_images(&[&t.next]).unwrap()];
    let ctx = Ctx::train_deterministic();
    let disparities = model.disparities(&target, &ctx).unwrap();
    let poses = [
        PoseBatch::from_vector(&model.motion(&target, &sources[0], &ctx).unwrap()).unwrap(),
        PoseBatch::from_vector(&model.motion(&target, &sources[1], &ctx).unwrap()).unwrap(),
    ];
    let intrinsics = [scene.intrinsics];
    let inputs = LossInputs { target: &target, sources: &sources, poses: &poses, disparities: &disparities, intrinsics: &intrinsics };
    model.store.zero_grad();
    total_loss(&inputs, &LossSettings::default()).unwrap().total.backward().unwrap();
    for prefix in ["depth.encoder.", "depth.decoder.", "pose."] {
        let norm: f64 = model
            .store
            .params()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.tensor.grad().unwrap().iter().map(|g| g * g).sum::<f64>())
            .sum();
        assert!(norm > 0.0 && norm.is_finite(), "{prefix}: gradient norm {norm}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn median_scaled_metrics_ignore_global_scale(
        gt in prop::collection::vec(0.2f64..90.0, 8..64),
        factors in prop::collection::vec(0.6f64..1.6, 64),
        c in 1e-2f64..1e2,
    ) {
        let pred: Vec<f64> = gt.iter().zip(&factors).map(|(g, f)| g * f).collect();
        let scaled: Vec<f64> = pred.iter().map(|p| p * c).collect();
        let settings = EvalSettings::default();
        let a = eigen_metrics(&pred, &gt, &settings);
        let b = eigen_metrics(&scaled, &gt, &settings);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.as_array().iter().zip(b.as_array()) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
                }
                prop_assert!(a.delta1 <= a.delta2 && a.delta2 <= a.delta3);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "only one call failed"),
        }
    }
}

