//! Loss landscape of the full pipeline on the bundled tool at 320×240.

use std::sync::OnceLock;

use kinalign::demo::{demo_camera, demo_chain, demo_light};
use kinalign::image::Image;
use kinalign::kinematics::{JointConfig, JointKind};
use kinalign::features::MeanBackground;
use kinalign::optimizer::{evaluate_loss, KinematicState, OptimizeSpec};
use kinalign::scenegen::{generate_trajectory, Scene};
use proptest::prelude::*;

const POSES: usize = 8;

struct Fixture {
    bg: MeanBackground,
    poses: Vec<(KinematicState, Image)>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let (chain, cam, light) = (demo_chain(), demo_camera(), demo_light());
        let scene = Scene::new(&chain, &cam, &light);
        let bg = scene.mean_background().unwrap();
        let traj = generate_trajectory(&chain, POSES, 21).unwrap();
        let poses = traj
            .into_iter()
            .map(|q| {
                let observed = scene.clean_observation(&q, &bg).unwrap();
                let state = KinematicState { chain: chain.clone(), joints: q, camera: cam.clone(), light };
                (state, observed)
            })
            .collect();
        Fixture { bg, poses }
    })
}

fn loss(state: &KinematicState, observed: &Image, bg: &MeanBackground) -> f64 {
    evaluate_loss(state, observed, bg, &OptimizeSpec::default()).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ground_truth_beats_every_perturbation(
        pose in 0..POSES,
        offsets in prop::collection::vec((0.5..3.0f64, any::<bool>()), 6),
    ) {
        let f = fixture();
        let (gt, observed) = &f.poses[pose];
        let kinds = gt.chain.kinds();
        let mut q = gt.joints.clone();
        for (k, &(deg, neg)) in offsets.iter().enumerate() {
            let sign = if neg { -1.0 } else { 1.0 };
            // 1° of rotation pairs with 1 cm of insertion.
            q.0[k] += sign * match kinds[k] {
                JointKind::Revolute => deg.to_radians(),
                JointKind::Prismatic => deg * 0.01,
            };
        }
        let mut perturbed = gt.with_joints(JointConfig::new(q.0.clone()));
        gt.chain.clamp(&mut perturbed.joints);
        prop_assume!(perturbed.joints != gt.joints);

        let at_gt = loss(gt, observed, &f.bg);
        let away = loss(&perturbed, observed, &f.bg);
        prop_assert!(at_gt <= away, "gt {} vs perturbed {}", at_gt, away);
    }
}
