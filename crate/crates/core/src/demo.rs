//! Bundled 6-DOF test fixture: a PSM-shaped chain (yaw, pitch, insertion,
//! roll, wrist pitch, wrist yaw) built from boxes, seen by a 320×240 camera.
//!
//! The numbers are fixtures for tests and demos, not a model of real
//! hardware.

use crate::geom::{Mat3, PinholeCamera, PointLight, RigidTransform, TriangleMesh, Vec3};
use crate::kinematics::{DhChain, DhRow, JointConfig, LinkMesh};

use std::f64::consts::FRAC_PI_2;

pub const DEMO_WIDTH: usize = 320;
pub const DEMO_HEIGHT: usize = 240;

/// Nominal insertion depth from the remote center to the shaft tip (m).
const INSERTION: f64 = 0.085;

/// Largest cell edge of the link meshes (m). The shaft is plain, so it
/// gets coarser cells.
const CELL: f64 = 0.006;
const SHAFT_CELL: f64 = 0.01;

fn cuboid(min: [f64; 3], max: [f64; 3]) -> TriangleMesh {
    TriangleMesh::tessellated_cuboid(Vec3::from(min), Vec3::from(max), CELL)
}

fn dh_rows() -> Vec<DhRow> {
    vec![
        DhRow::revolute(0.0, -FRAC_PI_2, 0.0, 0.0),
        DhRow::revolute(0.0, FRAC_PI_2, 0.0, FRAC_PI_2),
        DhRow::prismatic(0.0, 0.0, INSERTION, 0.0),
        DhRow::revolute(0.0, -FRAC_PI_2, 0.0, 0.0),
        DhRow::revolute(0.011, -FRAC_PI_2, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.016, 0.0, 0.0, 0.0),
    ]
}

fn link_meshes() -> Vec<LinkMesh> {
    // Link 2: shaft ending at the frame origin, pointing along +z.
    let shaft = TriangleMesh::tessellated_cuboid(Vec3::new(-0.0035, -0.0035, -0.1), Vec3::new(0.0035, 0.0035, 0.0), SHAFT_CELL);
    // Link 3: clevis at the shaft tip. Forward is -y here; the pitch axis is z.
    // The fin along +x breaks the roll symmetry.
    let mut clevis = cuboid([-0.003, -0.004, -0.0055], [0.003, 0.0015, 0.0055]);
    clevis.append(&cuboid([0.0, -0.009, -0.0015], [0.0075, -0.002, 0.0015]));
    // Link 4: wrist link running back along -x to the pitch axis, with a
    // tab on +y so that pitch and yaw leave different footprints.
    let mut wrist = cuboid([-0.012, -0.0028, -0.0025], [0.001, 0.0028, 0.0025]);
    wrist.append(&cuboid([-0.008, 0.0028, -0.0012], [-0.004, 0.0065, 0.0012]));
    // Link 5: jaw blade with a hook on +y at the tip.
    let mut jaw = cuboid([-0.017, -0.0018, -0.0032], [0.0, 0.0018, 0.0032]);
    jaw.append(&cuboid([-0.004, 0.0018, -0.0012], [0.0, 0.006, 0.0012]));
    vec![
        LinkMesh { link: 2, mesh: shaft },
        LinkMesh { link: 3, mesh: clevis },
        LinkMesh { link: 4, mesh: wrist },
        LinkMesh { link: 5, mesh: jaw },
    ]
}

/// Orthonormal frame with `a` as first column and `b` orthogonalized
/// against it as the second.
fn frame_from(a: Vec3, b: Vec3) -> Mat3 {
    let x = a.normalize();
    let y = (b - x * x.dot(&b)).normalize();
    let z = x.cross(&y);
    Mat3::from_columns(&[x, y, z])
}

/// Places the remote center so that at zero joints the shaft runs in from
/// the upper left towards the image center.
fn base_frame(rows: &[DhRow]) -> RigidTransform {
    let probe = DhChain {
        rows: rows.to_vec(),
        base: RigidTransform::identity(),
        links: vec![],
        limits: vec![(-1.0, 1.0); rows.len()],
    };
    let frames = probe.forward_kinematics(&JointConfig::zeros(rows.len())).unwrap();
    let shaft_local = frames[1].rotation.column(2).into_owned();
    let yaw_local = Vec3::z();

    let tip = Vec3::new(0.004, 0.006, 0.075);
    let shaft_dir = Vec3::new(0.78, 0.42, 0.46).normalize();
    let yaw_axis = Vec3::new(0.1, -1.0, 0.2);
    let world = frame_from(shaft_dir, yaw_axis);
    let local = frame_from(shaft_local, yaw_local);
    let rotation = world * local.transpose();
    let rcm = tip - shaft_dir * INSERTION;
    RigidTransform {
        rotation,
        translation: rcm,
    }
}

/// The bundled chain, with world coordinates equal to the demo camera frame.
pub fn demo_chain() -> DhChain {
    let rows = dh_rows();
    let base = base_frame(&rows);
    let limits = vec![
        (-12f64.to_radians(), 12f64.to_radians()),
        (-12f64.to_radians(), 12f64.to_radians()),
        (-0.015, 0.015),
        (-60f64.to_radians(), 60f64.to_radians()),
        (-50f64.to_radians(), 50f64.to_radians()),
        (-50f64.to_radians(), 50f64.to_radians()),
    ];
    DhChain::new(rows, base, link_meshes(), limits).expect("demo chain is valid")
}

pub fn demo_camera() -> PinholeCamera {
    PinholeCamera::new(300.0, 300.0, 160.0, 120.0, DEMO_WIDTH, DEMO_HEIGHT).expect("demo camera is valid")
}

pub fn demo_light() -> PointLight {
    PointLight::default()
}

/// A representative in-limits configuration.
pub fn demo_pose() -> JointConfig {
    JointConfig::new(vec![
        3f64.to_radians(),
        -4f64.to_radians(),
        0.004,
        25f64.to_radians(),
        20f64.to_radians(),
        -15f64.to_radians(),
    ])
}
