mod common;

use std::path::PathBuf;

use bicoord::io::{
    format_demos, load_demos, load_models, load_trajectory, parse_demos, parse_trajectory, save_demos, save_models,
    save_trajectory, write_files_atomic, ModelFile, ModelRecord,
};
use bicoord::synth::{make_meeting_demos, MeetingTaskSpec};
use bicoord::tpgmm::ObjectPose;
use bicoord::{fit_arms, DemoSet, Demonstration, EmConfig, KmeansInit, ModelSpec};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("io-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Values spanning many magnitudes, including awkward ones for text.
fn awkward(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    match r.gen_range(0..6) {
        0 => r.gen_range(-1.0..1.0),
        1 => r.gen_range(-1e300..1e300),
        2 => r.gen_range(-1e-300..1e-300),
        3 => 0.1 + r.gen_range(0.0..1e-15),
        4 => -0.0,
        _ => r.gen::<f64>() * 1e6,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demo_text_round_trips_bitwise(seed in any::<u64>(), n in 1usize..4, d in 1usize..4, arms in 1usize..3) {
        let mut r = rng(seed);
        let demos = DemoSet {
            dt: r.gen_range(1e-3..1.0),
            arm_names: (0..arms).map(|h| format!("arm{h}")).collect(),
            demos: (0..n)
                .map(|_| {
                    let t = r.gen_range(2..12);
                    Demonstration {
                        arms: (0..arms).map(|_| DMatrix::from_fn(t, d, |_, _| awkward(&mut r))).collect(),
                        objects: (0..r.gen_range(0..3))
                            .map(|o| {
                                let q = nalgebra::UnitQuaternion::from_scaled_axis(nalgebra::Vector3::new(
                                    r.gen_range(-1.0..1.0),
                                    r.gen_range(-1.0..1.0),
                                    r.gen_range(-1.0..1.0),
                                ));
                                ObjectPose {
                                    name: format!("obj{o}"),
                                    position: vector(&mut r, d, 5.0),
                                    quaternion: [q.w, q.i, q.j, q.k],
                                }
                            })
                            .collect(),
                    }
                })
                .collect(),
            channel_names: None,
        };
        let text = format_demos(&demos).unwrap();
        let back = parse_demos(&text).unwrap();
        prop_assert_eq!(&back, &demos);
        for (a, b) in back.demos.iter().zip(&demos.demos) {
            for (x, y) in a.arms.iter().zip(&b.arms) {
                prop_assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn trajectory_text_round_trips_bitwise(seed in any::<u64>(), t in 1usize..30, d in 1usize..4) {
        let mut r = rng(seed);
        let traj = DMatrix::from_fn(t, d + 1, |_, _| awkward(&mut r));
        let names: Vec<String> = (0..d).map(|j| format!("c{j}")).collect();
        let back = parse_trajectory(&bicoord::io::format_trajectory(&traj, &names)).unwrap();
        prop_assert!(traj.iter().zip(back.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn synthetic_arms_always_meet(seed in any::<u64>(), spatial in any::<bool>()) {
        let spec = if spatial { MeetingTaskSpec::spatial(seed) } else { MeetingTaskSpec::planar(seed) };
        let demos = make_meeting_demos(&spec).unwrap();
        for d in &demos.demos {
            let last = spec.samples - 1;
            prop_assert_eq!(d.arms[0].row(last), d.arms[1].row(last));
            let meet = &d.objects[0].position;
            prop_assert_eq!(d.arms[0].row(last).transpose(), meet.clone());
            for (j, &v) in meet.iter().enumerate() {
                prop_assert!(v >= spec.meeting_region.lo[j] && v <= spec.meeting_region.hi[j]);
            }
            for (h, region) in spec.start_regions.iter().enumerate() {
                for (j, &v) in d.arms[h].row(0).iter().enumerate() {
                    prop_assert!(v >= region.lo[j] && v <= region.hi[j]);
                }
            }
        }
    }
}

#[test]
fn synthetic_demo_file_round_trips() {
    let dir = scratch("synth");
    for spec in [MeetingTaskSpec::planar(7), MeetingTaskSpec::spatial(7)] {
        let demos = make_meeting_demos(&spec).unwrap();
        let path = dir.join(format!("demos{}.txt", spec.dims));
        save_demos(&demos, &path).unwrap();
        assert_eq!(load_demos(&path).unwrap(), demos);
        // Writing the loaded set again gives the same bytes.
        let again = dir.join("again.txt");
        save_demos(&load_demos(&path).unwrap(), &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn model_file_round_trips() {
    let dir = scratch("model");
    let demos = make_meeting_demos(&MeetingTaskSpec::planar(3)).unwrap();
    let spec = ModelSpec {
        em: EmConfig { k: 4, max_iters: 30, cov_regularization: 1e-5, init: KmeansInit::FirstColumn, ..Default::default() },
        ..Default::default()
    };
    let fitted = fit_arms(&demos, &spec).unwrap();
    let records = fitted
        .iter()
        .zip(&demos.arm_names)
        .map(|((m, h), name)| ModelRecord::new(name, spec.frame_labels(), m, &spec.em, h.clone()))
        .collect();
    let file = ModelFile::new(demos.dt, demos.channel_names.clone().unwrap(), records, serde_json::json!({"note": 1}));
    let path = dir.join("models.json");
    save_models(&file, &path).unwrap();
    let back = load_models(&path).unwrap();
    assert_eq!(back, file);
    for ((m, _), name) in fitted.iter().zip(&demos.arm_names) {
        assert_eq!(&back.model(name).unwrap(), m);
    }
    assert_eq!(back.to_json().unwrap(), file.to_json().unwrap());
}

#[test]
fn trajectory_files_round_trip() {
    let dir = scratch("traj");
    let traj = trajectory(&mut rng(5), 40, 3);
    let path = dir.join("t.csv");
    save_trajectory(&traj, &["x".into(), "y".into(), "z".into()], &path).unwrap();
    assert_eq!(load_trajectory(&path).unwrap(), traj);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,x,y,z\n"));
}

#[test]
fn failed_batch_leaves_nothing_behind() {
    let dir = scratch("atomic");
    let good = dir.join("a.txt");
    let bad = dir.join("missing").join("b.txt");
    let err = write_files_atomic(&[(good.clone(), b"a".to_vec()), (bad, b"b".to_vec())]).unwrap_err();
    assert_eq!(err.code(), "io");
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 0);

    write_files_atomic(&[(good.clone(), b"a".to_vec()), (dir.join("c.txt"), b"c".to_vec())]).unwrap();
    assert_eq!(std::fs::read(&good).unwrap(), b"a");
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 2);
}

#[test]
fn bad_quaternion_names_its_source() {
    let text = "bicoord-demos 1\ndt 0.1\narms l r\n\
                demo\nobject box 0 0 1 0 0 0\narm l 2\n0 0\n1 1\narm r 2\n0 0\n1 1\n\
                demo\nobject lid 0 0 0.9 0 0 0\narm l 2\n0 0\n1 1\narm r 2\n0 0\n1 1\n";
    let err = parse_demos(text).unwrap_err();
    assert_eq!(err.code(), "quaternion_norm");
    let msg = err.to_string();
    assert!(msg.contains("lid") && msg.contains("line 13") && msg.contains("demo 1"), "{msg}");
}
