use std::path::Path;
use std::process::{Command, Output};

use lightdepth_core::io::netpbm;
use lightdepth_core::training::{SceneSettings, SyntheticScene};
use lightdepth_core::Tensor;

fn lightdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lightdepth")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const QUICK: &str = "# a few steps on tiny scenes\ninput = 32x32\nsteps = 3\nbatch_size = 2\neval_every = 2\ntrain_scenes = 1\neval_scenes = 1\nframes = 4\n";

fn quick_config(dir: &Path) -> String {
    let path = dir.join("quick.cfg");
    std::fs::write(&path, QUICK).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_passes_every_check() {
    let o = lightdepth(&["verify", "--seed", "3"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 20);
    assert!(!text.contains("FAIL"));
}

#[test]
fn count_reports_reference_lines() {
    let o = lightdepth(&["count", "--input", "640x192"]);
    let text = stdout(&o);
    assert!(o.status.success());
    assert!(text.contains("parameters: 2666914"), "{text}");
    assert!(text.contains("reference 2.7M") && text.contains("reference 7.1G"), "{text}");
    assert!(text.contains("1*MAC"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(lightdepth(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lightdepth(&["count", "--bogus"]).status.code(), Some(2));
    assert_eq!(lightdepth(&["count", "--ablate", "everything"]).status.code(), Some(2));
    assert_eq!(lightdepth(&["count", "--input", "640"]).status.code(), Some(2));
}

#[test]
fn ablation_flags_change_counts() {
    let params = |abl: &str| {
        let text = stdout(&lightdepth(&["count", "--ablate", abl]));
        let line = text.lines().find(|l| l.starts_with("parameters:")).unwrap().to_string();
        line.split_whitespace().nth(1).unwrap().parse::<usize>().unwrap()
    };
    assert_eq!(params("sdc"), 2_666_914);
    assert!(params("raka") < 2_666_914);
    assert!(params("dfsp") < params("raka"));
}

#[test]
fn train_is_reproducible_and_eval_reads_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = lightdepth(&["train", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read_to_string(out.join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].lines().count(), 1 + 3 + 1);

    let ckpt = dir.path().join("a").join("model.ckpt");
    let csv = dir.path().join("eval.csv");
    let o = lightdepth(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("loss,abs_rel"));
}

#[test]
fn infer_writes_a_depth_map_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SyntheticScene::generate(11, &SceneSettings { height: 48, width: 80, frames: 3, speed: 0.4 }).unwrap();
    let (frame, _) = scene.render_frame(1).unwrap();
    let image = Tensor::<f64>::from_vec(&[1, 3, 48, 80], frame.data).unwrap();
    let input = dir.path().join("frame.ppm");
    netpbm::write_ppm(&input, &image).unwrap();
    let out = dir.path().join("depth.pgm");
    let o = lightdepth(&["infer", "--image", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let depth: Tensor<f64> = netpbm::read_depth_pgm(&out).unwrap();
    assert_eq!(depth.shape(), &[1, 1, 48, 80]);
    // Millimeter maps saturate at 65.535 m.
    assert!(depth.to_vec().iter().all(|d| d.is_finite() && *d >= 0.1 && *d <= 65.535));
}

#[test]
fn malformed_config_reports_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "steps = 3\nwidth_multiplier = 2\n").unwrap();
    let o = lightdepth(&["train", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse error at byte 10"));
}

#[test]
fn verify_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str| {
        let path = dir.path().join(name);
        assert!(lightdepth(&["verify", "--seed", "1", "--out", path.to_str().unwrap()]).status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(read("a.csv"), read("b.csv"));
}
