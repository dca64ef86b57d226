use std::path::Path;
use std::process::Command;

fn snapfocus(out: &Path, args: &[&str]) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_snapfocus"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr))
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "[dataset]\nsplit = 2.0\n").unwrap();
    assert_eq!(snapfocus(d, &["--config", bad.to_str().unwrap(), "synth", "scene"]).0, 2);
    assert_eq!(snapfocus(d, &["infer", "--model", "missing.ckpt", "--input", "missing.rf32"]).0, 3);
    assert_eq!(snapfocus(d, &["no-such-verb"]).0, 2);

    let (code, msg) = snapfocus(&d.join("stack"), &["synth", "stack"]);
    assert_eq!(code, 0, "{msg}");
    let manifest = d.join("stack").join("stack.manifest");
    let m = manifest.to_str().unwrap();
    assert_eq!(snapfocus(d, &["focus", "curve", "--stack", m, "--criterion", "sharpest"]).0, 2);
    let (code, msg) = snapfocus(&d.join("search"), &["focus", "search", "--stack", m, "--start", "-1.5", "--criterion", "std"]);
    assert_eq!(code, 0, "{msg}");
    assert!(msg.contains("z_star"));
    assert!(d.join("search").join("config.toml").exists());
}

#[test]
fn seed_flag_makes_scenes_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |name: &str, seed: &str| {
        let out = d.join(name);
        assert_eq!(snapfocus(&out, &["--seed", seed, "synth", "scene"]).0, 0);
        std::fs::read(out.join("scene.rf32")).unwrap()
    };
    assert_eq!(run("a", "9"), run("b", "9"));
    assert_ne!(run("a", "9"), run("c", "10"));
}
