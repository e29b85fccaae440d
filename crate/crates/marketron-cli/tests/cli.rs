use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"{
  "model": {
    "sigma": 0.37, "sigma_y": 0.38, "sigma_theta": 0.8334, "k": 1.2869, "theta_hat": 6.7865, "mu": 1.6671,
    "y_bar": 0.4731, "c": 0.0, "g": 0.6831, "eps_bar": 0.2, "eta_bar": -0.05845, "gamma": 0.2, "r": 0.01,
    "q": 0.005, "s_star": 1000.0, "y0": 0.1, "theta0": 0.5,
    "signal": { "kind": "sigmoid_time_dependent", "b1": 1.6819, "b2": -1.2102, "k1x": -3.2002, "k2x": 2.7417,
                "k3x": -1.8832, "k1y": -0.7855, "k2y": 3.8901, "k3y": 1.5588 },
    "regularizer": "R2"
  },
  "sim": { "n_paths": 300, "horizon": 0.5, "seed": 3 },
  "stats": { "horizons": [0.1, 0.25, 0.5], "hurst_paths": 20, "hurst_horizon": 1.0, "mpr_samples": 2 },
  "calib": {
    "perturb_names": ["sigma", "gamma"],
    "r_bar": 10.0,
    "de": { "max_generations": 5, "population_multiplier": 3 },
    "synthetic": { "spot": 1000.0, "maturity": 0.25, "strikes": [960.0, 1000.0, 1040.0], "kind": "put" }
  }
}"#;

fn marketron(config: &Path, out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_marketron"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("MARKETRON_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_produce_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    std::fs::write(&config, CONFIG).unwrap();
    for cmd in ["price", "simulate", "stats", "calibrate"] {
        let (a, b) = (tmp.path().join(format!("{cmd}-a")), tmp.path().join(format!("{cmd}-b")));
        for dir in [&a, &b] {
            let o = marketron(&config, dir, &[cmd]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            assert!(dir.join("manifest.json").exists());
        }
        let (fa, fb) = (files(&a), files(&b));
        assert!(!fa.is_empty(), "{cmd} wrote nothing");
        assert_eq!(fa, fb, "{cmd} outputs differ between runs");
    }
}

#[test]
fn unsupported_pricer_configuration_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    std::fs::write(&config, CONFIG).unwrap();
    let out = tmp.path().join("out");
    // The default model has time-dependent signals, which the Volterra
    // pricer does not support, so every price fails.
    let o = marketron(&config, &out, &["price", "--pricer", "volterra"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failures"], 49);
    assert!(std::fs::read_to_string(out.join("prices.csv")).unwrap().contains("NaN"));
}

#[test]
fn bad_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    std::fs::write(&config, r#"{ "sim": { "n_paths": 0 } }"#).unwrap();
    let o = marketron(&config, &tmp.path().join("out"), &["simulate"]);
    assert_eq!(o.status.code(), Some(1));
}
