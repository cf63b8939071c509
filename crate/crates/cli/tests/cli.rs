use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;

use prosodia_cli::{parse_dims, parse_grid, read_phones, Cli, Command as Sub};

fn prosodia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prosodia")).args(args).output().unwrap()
}

const SUBCOMMANDS: [&str; 7] = ["gen-corpus", "featurize", "fit-stats", "train", "synth", "sweep", "serve"];

#[test]
fn help_exits_zero_and_lists_flags() {
    let out = prosodia(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in SUBCOMMANDS {
        assert!(text.contains(sub), "{sub} missing from top-level help");
    }
    for sub in SUBCOMMANDS {
        let out = prosodia(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--"), "{sub}");
    }
    let synth = String::from_utf8(prosodia(&["synth", "--help"]).stdout).unwrap();
    for flag in [
        "--model",
        "--stats",
        "--phones",
        "--bias-pitch ",
        "--bias-pitch-range",
        "--bias-duration",
        "--bias-energy",
        "--bias-tilt",
        "--emphasize-word",
        "--wav",
        "--mel",
        "--json",
    ] {
        assert!(synth.contains(flag), "{flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["--frobnicate"],
        vec!["nope"],
        vec![],
        vec!["gen-corpus", "--out", "x", "--colour", "red"],
        vec!["gen-corpus"],
    ] {
        let out = prosodia(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    let out = prosodia(&["gen-corpus", "--size", "many", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--size"));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pfe");
    let out = prosodia(&[
        "synth",
        "--model",
        missing.to_str().unwrap(),
        "--stats",
        "s.json",
        "--phones",
        "AH .",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = prosodia(&["featurize", "--corpus", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn version_exits_zero() {
    assert_eq!(prosodia(&["--version"]).status.code(), Some(0));
}

fn synth_args(extra: &[&str]) -> prosodia_cli::SynthArgs {
    let mut argv = vec!["prosodia", "synth", "--model", "m.pfe", "--stats", "s.json", "--phones", "AH ."];
    argv.extend_from_slice(extra);
    match Cli::try_parse_from(argv).unwrap().command {
        Sub::Synth(a) => a,
        other => panic!("{other:?}"),
    }
}

#[test]
fn synth_without_bias_flags_has_zero_bias() {
    let a = synth_args(&[]);
    assert_eq!(a.bias(), Default::default());
    assert_eq!(a.emphasize_word, None);
}

#[test]
fn synth_accepts_extrapolated_negative_bias() {
    let a = synth_args(&["--bias-tilt", "-3", "--bias-pitch=-0.5", "--emphasize-word", "1"]);
    assert_eq!(a.bias().tilt, -3.0);
    assert_eq!(a.bias().pitch, -0.5);
    assert_eq!(a.emphasize_word, Some(1));
}

#[test]
fn grid_range_has_nine_points_with_endpoints() {
    let g = parse_grid("-1:1:9").unwrap();
    assert_eq!(g.len(), 9);
    assert_eq!(g[0], -1.0);
    assert_eq!(g[8], 1.0);
    assert_eq!(g[4], 0.0);
    for w in g.windows(2) {
        assert!((w[1] - w[0] - 0.25).abs() < 1e-12);
    }
    assert_eq!(parse_grid("-3:3:13").unwrap()[1], -2.5);
    assert_eq!(parse_grid("-1, 0,0.5").unwrap(), vec![-1.0, 0.0, 0.5]);
    for bad in ["1:-1:9", "-1:1:1", "a:1:3", "1:2", "1,,2", "-1:1:9:2"] {
        assert!(parse_grid(bad).is_err(), "{bad}");
    }
}

#[test]
fn sweep_grid_flag_takes_leading_minus() {
    let cli = Cli::try_parse_from([
        "prosodia", "sweep", "--model", "m", "--corpus", "c", "--grid", "-1:1:5", "--out", "o",
    ])
    .unwrap();
    match cli.command {
        Sub::Sweep { grid, sentences, .. } => {
            assert_eq!(grid, "-1:1:5");
            assert_eq!(sentences, 20);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn dims_parse_by_name() {
    assert_eq!(parse_dims("tilt, pitch").unwrap().len(), 2);
    assert!(parse_dims("tilt,loudness").is_err());
}

#[test]
fn phones_read_inline_or_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("p.txt");
    std::fs::write(&f, "HH AH #\nL OW .\n").unwrap();
    assert_eq!(read_phones(f.to_str().unwrap()).unwrap(), read_phones("HH AH # L OW .").unwrap());
    assert!(read_phones("QQ .").is_err());
    assert!(!Path::new("HH AH # L OW .").exists());
}
