use std::path::Path;

use flowerkit::config::{ConfigError, RunConfig};

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.flw"), b"").unwrap();
    dir
}

fn parse(dir: &Path, body: &str) -> Result<RunConfig, ConfigError> {
    RunConfig::parse(&format!("dataset = data.flw\nout_dir = run\n{body}"), dir)
}

#[test]
fn parses_values_comments_and_relative_paths() {
    let dir = workspace();
    let c = parse(
        dir.path(),
        "# model\nlevels = 3   # deeper\nc_lift=16\nheads = 2\ngroups = 8\nresidual = true\nbc = reflect\n\nlr = 5e-4\nwindows_per_traj = 4\nseed = 12\n",
    )
    .unwrap();
    assert_eq!(c.dataset, dir.path().join("data.flw"));
    assert_eq!(c.out_dir, dir.path().join("run"));
    assert_eq!((c.levels, c.c_lift, c.heads, c.groups), (3, 16, 2, 8));
    assert!(c.residual);
    assert_eq!(c.bc.name(), "reflect");
    assert_eq!(c.lr, 5e-4);
    assert_eq!(c.train_config().windows_per_traj, Some(4));
    assert_eq!(c.train_config().valid_windows_per_traj, None);
    assert_eq!(c.seed, 12);
}

#[test]
fn canonical_text_parses_back() {
    let dir = workspace();
    let c = parse(dir.path(), "epochs = 7\nweight_decay = 0.01\n").unwrap();
    let again = RunConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap();
    assert_eq!(again, c);
}

#[test]
fn errors_are_named() {
    let dir = workspace();
    let d = dir.path();
    assert!(matches!(parse(d, "levels 2"), Err(ConfigError::Syntax { line: 3, .. })));
    assert!(matches!(parse(d, "depth = 2"), Err(ConfigError::UnknownKey { key, .. }) if key == "depth"));
    assert!(matches!(parse(d, "seed = 1\nseed = 2"), Err(ConfigError::DuplicateKey { line: 4, .. })));
    assert!(matches!(parse(d, "epochs = many"), Err(ConfigError::BadValue { .. })));
    assert!(matches!(parse(d, "lr = nan"), Err(ConfigError::BadValue { .. })));
    assert!(matches!(parse(d, "residual = yes"), Err(ConfigError::BadValue { .. })));
    assert!(matches!(parse(d, "bc = open"), Err(ConfigError::BadValue { .. })));
    assert!(matches!(parse(d, "levels = 0"), Err(ConfigError::OutOfRange { .. })));
    assert!(matches!(parse(d, "heads = 3"), Err(ConfigError::OutOfRange { .. })));
    assert!(matches!(parse(d, "beta2 = 1"), Err(ConfigError::OutOfRange { .. })));
    assert!(matches!(parse(d, "lr = -1"), Err(ConfigError::OutOfRange { .. })));
    assert!(matches!(RunConfig::parse("out_dir = x\n", d), Err(ConfigError::Missing("dataset"))));
    assert!(matches!(
        RunConfig::parse("dataset = nope.flw\nout_dir = x\n", d),
        Err(ConfigError::PathMissing { key: "dataset", .. })
    ));
    assert!(matches!(
        RunConfig::parse("dataset = data.flw\nout_dir = a/b/c\n", d),
        Err(ConfigError::PathMissing { key: "out_dir", .. })
    ));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = workspace();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "dataset = data.flw\nout_dir = run\nc_lift = 0\n").unwrap();
    let err = RunConfig::load(&path).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let err = RunConfig::load(&dir.path().join("missing.cfg")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
