use std::path::PathBuf;

use clap::Parser;
use itkrm_cli::spec::{parse_spec_for, CoeffKind, DictKind, Family, Strategy};
use itkrm_cli::{parse_spec, CliError, Manifest, Scenario, SpecInput};

#[derive(Parser)]
struct Flags {
    #[command(flatten)]
    spec: SpecInput,
}

fn flags(args: &[&str]) -> SpecInput {
    Flags::try_parse_from(std::iter::once("itkrm").chain(args.iter().copied()))
        .unwrap()
        .spec
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn field_of(err: CliError) -> String {
    match err {
        CliError::Spec { field, .. } => field,
        other => panic!("expected a spec error, got {other}"),
    }
}

#[test]
fn empty_arguments_give_replacement_defaults() {
    let spec = parse_spec(&SpecInput::default(), None).unwrap();
    assert_eq!(spec.scenario, Scenario::ReplacementCompare);
    assert_eq!((spec.d, spec.k, spec.n), (128, 192, 120_000));
    assert_eq!(spec.dict, DictKind::RandomSphere);
    assert_eq!(spec.sparsity, vec![6]);
    assert_eq!(spec.coeffs, CoeffKind::Geometric);
    assert_eq!((spec.q_min, spec.q_max), (0.9, 1.0));
    assert_eq!(spec.snr, 16.0);
    assert_eq!(spec.outlier_rate, 0.05);
    assert_eq!(spec.s_e, 6);
    assert_eq!(spec.mu_max, 0.7);
    assert_eq!(spec.iterations, 100);
    assert_eq!(spec.strategies, vec![Strategy::None, Strategy::Random, Strategy::Candidates]);
    let eff = spec.effective();
    assert_eq!(eff.memory, 5);
    assert_eq!(eff.min_observations, (128.0 * 128f64.ln()).round() as usize);
}

#[test]
fn small_dirac_hadamard_setup_from_flags() {
    let input = flags(&["--d", "32", "--K", "48", "--dict", "dirac-hadamard", "--S", "2"]);
    let spec = parse_spec_for(Family::Probe, &input, None).unwrap();
    assert_eq!(spec.scenario, Scenario::FixedpointProbe);
    assert_eq!((spec.d, spec.k, spec.n, spec.iterations, spec.trials), (32, 48, 20_000, 25, 10));
    assert_eq!(spec.dict, DictKind::DiracHadamard);
    assert_eq!((spec.sparsity.clone(), spec.s_e), (vec![2], 2));
    assert_eq!((spec.snr, spec.outlier_rate), (16.0, 0.0));
    // the same flags under `learn` keep the learning defaults but the sizes
    let learn = parse_spec_for(Family::Learn, &input, None).unwrap();
    assert_eq!((learn.d, learn.k, learn.s_e), (32, 48, 2));
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir, "exp.toml", "d = 64\nK = 96\nN = 30000\nmu_max = 0.5\n");
    let spec = parse_spec(&flags(&["--K", "80", "--seed", "9"]), Some(&cfg)).unwrap();
    assert_eq!(spec.d, 64);
    assert_eq!(spec.k, 80);
    assert_eq!(spec.n, 30_000);
    assert_eq!(spec.mu_max, 0.5);
    assert_eq!(spec.seed, 9);
    assert_eq!(spec.iterations, 100);
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir, "bad.toml", "d = 64\nsparsty = 3\n");
    let err = parse_spec(&SpecInput::default(), Some(&cfg)).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("sparsty"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_flags_name_the_flag() {
    let err = Flags::try_parse_from(["itkrm", "--mu-max", "high"]).err().unwrap();
    assert!(err.to_string().contains("--mu-max"), "{err}");
    let err = Flags::try_parse_from(["itkrm", "--dict", "wavelet"]).err().unwrap();
    assert!(err.to_string().contains("--dict"), "{err}");
}

#[test]
fn out_of_range_values_name_the_field() {
    let cases: &[(&[&str], &str)] = &[
        (&["--mu-max", "1.2"], "mu_max"),
        (&["--S", "0"], "S"),
        (&["--S", "4,6", "--sparsity-weights", "1"], "sparsity_weights"),
        (&["--d", "48", "--dict", "dirac-hadamard", "--K", "60"], "d"),
        (&["--d", "32", "--dict", "dirac-hadamard", "--K", "80"], "K"),
        (&["--outlier-rate", "1"], "outlier_rate"),
        (&["--q-min", "0.95", "--q-max", "0.9"], "q_max"),
        (&["--iterations", "0"], "iterations"),
        (&["--scale=-1"], "scale"),
        (&["--s-e", "200"], "s_e"),
    ];
    for (args, field) in cases {
        let err = parse_spec(&flags(args), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(field_of(err), *field, "{args:?}");
    }
}

#[test]
fn conflicting_scenario_settings() {
    let err = parse_spec(&flags(&["--scenario", "plain_recovery", "--eps", "0.2"]), None).unwrap_err();
    assert_eq!(field_of(err), "eps");
    let err = parse_spec(&flags(&["--image", "x.pgm"]), None).unwrap_err();
    assert_eq!(field_of(err), "image");
    let err = parse_spec_for(Family::Probe, &flags(&["--scenario", "adaptive_synthetic"]), None).unwrap_err();
    assert_eq!(field_of(err), "scenario");
    let err = parse_spec_for(Family::Learn, &flags(&["--scenario", "contraction_sweep"]), None).unwrap_err();
    assert_eq!(field_of(err), "scenario");
    let err = parse_spec(&flags(&["--scenario", "adaptive_image"]), None).unwrap_err();
    assert_eq!(field_of(err), "image");
}

#[test]
fn scenario_defaults() {
    let a = parse_spec(&flags(&["--scenario", "adaptive_synthetic"]), None).unwrap();
    assert_eq!(a.sparsity, vec![4, 6, 8]);
    assert_eq!(a.sparsity_weights, vec![1.0, 2.0, 1.0]);
    assert_eq!((a.s_e, a.k_e), (1, 128));
    let c = parse_spec(&flags(&["--scenario", "contraction_sweep"]), None).unwrap();
    assert_eq!(c.n, 6 * 192 * 6);
    assert_eq!((c.trials, c.iterations), (40, 1));
    assert_eq!(c.eps, vec![0.1, 0.3]);
    let i = parse_spec(&flags(&["--scenario", "adaptive_image", "--image", "a.pgm", "--patch-side", "4"]), None).unwrap();
    assert_eq!(i.effective().d, 16);
    let mixed = parse_spec(&flags(&["--S", "4,8"]), None).unwrap();
    assert_eq!((mixed.sparsity_weights.clone(), mixed.s_e), (vec![1.0, 1.0], 6));
}

#[test]
fn scale_shrinks_sizes() {
    let spec = parse_spec(&flags(&["--scale", "0.5"]), None).unwrap();
    let eff = spec.effective();
    assert_eq!((eff.d, eff.k, eff.n), (64, 96, 60_000));
    assert_eq!(eff.memory, 4);
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--scenario", "adaptive_synthetic", "--K-e", "256", "--min-observations", "64"][..],
        &["--scenario", "contraction_sweep", "--eps", "0.2"],
        &["--strategies", "none,candidates", "--combine", "add", "--snr", "0"],
    ] {
        let spec = parse_spec(&flags(args), None).unwrap();
        let text = serde_json::to_string(&Manifest::new(&spec)).unwrap();
        let path = write(&dir, "manifest.json", &text);
        let again = parse_spec(&SpecInput::default(), Some(&path)).unwrap();
        assert_eq!(again, spec, "{args:?}");
    }
}
