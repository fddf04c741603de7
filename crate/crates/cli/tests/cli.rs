use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use labelmerge::digest::sha256_hex;
use labelmerge::phantom::{generate_phantom, perturb, Perturbation, PhantomSpec};
use labelmerge::{load_labels, save_labels, GridMeta, LabelVolume, MergePlan};
use tempfile::TempDir;

fn labelmerge(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelmerge"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = labelmerge(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The last stderr line, which must be the JSON error record.
fn error_line(o: &Output) -> serde_json::Value {
    let text = stderr(o);
    let last = text.lines().last().expect("stderr not empty");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON ({e}): {last}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_phantom(dir: &Path, spec: &PhantomSpec) -> Vec<LabelVolume> {
    fs::create_dir_all(dir).unwrap();
    let ph = generate_phantom(spec).unwrap();
    for (k, v) in ph.volumes.iter().enumerate() {
        save_labels(v, dir.join(format!("case_{k:02}.nii.gz"))).unwrap();
    }
    ph.volumes
}

fn small_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [28, 28, 28],
        n_labels: 6,
        n_train: 3,
        seed,
        ..PhantomSpec::default()
    }
}

/// Hash of every file under `dir`, keyed by relative path.
fn tree_hashes(dir: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    sha256_hex(&fs::read(&p).unwrap()),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// support, plan, merge, influence, split, evaluate, sweep over `train`.
fn full_pipeline(out: &Path, train: &Path, extra: &[&str]) {
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = extra.to_vec();
        all.extend_from_slice(args);
        ok(out, &all);
    };
    run(&["support", "--training", s(train)]);
    run(&["plan"]);
    run(&["merge", "--input", s(train)]);
    run(&["influence"]);
    let merged = out.join("merged");
    run(&["split", "--input", s(&merged)]);
    run(&["evaluate", "--gt", s(train)]);
    run(&["sweep", "--delta-d", "1,5,10", "--delta-v", "2,3.5,inf"]);
}

#[test]
fn support_counts_training_volumes() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(1));
    let out = tmp.path().join("out");
    ok(&out, &["support", "--training", s(&train)]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("support/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_train"], 3);
}

#[test]
fn mixed_grids_exit_2_naming_the_file() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(2));
    let odd = LabelVolume::filled(GridMeta::isotropic([28, 28, 27]), 1);
    save_labels(&odd, train.join("case_zz_odd.nii.gz")).unwrap();

    let o = labelmerge(&tmp.path().join("out"), &["support", "--training", s(&train)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("case_zz_odd.nii.gz"), "{}", stderr(&o));
    let line = error_line(&o);
    assert_eq!(line["error"], "incompatible_grid");
    assert_eq!(line["exit_code"], 2);
}

#[test]
fn rerun_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(3));
    let out = tmp.path().join("out");
    full_pipeline(&out, &train, &[]);
    let first = tree_hashes(&out);
    full_pipeline(&out, &train, &[]);
    assert_eq!(first, tree_hashes(&out));
    assert!(first.len() > 15);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(4));
    let one = tmp.path().join("t1");
    let four = tmp.path().join("t4");
    full_pipeline(&one, &train, &["--threads", "1"]);
    full_pipeline(&four, &train, &["--threads", "4"]);
    assert_eq!(tree_hashes(&one), tree_hashes(&four));
}

#[test]
fn training_round_trip_scores_perfectly() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    let vols = write_phantom(&train, &small_spec(5));
    let out = tmp.path().join("out");
    full_pipeline(&out, &train, &[]);
    for (k, v) in vols.iter().enumerate() {
        assert_eq!(
            &load_labels(out.join(format!("split/case_{k:02}_split.nii.gz"))).unwrap(),
            v
        );
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("evaluation/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mean_dice_over_cases"], 1.0);
    assert!(summary["rel_vol_err_definition"]
        .as_str()
        .unwrap()
        .contains("gt_voxels"));
}

#[test]
fn metrics_csv_schema() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt");
    let pred = tmp.path().join("pred");
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&pred).unwrap();
    let meta = GridMeta::isotropic([4, 1, 1]);
    save_labels(&LabelVolume::new(meta, vec![0, 1, 1, 2]).unwrap(), gt.join("a.nii")).unwrap();
    save_labels(
        &LabelVolume::new(meta, vec![1, 1, 3, 3]).unwrap(),
        pred.join("a_split.nii"),
    )
    .unwrap();
    let out = tmp.path().join("out");
    ok(&out, &["evaluate", "--pred", s(&pred), "--gt", s(&gt)]);
    let csv = fs::read_to_string(out.join("evaluation/a_metrics.csv")).unwrap();
    let expected = "label_id,dice,rel_vol_err,gt_voxels,pred_voxels\n\
                    1,0.500000,0.000000,2,2\n\
                    2,0.000000,-1.000000,1,0\n\
                    3,0.000000,,0,2\n";
    assert_eq!(csv, expected);
}

#[test]
fn perturbed_predictions_score_below_one() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt");
    let vols = write_phantom(&gt, &small_spec(6));
    let pred = tmp.path().join("pred");
    fs::create_dir_all(&pred).unwrap();
    for (k, v) in vols.iter().enumerate() {
        save_labels(
            &perturb(v, Perturbation::Erode, 1, 0, 0),
            pred.join(format!("case_{k:02}.nii.gz")),
        )
        .unwrap();
    }
    let out = tmp.path().join("out");
    ok(&out, &["evaluate", "--pred", s(&pred), "--gt", s(&gt)]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("evaluation/summary.json")).unwrap()).unwrap();
    for case in summary["cases"].as_array().unwrap() {
        assert!(case["mean_dice"].as_f64().unwrap() < 1.0);
    }
}

#[test]
fn identity_plan_keeps_voxels() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    let vols = write_phantom(&train, &small_spec(7));
    let out = tmp.path().join("out");
    ok(&out, &["support", "--training", s(&train)]);
    ok(&out, &["plan", "--delta-d", "1000"]);
    let plan = MergePlan::load(out.join("merge_plan.json")).unwrap();
    assert_eq!(plan.n_merged(), 6);
    ok(&out, &["merge", "--input", s(&train)]);
    let merged: Vec<PathBuf> = {
        let mut v: Vec<PathBuf> = fs::read_dir(out.join("merged"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        v
    };
    assert_eq!(merged.len(), vols.len());
    for (p, v) in merged.iter().zip(&vols) {
        assert!(p.to_str().unwrap().ends_with("_merged.nii.gz"));
        assert_eq!(load_labels(p).unwrap().voxels(), v.voxels());
    }
}

#[test]
fn far_apart_labels_collapse_to_one() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(
        &train,
        &PhantomSpec {
            dims: [60, 60, 60],
            n_labels: 4,
            n_train: 2,
            radius_mm: [4.0, 4.0],
            min_gap_mm: 14.0,
            jitter: 0,
            seed: 8,
            ..PhantomSpec::default()
        },
    );
    let out = tmp.path().join("out");
    ok(&out, &["support", "--training", s(&train)]);
    let o = labelmerge(&out, &["plan"]);
    assert!(o.status.success());
    assert!(
        stderr(&o).contains("4 original labels -> 1 merged labels"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn split_refuses_maps_from_another_plan() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(9));
    let out = tmp.path().join("out");
    ok(&out, &["support", "--training", s(&train)]);
    ok(&out, &["plan"]);
    ok(&out, &["influence"]);
    ok(&out, &["merge", "--input", s(&train)]);
    ok(&out, &["plan", "--delta-d", "1000"]);
    let o = labelmerge(&out, &["split", "--input", s(&out.join("merged"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "digest_mismatch");
}

#[test]
fn unmapped_label_exits_2() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(10));
    let out = tmp.path().join("out");
    ok(&out, &["support", "--training", s(&train)]);
    ok(&out, &["plan"]);
    let stray = tmp.path().join("stray");
    fs::create_dir_all(&stray).unwrap();
    save_labels(
        &LabelVolume::filled(GridMeta::isotropic([28, 28, 28]), 99),
        stray.join("x.nii.gz"),
    )
    .unwrap();
    let o = labelmerge(&out, &["merge", "--input", s(&stray)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "unmapped_label");
}

#[test]
fn all_background_splits_to_background() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(11));
    let out = tmp.path().join("out");
    ok(&out, &["support", "--training", s(&train)]);
    ok(&out, &["plan"]);
    ok(&out, &["influence"]);
    let pred = tmp.path().join("pred");
    fs::create_dir_all(&pred).unwrap();
    let empty = LabelVolume::filled(GridMeta::isotropic([28, 28, 28]), 0);
    save_labels(&empty, pred.join("blank.nii.gz")).unwrap();
    ok(&out, &["split", "--input", s(&pred)]);
    assert_eq!(load_labels(out.join("split/blank_split.nii.gz")).unwrap(), empty);
}

#[test]
fn flags_override_config() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(12));
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("config.json");
    let text = serde_json::json!({
        "version": 1,
        "training_dir": train,
        "output_dir": out,
        "delta_d_mm": 1.0,
        "delta_v": "inf",
    });
    fs::write(&cfg, text.to_string()).unwrap();
    let run = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_labelmerge"))
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(&["support"]);
    run(&["plan"]);
    let plan = MergePlan::load(out.join("merge_plan.json")).unwrap();
    assert_eq!(plan.delta_d_mm, 1.0);
    assert_eq!(plan.delta_v, f64::INFINITY);
    run(&["plan", "--delta-d", "7.5"]);
    assert_eq!(MergePlan::load(out.join("merge_plan.json")).unwrap().delta_d_mm, 7.5);
}

#[test]
fn bad_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");

    let o = labelmerge(&out, &["plan"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"version": 1, "delta": 4}"#).unwrap();
    let o = labelmerge(&out, &["--config", s(&cfg), "plan"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "config");

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = labelmerge(&out, &["support", "--training", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));

    let junk = tmp.path().join("junk");
    fs::create_dir_all(&junk).unwrap();
    fs::write(junk.join("a.nii"), b"not a volume").unwrap();
    let o = labelmerge(&out, &["support", "--training", s(&junk)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "format");
    assert!(stderr(&o).contains("a.nii"));

    let o = labelmerge(&out, &["plan", "--delta-v", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_table_shape() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train");
    write_phantom(&train, &small_spec(13));
    let out = tmp.path().join("out");
    ok(&out, &["support", "--training", s(&train)]);
    ok(&out, &["sweep", "--delta-d", "0,1000", "--delta-v", "inf"]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "delta_d,delta_v,n_merged_labels");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "1000,inf,6");
}

#[test]
fn phantom_is_seeded() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&a, &["phantom", "--seed", "17"]);
    ok(&b, &["phantom", "--seed", "17"]);
    assert_eq!(tree_hashes(&a), tree_hashes(&b));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("phantom/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["seed"], 17);
    assert_eq!(meta["files"].as_array().unwrap().len(), 4);
    assert!(!meta["truth"]["gaps"].as_array().unwrap().is_empty());
}
