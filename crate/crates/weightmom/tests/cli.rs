use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weightmom"))
}

#[test]
fn run_summarize_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "data.dataset = synthetic\ndata.synthetic_samples = 300\ntrain.epochs = 8\n\
         schedule.warmup = 3\nschedule.interval_n = 2\nschedule.final_epoch = 7\n\
         prune.window_T = 3\nprune.persistence_K = 2\nbaseline.prune_epoch = 7\ncheckpoint.every = 4\n",
    )
    .unwrap();
    let st = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args([
            "--density",
            "0.1",
            "--seed",
            "1",
            "--method",
            "weightmom",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        st.status.success(),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
    let text = String::from_utf8_lossy(&st.stdout);
    assert!(text.contains("weightmom"), "{text}");

    let header = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(header.starts_with("run_id,seed,method,epoch,lr,train_loss,test_acc,global_density\n"));
    let events = std::fs::read_to_string(out.join("cells/weightmom-d0.1-s1/events.csv")).unwrap();
    assert!(events.starts_with("epoch,density_before,density_after,layer,tau,pruned,shortfall\n"));
    let imp =
        std::fs::read_to_string(out.join("cells/weightmom-d0.1-s1/importance_epoch7.csv")).unwrap();
    assert!(imp.starts_with("layer,l,W_l,I_l,k_l\n"));

    let st = bin().arg("summarize").arg(&out).output().unwrap();
    assert!(st.status.success());
    assert!(out.join("degradation.svg").is_file());

    let ck = out.join("cells/weightmom-d0.1-s1/checkpoint.wmck");
    let st = bin().arg("inspect-checkpoint").arg(&ck).output().unwrap();
    assert!(st.status.success());
    let text = String::from_utf8_lossy(&st.stdout);
    assert!(text.contains("next epoch      8"), "{text}");
    assert!(text.contains("mask1"), "{text}");

    let st = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--resume")
        .arg(&ck)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        st.status.success(),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "optimizer.lr = 0.05\nprune.windw_T = 3\n").unwrap();
    let st = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!st.status.success());
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("line 2"), "{err}");

    let junk = dir.path().join("junk.wmck");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let st = bin().arg("inspect-checkpoint").arg(&junk).output().unwrap();
    assert!(!st.status.success());
}
