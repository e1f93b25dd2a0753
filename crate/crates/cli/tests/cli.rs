use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn forge")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = forge(args, cwd);
    assert!(
        out.status.success(),
        "forge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    forge(args, cwd).status.code().unwrap()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "corpus", "--sizes", "60", "--seed", "4", "--out", "corpus"], d);
    ok(
        &["gen", "encoder", "--hidden", "16", "--ffn-dim", "32", "--layers", "4", "--seed", "1", "--out", "enc"],
        d,
    );
    let summary = ok(&["init-map", "--encoder", "enc", "--heads", "2", "--out", "init", "--report", "map.json"], d);
    assert!(summary.contains("4 encoder layers -> 2 decoder blocks"), "{summary}");
    assert!(summary.contains("0 unmapped"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("map.json")).unwrap()).unwrap();
    assert_eq!(
        report["entries"][0]["source"].as_str().unwrap().split('.').take(3).collect::<Vec<_>>(),
        ["encoder", "layer", "1"]
    );

    ok(&["corrupt", "--input", "corpus/lang0.tsv", "--output", "span.tsv", "--seed", "2"], d);
    let x = ok(
        &["corrupt", "--mode", "translation", "--input", "corpus/lang0.tsv", "--output", "xspan.tsv", "--seed", "2"],
        d,
    );
    assert!(x.starts_with("60 examples"), "{x}");

    ok(
        &[
            "pretrain", "--model", "init", "--data", "span.tsv", "--mix-data", "xspan.tsv", "--mix-ratio", "0.5",
            "--steps", "12", "--warmup", "2", "--lr", "1e-3", "--batch-tokens", "200", "--save-every", "6", "--out",
            "pre",
        ],
        d,
    );
    assert!(d.join("pre/checkpoint_6/tensors.bin").exists());
    assert!(d.join("pre/checkpoint_12/tensors.bin").exists());
    let log = fs::read_to_string(d.join("pre/train.log")).unwrap();
    assert!(log.starts_with("step loss lr grad_norm tokens_per_sec\n"));

    fs::write(d.join("ft.toml"), "lr_peak = 1e-3\nwarmup_steps = 2\ntotal_steps = 10\nbatch_tokens = 200\nsave_every = 2\n").unwrap();
    let ft = ok(
        &[
            "finetune", "--config", "ft.toml", "--model", "pre/final", "--data", "corpus/lang0.tsv", "--mix-data",
            "span.tsv", "--mix-ratio", "0.5", "--average-last", "5", "--out", "ft",
        ],
        d,
    );
    assert!(ft.contains("10 steps") && ft.contains("averaged last 5"), "{ft}");

    ok(&["generate", "--model", "ft/final", "--input", "corpus/lang0.tsv", "--output", "hyp.txt", "--max-len", "12"], d);
    let hyps = fs::read_to_string(d.join("hyp.txt")).unwrap();
    assert_eq!(hyps.lines().count(), 60);

    fs::write(d.join("ref.txt"), "1 2 3\n4 5\n").unwrap();
    assert_eq!(ok(&["eval", "--hyp", "ref.txt", "--ref", "ref.txt"], d).trim(), "100.00");
    assert_eq!(ok(&["eval", "--hyp", "ref.txt", "--ref", "ref.txt", "--metric", "rougeL"], d).trim(), "1.00");
}

#[test]
fn seeded_commands_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&["gen", "corpus", "--sizes", "30,10", "--seed", "9", "--out", out], d);
        ok(&["gen", "encoder", "--hidden", "8", "--ffn-dim", "8", "--seed", "9", "--out", &format!("{out}/enc")], d);
        ok(&["corrupt", "--input", &format!("{out}/lang1.tsv"), "--output", &format!("{out}/c.tsv"), "--seed", "9"], d);
    }
    for f in ["lang0.tsv", "lang1.tsv", "c.tsv", "enc/tensors.bin", "enc/manifest.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes_distinguish_validation_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["gen", "corpus", "--out", "c", "--bogus"], d), 1);
    assert_eq!(code(&["frobnicate"], d), 1);
    assert_eq!(code(&["gen", "encoder", "--layers", "3", "--out", "e"], d), 1);
    assert_eq!(code(&["corrupt", "--input", "x", "--output", "y", "--prob", "1.5"], d), 1);

    fs::write(d.join("h.txt"), "1 2\n").unwrap();
    fs::write(d.join("r.txt"), "1 2\n3\n").unwrap();
    let out = forge(&["eval", "--hyp", "h.txt", "--ref", "r.txt"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 candidates but 2 references"));

    // an encoder with a missing layer-3 FFN tensor is named in the error
    ok(&["gen", "encoder", "--hidden", "8", "--ffn-dim", "8", "--layers", "4", "--out", "enc"], d);
    let manifest = fs::read_to_string(d.join("enc/manifest.json")).unwrap();
    let mut entries: Vec<serde_json::Value> = serde_json::from_str(&manifest).unwrap();
    let victim = entries.iter().position(|e| e["name"] == "encoder.layer.3.ffn.w1").unwrap();
    let bytes = entries[victim]["shape"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).product::<u64>() * 4;
    let offset = entries[victim]["offset"].as_u64().unwrap() as usize;
    entries.remove(victim);
    for e in entries.iter_mut() {
        let o = e["offset"].as_u64().unwrap();
        if o as usize > offset {
            e["offset"] = serde_json::json!(o - bytes);
        }
    }
    let mut blob = fs::read(d.join("enc/tensors.bin")).unwrap();
    blob.drain(offset..offset + bytes as usize);
    fs::write(d.join("enc/tensors.bin"), blob).unwrap();
    fs::write(d.join("enc/manifest.json"), serde_json::to_string(&entries).unwrap()).unwrap();
    let out = forge(&["init-map", "--encoder", "enc", "--heads", "2", "--out", "m"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("encoder.layer.3.ffn.w1"));

    // missing input file: an I/O failure at run time, reported with its path
    let out = forge(&["generate", "--model", "nowhere", "--input", "x", "--output", "y"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    let out = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["eval", "--hyp", "h.txt", "--ref", "h.txt"])
        .current_dir(d)
        .env("FORGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["eval", "--hyp", "h.txt", "--ref", "h.txt"])
        .current_dir(d)
        .env("FORGE_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn help_documents_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let subcommands: &[&[&str]] = &[
        &["gen", "corpus"],
        &["gen", "encoder"],
        &["corrupt"],
        &["init-map"],
        &["pretrain"],
        &["finetune"],
        &["generate"],
        &["eval"],
        &["recipe"],
    ];
    for sub in subcommands {
        let mut args = sub.to_vec();
        args.push("--help");
        let help = ok(&args, dir.path());
        let lines: Vec<&str> = help.lines().map(str::trim).collect();
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| l.starts_with("--") || l.starts_with("-h")) {
            // clap puts descriptions beside the flag or, when long, on the next line
            let inline = line.split_once("  ").is_some_and(|(_, rest)| !rest.trim().is_empty());
            let below = lines.get(i + 1).is_some_and(|n| !n.is_empty() && !n.starts_with('-'));
            assert!(inline || below, "{sub:?}: undocumented flag `{line}`");
        }
        assert!(help.contains("--"), "{sub:?} lists no flags");
    }
    let top = ok(&["--help"], dir.path());
    for sub in ["gen", "corrupt", "init-map", "pretrain", "finetune", "generate", "eval", "recipe"] {
        assert!(top.contains(sub), "{sub} missing from --help");
    }
}
