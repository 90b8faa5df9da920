//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use seedcl::augment::AugmentationPolicy;
use seedcl::cli::{run_from, RunConfig, CHECKPOINT_DIR, CLASSIFIER_DIR, PLACEMENTS_FILE};
use seedcl::contrastive::{
    byol_objective, ema_update, moco_objective, momentum_update, nt_xent_loss, pretrain_images, simclr_objective,
    Framework, FrameworkConfig, KeyQueue, Tower, TrainConfig,
};
use seedcl::metrics::{classification_report, f1_score, macro_average, round2, ConfusionMatrix, Scores};
use seedcl::net::{
    gradient_check, init_params, strip_all_heads_and_freeze, Checkpoint, Encoder, EncoderConfig, GradCheckConfig,
    Matrix, ParamRole, ParamStore,
};
use seedcl::probe::{classifier_spec, predict, probe_objective, split_labels, train_probe, LabelBudget, ProbeConfig, ProbeData};
use seedcl::rng::{seeded, stream};
use seedcl::synthgen::{generate_dataset, generate_toy_cutouts, DatasetManifest, DatasetSpec, Placement, Split, ToyConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

/// Brute-force NT-Xent: explicit sums over every anchor and candidate.
fn nt_xent_oracle(z: &[Vec<f64>], tau: f64) -> f64 {
    let unit: Vec<Vec<f64>> = z
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let sim = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let m = z.len();
    let mut total = 0.0;
    for i in 0..m {
        let pos = i ^ 1;
        let mut denom = 0.0;
        for k in 0..m {
            if k != i {
                denom += sim(i, k).exp();
            }
        }
        total += -(sim(i, pos).exp() / denom).ln();
    }
    total / m as f64
}

fn criterion_1() -> Outcome {
    let hand = Matrix::from_vec(4, 2, vec![1.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let (loss, _) = nt_xent_loss(&hand, 0.5).map_err(|e| e.to_string())?;
    check((loss - 0.23954).abs() <= 1e-4, format!("hand batch gave {loss}"))?;
    let rows: Vec<Vec<f64>> = hand.iter_rows().map(<[f64]>::to_vec).collect();
    let oracle = nt_xent_oracle(&rows, 0.5);
    check((loss - oracle).abs() <= 1e-12, format!("oracle {oracle} vs {loss}"))?;

    let single = Matrix::from_vec(2, 3, vec![0.3f64, -1.2, 2.0, 0.3, -1.2, 2.0]);
    let (zero, _) = nt_xent_loss(&single, 0.5).map_err(|e| e.to_string())?;
    check(zero == 0.0, format!("N=1 aligned gave {zero}"))?;

    let mut rng = seeded(1);
    for _ in 0..20 {
        let n = rng.gen_range(1..6);
        let d = rng.gen_range(2..9);
        let tau = rng.gen_range(0.1..1.0);
        let data: Vec<f64> = (0..2 * n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = Matrix::from_vec(2 * n, d, data.clone());
        let (l, _) = nt_xent_loss(&m, tau).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<f64>> = data.chunks(d).map(<[f64]>::to_vec).collect();
        let o = nt_xent_oracle(&rows, tau);
        check((l - o).abs() <= 1e-10, format!("random batch: {l} vs oracle {o}"))?;
    }
    Ok(format!("hand batch {loss:.5}, N=1 aligned {zero}, 20 random batches match the oracle"))
}

// ---------------------------------------------------------------- 2

fn grad_inputs(n: usize, size: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n).map(|_| (0..3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
}

fn criterion_2() -> Outcome {
    let size = 12;
    let enc = EncoderConfig::compact(size, 16);
    let mut fw = FrameworkConfig::desk(Framework::Simclr);
    fw.projection_hidden = 16;
    fw.latent_dim = 8;
    fw.predictor_hidden = 16;
    let cfg = GradCheckConfig::default();
    let mut lines = Vec::new();
    let mut report = |name: &str, r: seedcl::net::GradCheckReport| -> Result<(), String> {
        lines.push(format!("{name} {:.1e}", r.max_rel_error));
        check(r.checked >= 200 && r.passed(), format!("{name}: {r:?}"))
    };

    let tower_for = |fw: &FrameworkConfig, seed: u64| {
        let heads = fw.head_specs(16).unwrap();
        let p = init_params(&enc, &heads, &mut seeded(seed)).unwrap().cast::<f64>();
        (Tower::new(Encoder::new(&enc).unwrap(), &heads).unwrap(), p)
    };

    let (tower, p) = tower_for(&fw, 1);
    let x = grad_inputs(8, size, 2);
    report("nt-xent", gradient_check(|q| simclr_objective(&tower, q, &x, 0.5).unwrap(), &p, cfg, &mut seeded(3)))?;

    fw.framework = Framework::Moco;
    let (tower, p) = tower_for(&fw, 4);
    let x = grad_inputs(4, size, 5);
    let mut rng = seeded(6);
    let keys = Matrix::from_vec(4, 8, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let mut queue = KeyQueue::new(16).unwrap();
    queue.push_batch(&Matrix::from_vec(10, 8, (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect())).unwrap();
    report("infonce", gradient_check(|q| moco_objective(&tower, q, &x, &keys, &queue, 0.5).unwrap(), &p, cfg, &mut seeded(7)))?;

    fw.framework = Framework::Byol;
    let (tower, p) = tower_for(&fw, 8);
    let x = grad_inputs(4, size, 9);
    let targets = Matrix::from_vec(4, 8, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
    report("byol", gradient_check(|q| byol_objective(&tower, q, &x, &targets).unwrap(), &p, cfg, &mut seeded(11)))?;

    let spec = classifier_spec(16, 3).unwrap();
    let p = init_params(&enc, &[spec.clone()], &mut seeded(12)).unwrap().cast::<f64>();
    let tower = Tower::new(Encoder::new(&enc).unwrap(), &[spec]).unwrap();
    let x = grad_inputs(6, size, 13);
    let labels = [0, 1, 2, 2, 1, 0];
    report("probe-ce", gradient_check(|q| probe_objective(&tower, q, &x, &labels).unwrap(), &p, cfg, &mut seeded(14)))?;
    Ok(format!("max relative error: {}", lines.join(", ")))
}

// ---------------------------------------------------------------- 3

fn store(values: &[f64]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("w", vec![values.len()], values.to_vec(), ParamRole::Weight).unwrap();
    s
}

fn criterion_3() -> Outcome {
    let mut rng = seeded(21);
    let a: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let vals = |s: &ParamStore<f64>| s.get("w").unwrap().values.clone();

    for (name, f) in [
        ("momentum_update", momentum_update::<f64> as fn(&mut ParamStore<f64>, &ParamStore<f64>, f64) -> _),
        ("ema_update", ema_update::<f64>),
    ] {
        let mut t = store(&a);
        f(&mut t, &store(&b), 1.0).map_err(|e| e.to_string())?;
        check(vals(&t) == a, format!("{name} with m = 1 moved the target"))?;
        let mut t = store(&a);
        f(&mut t, &store(&b), 0.0).map_err(|e| e.to_string())?;
        check(vals(&t) == b, format!("{name} with m = 0 is not a copy"))?;
        let m = 0.9;
        let steps = 37;
        let mut t = store(&a);
        for _ in 0..steps {
            f(&mut t, &store(&b), m).map_err(|e| e.to_string())?;
        }
        let mt = m.powi(steps);
        let worst = vals(&t)
            .iter()
            .zip(a.iter().zip(&b))
            .map(|(v, (a0, q))| (v - (mt * a0 + (1.0 - mt) * q)).abs())
            .fold(0.0, f64::max);
        check(worst <= 1e-6, format!("{name}: geometric closed form off by {worst}"))?;
    }

    for k in [4usize, 64, 256] {
        let dim = 4 * k;
        let one_hot = |labels: std::ops::Range<usize>| {
            let n = labels.len();
            let mut m = Matrix::<f64>::zeros(n, dim);
            for (r, l) in labels.enumerate() {
                m.row_mut(r)[l] = 1.0;
            }
            m
        };
        let label = |v: &[f64]| v.iter().position(|&x| x == 1.0).unwrap();
        let mut q = KeyQueue::new(k).map_err(|e| e.to_string())?;
        let batch = (k / 4).max(1) + 1;
        let mut pushed = 0;
        while pushed < 3 * k + 1 {
            let n = batch.min(k);
            q.push_batch(&one_hot(pushed..pushed + n)).map_err(|e| e.to_string())?;
            pushed += n;
            let expect: Vec<usize> = (pushed.saturating_sub(k)..pushed).collect();
            let got: Vec<usize> = q.iter_oldest_first().map(label).collect();
            check(got == expect, format!("K = {k}: queue holds {got:?} after {pushed} pushes"))?;
        }
        check(q.push_batch(&one_hot(0..k + 1)).is_err(), format!("K = {k}: oversized batch accepted"))?;
    }
    Ok("fixed points, copies and 37-step closed form exact; FIFO verified for K = 4, 64, 256".into())
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    // per-class (precision, recall, f1) for Canola, Rough Rice, Sorghum, Soy, Wheat; printed macro row
    let table: [(&str, [[f64; 3]; 5], [f64; 3]); 4] = [
        (
            "ResNet-50",
            [[0.96, 1.00, 0.98], [0.85, 0.94, 0.89], [0.79, 0.87, 0.83], [1.00, 0.98, 0.99], [0.83, 0.62, 0.71]],
            [0.89, 0.88, 0.88],
        ),
        (
            "SimCLR",
            [[0.60, 1.00, 0.75], [0.83, 0.39, 0.53], [1.00, 0.04, 0.08], [0.77, 0.82, 0.80], [0.32, 0.63, 0.43]],
            [0.70, 0.58, 0.51],
        ),
        (
            "MoCo",
            [[0.83, 1.00, 0.91], [0.98, 0.75, 0.85], [0.79, 0.43, 0.56], [0.98, 0.91, 0.95], [0.43, 0.78, 0.55]],
            [0.80, 0.78, 0.76],
        ),
        (
            "BYOL",
            [[0.65, 0.95, 0.77], [0.62, 0.46, 0.52], [0.29, 0.04, 0.07], [0.77, 0.89, 0.82], [0.43, 0.64, 0.51]],
            [0.55, 0.60, 0.54],
        ),
    ];
    let mut worst = 0.0f64;
    for (name, rows, printed) in table {
        let scores: Vec<Scores> = rows.iter().map(|r| Scores { precision: r[0], recall: r[1], f1: r[2] }).collect();
        let m = macro_average(&scores);
        for (got, want, field) in [(m.precision, printed[0], "precision"), (m.recall, printed[1], "recall"), (m.f1, printed[2], "f1")] {
            let d = (got - want).abs();
            worst = worst.max(d);
            check(d <= 0.01 + 1e-12, format!("{name} macro {field}: {got:.4} vs printed {want}"))?;
        }
    }
    let f1 = f1_score(0.96, 1.00);
    check(format!("{:.2}", round2(f1)) == "0.98", format!("Canola F1 {f1} does not render 0.98"))?;
    let simclr_p = macro_average(&table[1].1.map(|r| Scores { precision: r[0], recall: r[1], f1: r[2] }));
    check(format!("{:.2}", round2(simclr_p.precision)) == "0.70", "SimCLR macro precision does not render 0.70")?;
    Ok(format!("12 macro values within {worst:.3}; Canola F1 {f1:.4} renders 0.98"))
}

// ---------------------------------------------------------------- 5

fn count_pngs(dir: &Path) -> usize {
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            n += count_pngs(&p);
        } else if p.extension().is_some_and(|x| x == "png") {
            n += 1;
        }
    }
    n
}

fn verify_generated(out: &Path, classes: usize, per_class: usize, spi: usize, size: usize) -> Result<String, String> {
    let manifest = DatasetManifest::read(&out.join("manifest.jsonl")).map_err(|e| e.to_string())?;
    let total = classes * per_class;
    let train = classes * (per_class * 4 / 5);
    check(count_pngs(&out.join("images")) == total, format!("expected {total} PNG files"))?;
    check(manifest.records.len() == total, "manifest record count")?;
    check(manifest.count(Split::Train) == train, format!("{} train records", manifest.count(Split::Train)))?;
    check(manifest.count(Split::Val) == total - train, format!("{} val records", manifest.count(Split::Val)))?;
    let text = std::fs::read_to_string(out.join(PLACEMENTS_FILE)).map_err(|e| e.to_string())?;
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    check(lines.len() == total, "placement sidecar length")?;
    let mut rng = seeded(55);
    let sample = rand::seq::index::sample(&mut rng, total, 50.min(total)).into_vec();
    for (i, line) in lines.iter().enumerate() {
        let placements: Vec<Placement> = serde_json::from_value(line["placements"].clone()).map_err(|e| e.to_string())?;
        check(placements.len() == spi, format!("record {i} has {} placements", placements.len()))?;
        if sample.contains(&i) {
            let rel = line["path"].as_str().unwrap();
            check(rel == manifest.records[i].path, "sidecar order differs from manifest")?;
            let img = seedcl::Image::load(&out.join(rel)).map_err(|e| e.to_string())?;
            check(img.width() == size && img.height() == size, format!("{rel} is {}x{}", img.width(), img.height()))?;
            for p in &placements {
                check(p.x + p.width <= size && p.y + p.height <= size, format!("{rel}: out-of-bounds {p:?}"))?;
            }
        }
    }
    Ok(format!("{total} images, {train}/{} split, {spi} placements each", total - train))
}

fn gen(out: &Path, extra: &[&str]) -> Result<Duration, String> {
    let t = Instant::now();
    let mut args = vec!["seedcl", "gen-synthetic", "--toy-classes", "5", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let code = run_from(args);
    check(code == 0, format!("gen-synthetic exited with {code}"))?;
    Ok(t.elapsed())
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = dir.path().join("small");
    let ts = gen(&small, &["--per-class", "10", "--size", "32", "--seed", "3"])?;
    verify_generated(&small, 5, 10, 50, 32)?;
    check(ts < Duration::from_secs(10), format!("scaled variant took {ts:?}"))?;

    let full = dir.path().join("full");
    let tf = gen(&full, &["--seed", "3"])?;
    let summary = verify_generated(&full, 5, 1000, 50, 224)?;
    check(tf < Duration::from_secs(600), format!("reference generation took {tf:?}"))?;
    Ok(format!("{summary}; reference {:.0}s, scaled {:.1}s", tf.as_secs_f64(), ts.as_secs_f64()))
}

// ---------------------------------------------------------------- 6

const SSL_SIZE: usize = 32;
const SSL_SEED: u64 = 0;

struct SslData {
    _dir: tempfile::TempDir,
    train_images: Vec<seedcl::Image>,
    probe: ProbeData,
    held_out: Vec<(seedcl::Image, usize)>,
}

/// Three toy classes, 200 images each, low-saturation seeds whose count per
/// image varies between 2 and 38.
fn ssl_dataset() -> SslData {
    let dir = tempfile::tempdir().unwrap();
    let toy = ToyConfig { saturation: 0.15, ..ToyConfig::for_canvas(SSL_SIZE) };
    let cuts = generate_toy_cutouts(3, 20, &toy, &mut stream(7, &[0])).unwrap();
    let classes: Vec<_> = (0..3)
        .map(|c| {
            let n = format!("toy_{c}");
            (n.clone(), cuts.iter().filter(|x| x.class_label == n).cloned().collect::<Vec<_>>())
        })
        .collect();
    let mut spec = DatasetSpec::new(200, 20, SSL_SIZE);
    spec.seed_count_jitter = 18;
    let m = generate_dataset(&classes, &spec, dir.path(), 11).unwrap().manifest;
    let train_images = m.load(m.records_in(Split::Train)).unwrap().into_iter().map(|x| x.0).collect();
    // 5% of 200 images per class: 8 to train the probe, 2 to validate it
    let split = split_labels(&m, LabelBudget::PerClass(10), 2, &mut seeded(3)).unwrap();
    let probe = ProbeData {
        train: m.load(&split.train_records).unwrap(),
        val: m.load(&split.val_records).unwrap(),
        class_count: 3,
    };
    let held_out = m.load(m.records_in(Split::Val)).unwrap();
    SslData { _dir: dir, train_images, probe, held_out }
}

fn probe_accuracy(encoder: &ParamStore<f32>, data: &SslData) -> Result<f64, String> {
    let enc = EncoderConfig::compact(SSL_SIZE, 128);
    let out = train_probe(encoder, &enc, &data.probe, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    let mut full = encoder.clone();
    full.merge(out.params).map_err(|e| e.to_string())?;
    let images: Vec<_> = data.held_out.iter().map(|x| x.0.clone()).collect();
    let pred = predict(&enc, &full, &images).map_err(|e| e.to_string())?;
    Ok(pred.iter().zip(&data.held_out).filter(|(p, t)| **p == t.1).count() as f64 / data.held_out.len() as f64)
}

fn criterion_6() -> Outcome {
    let data = ssl_dataset();
    let enc = EncoderConfig::compact(SSL_SIZE, 128);
    // the pretraining runs start from this same encoder draw
    let random = strip_all_heads_and_freeze(&init_params(&enc, &[], &mut stream(SSL_SEED, &[1])).unwrap());
    let base = probe_accuracy(&random, &data)?;
    let mut parts = vec![format!("random {base:.3}")];
    let mut failures = Vec::new();
    for fw in Framework::ALL {
        let t = Instant::now();
        let train = TrainConfig { master_seed: SSL_SEED, ..TrainConfig::desk() };
        let out = pretrain_images(
            &FrameworkConfig::desk(fw),
            &train,
            &data.train_images,
            &AugmentationPolicy::standard(SSL_SIZE),
            &enc,
            &mut |_| {},
        )
        .map_err(|e| e.to_string())?;
        let acc = probe_accuracy(&strip_all_heads_and_freeze(&out.checkpoint.params), &data)?;
        let secs = t.elapsed().as_secs_f64();
        let gain = 100.0 * (acc - base);
        parts.push(format!("{fw} {acc:.3} ({gain:+.1} pts, {secs:.0}s)"));
        let ok = match fw {
            Framework::Byol => gain >= 10.0,
            _ => acc >= 0.80 && gain >= 15.0,
        };
        if !ok || secs > 900.0 {
            failures.push(fw.to_string());
        }
    }
    let summary = parts.join(", ");
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; below threshold: {}", failures.join(", ")))
    }
}

// ---------------------------------------------------------------- 7

fn dir_checksum(dir: &Path) -> u64 {
    let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().flatten().map(|e| e.path()).collect();
    names.sort();
    // FNV-1a over file names and contents
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in names {
        let bytes = std::fs::read(&p).unwrap();
        for b in p.file_name().unwrap().to_string_lossy().bytes().chain(bytes) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

fn small_toy(out: &Path, per_class: usize) -> Result<(), String> {
    let args = ["seedcl", "gen-synthetic", "--toy-classes", "3", "--per-class", &per_class.to_string(), "--size", "32",
        "--seeds-per-image", "12", "--seed", "5", "--out", out.to_str().unwrap()];
    check(run_from(args) == 0, "gen-synthetic failed")
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    small_toy(&data, 30)?;
    let run = dir.path().join("run");
    let args = ["seedcl", "pretrain", "--framework", "simclr", "--epochs", "2", "--data", data.to_str().unwrap(),
        "--out", run.to_str().unwrap()];
    check(run_from(args) == 0, "pretrain failed")?;

    let full = Checkpoint::load(&run.join(CHECKPOINT_DIR)).map_err(|e| e.to_string())?;
    let stripped = Checkpoint { params: strip_all_heads_and_freeze(&full.params), ..full };
    let enc_dir = dir.path().join("encoder");
    stripped.save(&enc_dir).map_err(|e| e.to_string())?;
    let before = dir_checksum(&enc_dir);

    let probe_out = dir.path().join("probe");
    let args = ["seedcl", "probe", "--ckpt", enc_dir.to_str().unwrap(), "--data", data.to_str().unwrap(), "--per-class", "10",
        "--per-class-val", "2", "--epochs", "100", "--out", probe_out.to_str().unwrap()];
    check(run_from(args) == 0, "probe failed")?;
    let after = dir_checksum(&enc_dir);
    check(before == after, format!("checksum {before:016x} became {after:016x}"))?;

    let classifier = Checkpoint::load(&probe_out.join(CLASSIFIER_DIR)).map_err(|e| e.to_string())?;
    check(classifier.params.iter().all(|(n, _)| n.starts_with("head.linear_classifier.")), "probe output holds encoder entries")?;
    check(stripped.params.iter().all(|(n, p)| n.starts_with("enc.") && p.frozen), "stripped encoder has unfrozen entries")?;

    let manifest = DatasetManifest::read(&data.join("manifest.jsonl")).map_err(|e| e.to_string())?;
    let split = split_labels(&manifest, LabelBudget::PerClass(10), 2, &mut seeded(1)).map_err(|e| e.to_string())?;
    let pd = ProbeData {
        train: manifest.load(&split.train_records).map_err(|e| e.to_string())?,
        val: manifest.load(&split.val_records).map_err(|e| e.to_string())?,
        class_count: 3,
    };
    let enc_cfg = seedcl::cli::checkpoint_encoder(&stripped).map_err(|e| e.to_string())?;
    let cfg = ProbeConfig { epochs: 100, ..ProbeConfig::default() };
    let bytes = stripped.params.to_le_bytes();
    let out = train_probe(&stripped.params, &enc_cfg, &pd, &cfg).map_err(|e| e.to_string())?;
    check(stripped.params.to_le_bytes() == bytes, "in-memory encoder changed")?;
    check(out.params.iter().all(|(n, _)| !n.starts_with("enc.")), "probe returned encoder entries")?;
    Ok(format!("encoder checksum {before:016x} unchanged after 100 probe epochs"))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    if std::env::var_os("SEEDCL_THREADS").is_some() {
        return Err("SEEDCL_THREADS is set; determinism is defined for single-threaded runs".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    small_toy(&data, 60)?;
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&RunConfig::desk(Framework::Simclr)).unwrap()).unwrap();
    let mut files: BTreeMap<&str, [Vec<u8>; 2]> = BTreeMap::new();
    for (i, name) in ["a", "b"].into_iter().enumerate() {
        let out = dir.path().join(name);
        let args = ["seedcl", "pretrain", "--framework", "simclr", "--config", cfg_path.to_str().unwrap(), "--seed", "42",
            "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
        check(run_from(args) == 0, "pretrain failed")?;
        for f in ["loss.csv", "epochs.csv", "checkpoint/meta.json", "checkpoint/params.bin"] {
            files.entry(f).or_default()[i] = std::fs::read(out.join(f)).map_err(|e| e.to_string())?;
        }
    }
    for (f, [a, b]) in &files {
        check(!a.is_empty() && a == b, format!("{f} differs between runs"))?;
    }
    let rows = String::from_utf8_lossy(&files["loss.csv"][0]).lines().count() - 1;
    Ok(format!("loss CSV ({rows} steps), epoch CSV and checkpoint bytes identical"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let names: Vec<String> = (0..5).map(|c| format!("c{c}")).collect();
    let mut rng = seeded(9);
    let truth: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..5)).collect();
    let pred: Vec<usize> = truth.iter().map(|&t| if rng.gen_bool(0.6) { t } else { rng.gen_range(0..5) }).collect();
    let truth_s: Vec<&str> = truth.iter().map(|&i| names[i].as_str()).collect();
    let pred_s: Vec<&str> = pred.iter().map(|&i| names[i].as_str()).collect();
    let cm = seedcl::metrics::confusion_matrix(&truth_s, &pred_s, &names).map_err(|e| e.to_string())?;
    let r = classification_report(&cm).map_err(|e| e.to_string())?;

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut macro_sum = [0.0; 3];
    for k in 0..5 {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&t, &p) in truth.iter().zip(&pred) {
            match (t == k, p == k) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rc = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
        let c = &r.per_class[k];
        check(close(c.scores.precision, p) && close(c.scores.recall, rc) && close(c.scores.f1, f), format!("class {k} differs"))?;
        check(c.support as f64 == tp + fneg, format!("class {k} support"))?;
        macro_sum[0] += p;
        macro_sum[1] += rc;
        macro_sum[2] += f;
    }
    let acc = truth.iter().zip(&pred).filter(|(t, p)| t == p).count() as f64 / 1000.0;
    check(close(r.accuracy, acc), "accuracy differs")?;
    check(
        close(r.macro_avg.precision, macro_sum[0] / 5.0)
            && close(r.macro_avg.recall, macro_sum[1] / 5.0)
            && close(r.macro_avg.f1, macro_sum[2] / 5.0),
        "macro averages differ",
    )?;
    check(r.total == 1000 && cm.total() == 1000, "total")?;
    let same = ConfusionMatrix::from_indices(names, &truth, &pred).map_err(|e| e.to_string())?;
    check(same == cm, "index and label constructors disagree")?;
    Ok(format!("1000 pairs, accuracy {acc:.3}; every field within 1e-12"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("1 NT-Xent oracle", criterion_1, Duration::from_secs(1)),
        ("2 gradient checks", criterion_2, Duration::from_secs(120)),
        ("3 update rules and key queue", criterion_3, Duration::from_secs(10)),
        ("4 published macro averages", criterion_4, Duration::from_secs(1)),
        ("5 dataset contract", criterion_5, Duration::from_secs(610)),
        ("6 SSL efficacy at desk scale", criterion_6, Duration::from_secs(3 * 900 + 300)),
        ("7 freezing contract", criterion_7, Duration::from_secs(300)),
        ("8 determinism", criterion_8, Duration::from_secs(600)),
        ("9 metrics brute force", criterion_9, Duration::from_secs(1)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut ran, mut failed) = (0, 0);
    for (name, run, budget) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.split(' ').next() == Some(o.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        let result = match result {
            Ok(m) if took > budget => Err(format!("{m}; took {took:?}, budget {budget:?}")),
            r => r,
        };
        match result {
            Ok(m) => println!("PASS [{name}] {m} ({:.1}s)", took.as_secs_f64()),
            Err(m) => {
                failed += 1;
                println!("FAIL [{name}] {m} ({:.1}s)", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    // FAIL lines are reported, not fatal, unless --strict is given
    if failed > 0 && std::env::args().any(|a| a == "--strict") {
        std::process::exit(1);
    }
}
