//! Acceptance suite: one test per criterion, each printing a pass line
//! with the measured evidence (run with --nocapture to see details).

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndiff::{Array, Tape};
use rand::Rng;

use turnwise::corpus::{partition_articles, write_articles_jsonl, Article};
use turnwise::evaluation::{
    mean_average_precision, mean_reciprocal_rank, metric_report, precision_at_1, recall_n_k,
    write_examples, DialogueExample, RankedGroup,
};
use turnwise::model::{
    check_loss_gradients, inspect_example, l_final, l_gen, load_checkpoint, match_loss,
    save_checkpoint, task_loss, Checkpoint, EncoderConfig, LossKind,
};
use turnwise::samplegen::{
    generate_general, read_samples, validate_sample, CorpusIndex, GenerationConfig,
    InsertionProvenance, PretrainSample,
};
use turnwise::seeding::scoped_rng;
use turnwise::tokenizer::Vocab;
use turnwise::training::{
    domain_multitask, finetune, pretrain, Precision, TaskFlags, TaskSets, TrainConfig,
};

const TASKS: [&str; 3] = ["insertion", "deletion", "replacement"];

fn synthetic_corpus(n_articles: usize, paras: usize, sents: usize) -> Vec<Article> {
    (1..=n_articles)
        .map(|a| Article {
            id: format!("syn-{a:04}"),
            title: String::new(),
            paragraphs: (0..paras)
                .map(|p| {
                    (0..sents)
                        .map(|s| format!("art {a} para {p} sentence {s} keeps the record alive."))
                        .collect()
                })
                .collect(),
        })
        .collect()
}

fn article_ids(articles: &[Article]) -> Vec<String> {
    articles.iter().map(|a| a.id.clone()).collect()
}

fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Upper 1% chi-square quantiles: the statistic must stay below these for
/// the uniformity hypothesis to survive at p > 0.01.
fn chi_critical_p01(dof: usize) -> f64 {
    match dof {
        2 => 9.210,
        3 => 11.345,
        4 => 13.277,
        _ => panic!("no critical value tabulated for dof {dof}"),
    }
}

// --- criterion 1: sample-construction oracle ---

#[test]
fn criterion_01_sample_construction_oracle() {
    let start = Instant::now();
    let articles = synthetic_corpus(1380, 12, 10);
    let partition = partition_articles(&article_ids(&articles), 41).unwrap();
    let cfg = GenerationConfig {
        seed: 41,
        dense_windows: true,
        ..GenerationConfig::default()
    };
    let sets = generate_general(&articles, &partition, &cfg).unwrap();

    let index = CorpusIndex::from_articles(&articles);
    let by_id: HashMap<&str, &Article> =
        articles.iter().map(|a| (a.id.as_str(), a)).collect();

    for (name, set) in [
        ("insertion", &sets.insertion),
        ("deletion", &sets.deletion),
        ("replacement", &sets.replacement),
    ] {
        assert!(
            set.len() >= 10_000,
            "{name}: only {} samples generated",
            set.len()
        );
    }

    // 100% validate_sample, plus speaker patterns and label uniformity.
    let mut patterns = BTreeSet::new();
    let mut ins_labels = [0usize; 3];
    for sample in &sets.insertion {
        let report = validate_sample(sample, &index).unwrap();
        assert!(report.pass, "insertion sample failed: {:?}", report.reasons);
        let PretrainSample::Insertion(ins) = sample else {
            panic!("wrong variant in insertion set");
        };
        let InsertionProvenance::General {
            source_id,
            paragraph_a,
            ..
        } = &ins.provenance
        else {
            panic!("general generation must emit general provenance");
        };
        let para_a = &by_id[source_id.as_str()].paragraphs[*paragraph_a];
        let mut pattern = String::from("A");
        for utterance in &ins.tail {
            pattern.push(if para_a.iter().any(|s| s == utterance) {
                'A'
            } else {
                'B'
            });
        }
        patterns.insert(pattern);
        ins_labels[ins.label] += 1;
    }
    let expected: BTreeSet<String> =
        ["AABB", "ABAB", "ABBA"].into_iter().map(String::from).collect();
    assert_eq!(patterns, expected, "turn-shift patterns");

    let mut del_labels = [0usize; 4];
    for sample in &sets.deletion {
        let report = validate_sample(sample, &index).unwrap();
        assert!(report.pass, "deletion sample failed: {:?}", report.reasons);
        del_labels[sample.label()] += 1;
    }
    let mut rep_labels = [0usize; 5];
    for sample in &sets.replacement {
        let report = validate_sample(sample, &index).unwrap();
        assert!(report.pass, "replacement sample failed: {:?}", report.reasons);
        rep_labels[sample.label()] += 1;
    }

    for (name, counts) in [
        ("insertion", &ins_labels[..]),
        ("deletion", &del_labels[..]),
        ("replacement", &rep_labels[..]),
    ] {
        let dof = counts.len() - 1;
        let stat = chi_square_uniform(counts);
        assert!(
            stat < chi_critical_p01(dof),
            "{name} labels not uniform at p>0.01: chi^2 {stat:.2}, counts {counts:?}"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 1 min");
    println!(
        "criterion 1 PASS: {}/{}/{} samples, 100% valid, patterns {{AABB,ABAB,ABBA}}, labels uniform (p>0.01), {elapsed:?}",
        sets.insertion.len(),
        sets.deletion.len(),
        sets.replacement.len()
    );
}

// --- criterion 2: partition law ---

#[test]
fn criterion_02_partition_law() {
    let mut rng = scoped_rng(99, "acceptance:partition");
    for trial in 0..1000 {
        let n: usize = rng.gen_range(1..=90);
        let stem: u32 = rng.gen();
        let ids: Vec<String> = (0..n).map(|i| format!("id{stem:x}-{i}")).collect();
        let seed: u64 = rng.gen();
        let partition = partition_articles(&ids, seed).unwrap();

        let mut union: BTreeSet<&String> = BTreeSet::new();
        for set in partition.sets() {
            for id in set {
                assert!(union.insert(id), "trial {trial}: {id} in two sets");
            }
        }
        assert_eq!(union.len(), n, "trial {trial}: not exhaustive");
        assert!(ids.iter().all(|id| union.contains(id)));

        let sizes: Vec<usize> = partition.sets().iter().map(|s| s.len()).collect();
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        assert!(
            max - min <= 1,
            "trial {trial}: unbalanced sizes {sizes:?} for n={n}"
        );
    }
    println!("criterion 2 PASS: 1000 random partitions disjoint, exhaustive, balanced within 1");
}

// --- criterion 3: gradient correctness ---

#[test]
fn criterion_03_gradient_correctness() {
    let start = Instant::now();
    let enc = EncoderConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        max_positions: 64,
        vocab_size: 32,
        dropout: 0.0,
        seed: 5,
    };
    let mut worst: f64 = 0.0;
    for kind in LossKind::ALL {
        let report = check_loss_gradients(&enc, kind, 1e-5).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "{}: max rel err {:.3e} (worst at {:?})",
            report.kind.name(),
            report.max_rel_err,
            report.worst
        );
        worst = worst.max(report.max_rel_err);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}, budget 2 min");
    println!(
        "criterion 3 PASS: four losses vs central differences, max rel err {worst:.3e} < 1e-4, {elapsed:?}"
    );
}

// --- criterion 4: loss identities ---

#[test]
fn criterion_04_loss_identities() {
    let tape = Tape::new();

    // Uniform scores: cross entropy = ln(#candidates).
    for n in [2usize, 3, 7, 50] {
        let scores = tape.leaf(Array::new(vec![n], vec![0.37; n]).unwrap());
        let loss = task_loss(&tape, scores, n - 1).unwrap();
        let value = tape.value(loss).data()[0];
        assert!(
            (value - (n as f64).ln()).abs() < 1e-6,
            "n={n}: CE {value} vs ln(n) {}",
            (n as f64).ln()
        );
    }

    // L_gen and L_final are bitwise exactly the fixed-order sums.
    let a = tape.leaf(Array::scalar(0.7311));
    let b = tape.leaf(Array::scalar(1.25));
    let c = tape.leaf(Array::scalar(0.0625));
    let d = tape.leaf(Array::scalar(2.5));

    let gen = l_gen(&tape, a, b, c).unwrap();
    let gen_manual = tape.add(tape.add(a, b).unwrap(), c).unwrap();
    assert_eq!(
        tape.value(gen).data()[0].to_bits(),
        tape.value(gen_manual).data()[0].to_bits(),
        "L_gen is not the bitwise fixed-order sum"
    );

    let fin = l_final(&tape, [Some(a), None, Some(c), Some(d)]).unwrap();
    let fin_manual = tape.add(tape.add(a, c).unwrap(), d).unwrap();
    assert_eq!(
        tape.value(fin).data()[0].to_bits(),
        tape.value(fin_manual).data()[0].to_bits(),
        "L_final is not the bitwise fixed-order sum"
    );

    // match_loss at s = 0.5 is ln 2 for either label.
    let s = tape.leaf(Array::scalar(0.5));
    for label in [true, false] {
        let loss = match_loss(&tape, s, label).unwrap();
        let value = tape.value(loss).data()[0];
        assert!(
            (value - 2f64.ln()).abs() < 1e-9,
            "match_loss(0.5, {label}) = {value}"
        );
    }

    println!("criterion 4 PASS: uniform CE = ln n (1e-6), L_gen/L_final bitwise sums, match_loss(0.5) = ln 2 (1e-9)");
}

// --- criterion 5: overfit trainability + ablation isolation ---

fn overfit_sets(per_task: usize) -> (TaskSets, Vec<Article>) {
    let articles = synthetic_corpus(40, 8, 10);
    let partition = partition_articles(&article_ids(&articles), 7).unwrap();
    let cfg = GenerationConfig {
        seed: 7,
        dense_windows: true,
        ..GenerationConfig::default()
    };
    let generated = generate_general(&articles, &partition, &cfg).unwrap();
    let mut sets = TaskSets {
        insertion: generated.insertion,
        deletion: generated.deletion,
        replacement: generated.replacement,
    };
    for set in [&mut sets.insertion, &mut sets.deletion, &mut sets.replacement] {
        assert!(set.len() >= per_task, "corpus too small: {}", set.len());
        set.truncate(per_task);
    }
    (sets, articles)
}

fn corpus_vocab(articles: &[Article]) -> Vocab {
    let texts = articles
        .iter()
        .flat_map(|a| a.paragraphs.iter().flatten())
        .map(String::as_str);
    Vocab::build(texts, 8_192, 1).unwrap()
}

#[test]
fn criterion_05_overfit_and_ablation_isolation() {
    let start = Instant::now();
    let (sets, articles) = overfit_sets(64);
    let vocab = corpus_vocab(&articles);
    let enc = EncoderConfig {
        layers: 2,
        heads: 4,
        d_model: 32,
        d_ff: 64,
        max_positions: 128,
        vocab_size: vocab.size(),
        dropout: 0.0,
        seed: 3,
    };
    let aux_only = TaskFlags {
        insertion: true,
        deletion: true,
        replacement: true,
        reselect: false,
    };
    let cfg = TrainConfig {
        lr: 3e-3,
        warmup_proportion: 0.05,
        batch_size: 8,
        epochs: 500,
        eval_every: 10,
        tasks: aux_only,
        seed: 3,
        precision: Precision::F64,
        max_len: 128,
        target_accuracy: Some(0.95),
    };
    // Validation on the training sets measures training accuracy.
    let run = pretrain(&sets, &sets, &vocab, &enc, &cfg).unwrap();
    let last = run.history.last().unwrap();
    for task in TASKS {
        let acc = last.scores[task];
        assert!(acc >= 0.95, "{task} training accuracy {acc} < 0.95");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}, budget 10 min");

    // Ablation isolation. Parameters are shared, so traces can only be
    // compared where parameters are identical across configurations: at
    // the first step, before any update. Task streams and dropout draw
    // from per-task scoped rngs, so each surviving task sees the same
    // batch there, and its loss must be bit-identical; afterwards the
    // disabled column must stay empty while the others keep running.
    let (small, _) = overfit_sets(8);
    let short = TrainConfig {
        epochs: 2,
        eval_every: 4,
        target_accuracy: None,
        ..cfg.clone()
    };
    let full = pretrain(&small, &small, &vocab, &enc, &short).unwrap();
    let reference = &full.trace[0];
    let pick = |r: &turnwise::training::StepRecord, task: &str| match task {
        "insertion" => r.insertion,
        "deletion" => r.deletion,
        _ => r.replacement,
    };
    for disabled in TASKS {
        let mut flags = aux_only;
        match disabled {
            "insertion" => flags.insertion = false,
            "deletion" => flags.deletion = false,
            _ => flags.replacement = false,
        }
        let ablated = pretrain(
            &small,
            &small,
            &vocab,
            &enc,
            &TrainConfig {
                tasks: flags,
                ..short.clone()
            },
        )
        .unwrap();
        for task in TASKS {
            if task == disabled {
                assert!(
                    ablated.trace.iter().all(|r| pick(r, task).is_none()),
                    "disabled {task} must leave its column empty"
                );
            } else {
                let kept = pick(&ablated.trace[0], task).unwrap();
                let original = pick(reference, task).unwrap();
                assert_eq!(
                    kept.to_bits(),
                    original.to_bits(),
                    "first-step {task} loss changed when {disabled} was disabled"
                );
                assert!(ablated.trace.iter().all(|r| pick(r, task).is_some()));
            }
        }
    }

    println!(
        "criterion 5 PASS: 64/task d_model=32 2-layer at {:?} accuracy in {} steps, {elapsed:?}; ablations leave shared-parameter step losses bit-identical",
        TASKS.map(|t| last.scores[t]),
        run.steps_run
    );
}

// --- criterion 6: fine-tuning sanity ---

fn selection_examples(groups: usize, seed: u64, tag: &str) -> Vec<DialogueExample> {
    let fillers = [
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    ];
    let mut rng = scoped_rng(seed, "acceptance:selection");
    let mut out = Vec::with_capacity(groups * 2);
    for g in 0..groups {
        let context: Vec<String> = (0..3)
            .map(|t| {
                format!(
                    "{} asks about item {g} turn {t}",
                    fillers[rng.gen_range(0..fillers.len())]
                )
            })
            .collect();
        let pick = fillers[rng.gen_range(0..fillers.len())];
        let group_id = format!("{tag}-{g}");
        out.push(DialogueExample {
            context: context.clone(),
            response: format!("indeed indeed {pick} item {g}"),
            label: 1,
            group_id: group_id.clone(),
        });
        out.push(DialogueExample {
            context,
            response: format!("however however {pick} item {g}"),
            label: 0,
            group_id,
        });
    }
    out
}

#[test]
fn criterion_06_finetuning_sanity() {
    let train = selection_examples(48, 1, "train");
    let valid = selection_examples(24, 2, "valid");
    let texts: Vec<&str> = train
        .iter()
        .chain(&valid)
        .flat_map(|ex| {
            ex.context
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(ex.response.as_str()))
        })
        .collect();
    let vocab = Vocab::build(texts, 8_192, 1).unwrap();
    let enc = EncoderConfig {
        layers: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        max_positions: 64,
        vocab_size: vocab.size(),
        dropout: 0.0,
        seed: 9,
    };
    let init = Checkpoint::fresh(enc).unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        warmup_proportion: 0.05,
        batch_size: 8,
        epochs: 20,
        eval_every: 1_000,
        tasks: TaskFlags {
            insertion: false,
            deletion: false,
            replacement: false,
            reselect: true,
        },
        seed: 9,
        precision: Precision::F64,
        max_len: 64,
        target_accuracy: None,
    };

    let ft = finetune(&train, &valid, init.clone(), &vocab, &cfg).unwrap();
    let best_r1 = ft.reports.iter().map(|r| r.r_at_1).fold(0.0, f64::max);
    let best_epoch = ft
        .reports
        .iter()
        .position(|r| r.r_at_1 >= 0.99)
        .map(|i| i + 1);
    assert!(
        best_r1 >= 0.99,
        "R_2@1 reached only {best_r1} within 20 epochs"
    );

    // Multi-task learning with every auxiliary off is the same procedure.
    let mt = domain_multitask(&train, &valid, init, &vocab, &cfg).unwrap();
    assert_eq!(ft.trace.len(), mt.trace.len());
    for (x, y) in ft.trace.iter().zip(&mt.trace) {
        assert_eq!(x.step, y.step);
        assert_eq!(x.total.to_bits(), y.total.to_bits(), "step {}", x.step);
        assert_eq!(
            x.reselect.unwrap().to_bits(),
            y.reselect.unwrap().to_bits()
        );
        assert!(x.insertion.is_none() && y.insertion.is_none());
    }
    assert_eq!(ft.reports, mt.reports);
    for (a, b) in ft.best.params.arrays().iter().zip(mt.best.params.arrays()) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    println!(
        "criterion 6 PASS: R_2@1 {best_r1} by epoch {:?} (<= 20); multitask(aux off) trace bitwise equal to finetune",
        best_epoch
    );
}

// --- criterion 7: metric oracles ---

struct Frac {
    num: i64,
    den: i64,
}

impl Frac {
    fn new(num: i64, den: i64) -> Frac {
        assert!(den > 0);
        Frac { num, den }
    }

    fn add(&self, other: &Frac) -> Frac {
        Frac::new(self.num * other.den + other.num * self.den, self.den * other.den).reduce()
    }

    fn div_int(&self, k: i64) -> Frac {
        Frac::new(self.num, self.den * k).reduce()
    }

    fn reduce(self) -> Frac {
        fn gcd(a: i64, b: i64) -> i64 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(self.num, self.den);
        Frac::new(self.num / g, self.den / g)
    }
}

fn brute_force_metrics(groups: &[RankedGroup]) -> (f64, f64, f64, f64, f64, f64) {
    let mut sums = [0.0f64; 6];
    let mut counted = 0usize;
    for group in groups {
        if !group.candidates.iter().any(|c| c.1) {
            continue;
        }
        counted += 1;
        // Scores are distinct by construction, so the ranking is unique.
        let mut order: Vec<usize> = (0..group.candidates.len()).collect();
        order.sort_by(|&i, &j| group.candidates[j].0.total_cmp(&group.candidates[i].0));
        let rel: Vec<bool> = order.iter().map(|&i| group.candidates[i].1).collect();
        let positives = rel.iter().filter(|&&r| r).count();

        for (slot, k) in [1usize, 2, 5].iter().enumerate() {
            let hits = rel.iter().take(*k).filter(|&&r| r).count();
            sums[slot] += hits as f64 / positives as f64;
        }
        let mut seen = 0usize;
        let mut ap = 0.0;
        for (rank0, &r) in rel.iter().enumerate() {
            if r {
                seen += 1;
                ap += seen as f64 / (rank0 + 1) as f64;
            }
        }
        sums[3] += ap / positives as f64;
        let first = rel.iter().position(|&r| r).unwrap();
        sums[4] += 1.0 / (first + 1) as f64;
        sums[5] += f64::from(rel[0]);
    }
    let n = counted as f64;
    (
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n,
        sums[4] / n,
        sums[5] / n,
    )
}

#[test]
fn criterion_07_metric_oracles() {
    let mut rng = scoped_rng(123, "acceptance:metrics");
    let mut groups = Vec::with_capacity(1000);
    for g in 0..1000u32 {
        let n: usize = rng.gen_range(2..=12);
        // Distinct scores: a shuffled ramp with per-group jitter.
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64 + f64::from(g) * 1e-4).collect();
        for i in (1..scores.len()).rev() {
            scores.swap(i, rng.gen_range(0..=i));
        }
        let candidates: Vec<(f64, bool)> = scores
            .into_iter()
            .map(|s| (s, rng.gen_bool(0.4)))
            .collect();
        groups.push(RankedGroup::new(format!("g{g}"), candidates).unwrap());
    }

    let (r1, x1) = recall_n_k(&groups, 1).unwrap();
    let (r2, _) = recall_n_k(&groups, 2).unwrap();
    let (r5, _) = recall_n_k(&groups, 5).unwrap();
    let (map, _) = mean_average_precision(&groups).unwrap();
    let (mrr, _) = mean_reciprocal_rank(&groups).unwrap();
    let (p1, _) = precision_at_1(&groups).unwrap();
    let report = metric_report(&groups).unwrap();
    assert_eq!(report.n_excluded, x1);

    let oracle = brute_force_metrics(&groups);
    for (name, got, want) in [
        ("R_n@1", r1, oracle.0),
        ("R_n@2", r2, oracle.1),
        ("R_n@5", r5, oracle.2),
        ("MAP", map, oracle.3),
        ("MRR", mrr, oracle.4),
        ("P@1", p1, oracle.5),
    ] {
        assert!(
            (got - want).abs() < 1e-9,
            "{name}: {got} vs brute force {want}"
        );
    }

    // Hand case: relevance [1,0,1,0] by rank. Rationally:
    // AP = (1/1 + 2/3) / 2 = 5/6, exactly.
    let hand = RankedGroup::new(
        "hand".into(),
        vec![(4.0, true), (3.0, false), (2.0, true), (1.0, false)],
    )
    .unwrap();
    let (ap, _) = mean_average_precision(&[hand]).unwrap();
    let exact = Frac::new(1, 1).add(&Frac::new(2, 3)).div_int(2);
    assert_eq!((exact.num, exact.den), (5, 6));
    assert!((ap - exact.num as f64 / exact.den as f64).abs() < 1e-12);

    println!(
        "criterion 7 PASS: four metrics match brute force within 1e-9 over 1000 groups ({} excluded); AP([1,0,1,0]) = 5/6 exactly",
        report.n_excluded
    );
}

// --- criterion 8: checkpoint round-trip ---

#[test]
fn criterion_08_checkpoint_round_trip() {
    let vocab = Vocab::build(
        ["alpha beta gamma delta epsilon zeta eta theta"],
        64,
        1,
    )
    .unwrap();
    let enc = EncoderConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        max_positions: 64,
        vocab_size: vocab.size(),
        dropout: 0.1,
        seed: 21,
    };
    let ckpt = Checkpoint::fresh(enc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    assert_eq!(ckpt.config, loaded.config);
    for (a, b) in ckpt.params.arrays().iter().zip(loaded.params.arrays()) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    // Probe batch: forward outputs must be bit-identical.
    let context: Vec<String> = vec![
        "alpha beta gamma".into(),
        "delta epsilon zeta".into(),
        "eta theta alpha".into(),
    ];
    for response in ["beta gamma delta", "zeta eta theta"] {
        let before =
            inspect_example(&ckpt.config, &ckpt.params, &vocab, &context, response, 64).unwrap();
        let after =
            inspect_example(&loaded.config, &loaded.params, &vocab, &context, response, 64)
                .unwrap();
        assert_eq!(before.len(), after.len());
        for (x, y) in before.iter().zip(&after) {
            assert_eq!(x.to_bits(), y.to_bits(), "forward output drifted");
        }
    }

    println!("criterion 8 PASS: save/load reproduces parameters and probe-batch forward bit-identically");
}

// --- criteria 9 and 10: CLI pipeline ---

fn write_pipeline_inputs(dir: &Path) -> PathBuf {
    let articles = synthetic_corpus(30, 6, 6);
    write_articles_jsonl(&articles, &dir.join("corpus.jsonl")).unwrap();
    write_examples(&selection_examples(16, 1, "train"), &dir.join("train.jsonl")).unwrap();
    write_examples(&selection_examples(8, 2, "valid"), &dir.join("valid.jsonl")).unwrap();
    write_examples(&selection_examples(8, 3, "test"), &dir.join("test.jsonl")).unwrap();
    let config = serde_json::json!({
        "schema_version": 1,
        "profile": "desk",
        "seed": 13,
        "out_dir": "out",
        "corpus": {"source": "corpus.jsonl", "format": "jsonl"},
        "dialogues": {"train": "train.jsonl", "valid": "valid.jsonl", "test": "test.jsonl"},
        "encoder": {"layers": 1, "heads": 2, "d_model": 32, "d_ff": 64, "max_positions": 128},
        "pretrain": {"epochs": 1, "eval_every": 5},
        "finetune": {"epochs": 2}
    });
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run_cli(config: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_turnwise"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "turnwise {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn criterion_09_pipeline_determinism() {
    let chain: [&[&str]; 7] = [
        &["ingest"],
        &["partition"],
        &["gen", "--task", "all"],
        &["vocab"],
        &["pretrain"],
        &["finetune"],
        &["eval"],
    ];
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let config = write_pipeline_inputs(dir.path());
        for args in chain {
            run_cli(&config, args);
        }
        dirs.push(dir);
    }
    let (a, b) = (dirs[0].path().join("out"), dirs[1].path().join("out"));

    // Sample files byte-identical.
    for task in TASKS {
        for split in ["train", "valid"] {
            let name = format!("samples/{task}.{split}.jsonl");
            let x = std::fs::read(a.join(&name)).unwrap();
            let y = std::fs::read(b.join(&name)).unwrap();
            assert_eq!(x, y, "{name} differs between runs");
        }
    }
    // Loss traces and learned artifacts byte-identical.
    for name in [
        "vocab.json",
        "pretrain_loss.csv",
        "pretrain.ckpt",
        "finetune_loss.csv",
        "finetune.ckpt",
        "finetune_reports.json",
    ] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    // Metric reports identical (metrics.json also records run-local paths,
    // so compare the report payload).
    let report = |p: &Path| -> serde_json::Value {
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(p.join("metrics.json")).unwrap()).unwrap();
        v["report"].clone()
    };
    assert_eq!(report(&a), report(&b), "metric reports differ");

    println!("criterion 9 PASS: full chain run twice; sample files, loss traces, checkpoints, and metric reports identical");
}

#[test]
fn criterion_10_stats_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_inputs(dir.path());
    for args in [&["ingest"][..], &["partition"], &["gen", "--task", "all"]] {
        run_cli(&config, args);
    }
    let out = run_cli(&config, &["stats"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 5, "table too short:\n{text}");

    let cells = |line: &str| -> Vec<String> {
        line.split('|').map(|c| c.trim().to_string()).collect()
    };
    assert_eq!(cells(lines[0]), ["", "Train", "Valid"], "header row");
    let names: Vec<String> = lines[1..5]
        .iter()
        .map(|l| cells(l)[0].clone())
        .collect();
    assert_eq!(
        names,
        ["#articles / task", "Insertion", "Deletion", "Replacement"],
        "row order"
    );

    // Columns align: the separators sit at the same byte offsets per line.
    let pipes = |l: &str| -> Vec<usize> {
        l.char_indices().filter(|(_, c)| *c == '|').map(|(i, _)| i).collect()
    };
    for line in &lines[1..5] {
        assert_eq!(pipes(line), pipes(lines[0]), "misaligned row: {line}");
    }

    // Counts agree with the emitted files (comma grouping stripped).
    let out_dir = dir.path().join("out");
    for (row, task) in [(2usize, "insertion"), (3, "deletion"), (4, "replacement")] {
        let row_cells = cells(lines[row]);
        for (col, split) in [(1usize, "train"), (2, "valid")] {
            let shown: usize = row_cells[col].replace(',', "").parse().unwrap();
            let actual = read_samples(&out_dir.join(format!("samples/{task}.{split}.jsonl")))
                .unwrap()
                .len();
            assert_eq!(shown, actual, "{task} {split} count");
        }
    }

    println!("criterion 10 PASS: stats emits the per-task train/valid table with aligned Train/Valid columns");
}
