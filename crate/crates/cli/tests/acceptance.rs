//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Replay-based criteria build their fixture files by first running the
//! same experiment through a record-mode gateway backed by a scripted
//! transport, then re-running everything from the fixtures alone.

mod support;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use kaze_core::config::Config;
use kaze_core::evaluation::{run_experiment, PermutationPolicy};
use kaze_core::gateway::{Gateway, ScriptedTransport};
use kaze_core::ingest::{remap_chile_binary, remap_crisislex_theme, remap_trec_is, RemapOutcome};
use kaze_core::metrics::{macro_f1, mean_std};
use kaze_core::templates::ANSWER_TRIGGER;
use kaze_core::types::{Prediction, Role, StrategyKind};

use support::{bin, build_toy_replay_dir, read_reports};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

// --- criterion 1: golden prompts --------------------------------------

#[test]
fn criterion_1_golden_prompts() {
    let start = Instant::now();
    let dir = golden_dir();
    let fixtures = [
        "context_generation.txt",
        "goal_generation.txt",
        "task_zero_cot.txt",
        "task_goal_based.txt",
        "task_context_based.txt",
        "task_self_debias.txt",
        "answer_trigger.txt",
        "self_debias_revision.txt",
    ];
    let mut all = String::new();
    for name in fixtures {
        let text = std::fs::read_to_string(dir.join(name))
            .unwrap_or_else(|e| panic!("missing golden fixture {name}: {e}"));
        all.push_str(&text);
        all.push('\n');
    }

    // Byte-for-byte rendering checks against the committed fixtures.
    use kaze_core::templates as t;
    use kaze_core::types::{Hint, KnowledgeKind, LabelDef, TaskSpec};
    let tweet = "New to #yyc and doing my part to clean up. Amazing support. #abflood #yycflood #calgarystrong <URL>";
    let intent = TaskSpec::new(
        "intent",
        "Classify the given tweet into one of the two given categories.",
        vec![
            LabelDef::new(
                "Help-seeking",
                "Tweets requesting rescue, information, or services.",
            ),
            LabelDef::new(
                "Help-offering",
                "Tweets offering services, shelter, or information to others.",
            ),
        ],
    )
    .unwrap();
    let theme = TaskSpec::new(
        "theme",
        "Classify the given tweet into one of the given categories.",
        vec![
            LabelDef::new(
                "Donations and volunteering",
                "Tweets requesting or offering donations, supplies, or volunteer work.",
            ),
            LabelDef::new(
                "Infrastructure and utilities",
                "Tweets reporting damage or restoration of roads, power, or services.",
            ),
            LabelDef::new(
                "Affected individuals",
                "Tweets reporting injuries, deaths, missing people, or displaced residents.",
            ),
        ],
    )
    .unwrap();
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();

    assert_eq!(
        t::render_knowledge_prompt(KnowledgeKind::Context, tweet)
            .unwrap()
            .messages[0]
            .content,
        read("context_generation.txt")
    );
    assert_eq!(
        t::render_knowledge_prompt(KnowledgeKind::Goal, tweet)
            .unwrap()
            .messages[0]
            .content,
        read("goal_generation.txt")
    );
    assert_eq!(
        t::render_task_prompt(&intent, &[0, 1], tweet, Some(&Hint::zero_cot()))
            .unwrap()
            .messages[0]
            .content,
        read("task_zero_cot.txt")
    );
    let goal_hint = Hint::for_strategy(
        StrategyKind::GoalBased,
        Some("The user wants to help others by sharing information.".into()),
    )
    .unwrap();
    assert_eq!(
        t::render_task_prompt(&intent, &[0, 1], tweet, Some(&goal_hint))
            .unwrap()
            .messages[0]
            .content,
        read("task_goal_based.txt")
    );
    let context_hint = Hint::for_strategy(
        StrategyKind::ContextBased,
        Some("A newcomer to Calgary is helping with the flood cleanup efforts and is impressed with the community's support.".into()),
    )
    .unwrap();
    assert_eq!(
        t::render_task_prompt(&theme, &[0, 1, 2], tweet, Some(&context_hint))
            .unwrap()
            .messages[0]
            .content,
        read("task_context_based.txt")
    );
    assert_eq!(
        t::render_task_prompt(&theme, &[0, 1, 2], tweet, None)
            .unwrap()
            .messages[0]
            .content,
        read("task_self_debias.txt")
    );
    assert_eq!(
        t::render_answer_trigger("The tweet mentions the individual is doing their part to clean up, which indicates they are volunteering their time.").unwrap(),
        read("answer_trigger.txt")
    );
    assert_eq!(
        t::render_self_debias_revision(),
        read("self_debias_revision.txt")
    );

    // The canonical hint and instruction strings must all appear verbatim.
    for needle in [
        "Let's think step by step",
        "Let's think step by step about the user's goal",
        "Let's think step by step about the summary of the tweet",
        "What is the summary of the following tweet in a disaster situation?",
        "What is the goal of the user in the following tweet?",
        "Remove bias from your answer by answering the question again with the category only",
    ] {
        assert!(all.contains(needle), "fixtures are missing: {needle}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!("PASS: golden prompts match fixtures byte-for-byte ({elapsed:?})");
}

// --- criterion 2: metric oracle ----------------------------------------

/// Independent confusion-matrix oracle, written from the metric's
/// definition; shares no code with the implementation.
fn oracle_macro_f1(preds: &[(Prediction, String)], labels: &[String]) -> f64 {
    let mut sum = 0.0;
    for label in labels {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (pred, gold) in preds {
            let hit = matches!(pred, Prediction::Label(l) if l == label);
            if hit && gold == label {
                tp += 1.0;
            } else if hit {
                fp += 1.0;
            } else if gold == label {
                fn_ += 1.0;
            }
        }
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fn_ == 0.0 {
            0.0
        } else {
            tp / (tp + fn_)
        };
        sum += if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
    }
    sum / labels.len() as f64
}

#[test]
fn criterion_2_metric_oracle() {
    use rand::{Rng, SeedableRng};
    let start = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20260810);
    for case in 0..1000 {
        let n_labels = rng.gen_range(2..=4);
        let labels: Vec<String> = (0..n_labels).map(|i| format!("L{i}")).collect();
        let n = rng.gen_range(1..=50);
        let preds: Vec<(Prediction, String)> = (0..n)
            .map(|_| {
                let gold = labels[rng.gen_range(0..n_labels)].clone();
                let pred = if rng.gen_bool(0.15) {
                    Prediction::Unparsed
                } else {
                    Prediction::Label(labels[rng.gen_range(0..n_labels)].clone())
                };
                (pred, gold)
            })
            .collect();
        let got = macro_f1(&preds, &labels).unwrap();
        let expected = oracle_macro_f1(&preds, &labels);
        assert!(
            (got - expected).abs() < 1e-12,
            "case {case}: {got} vs oracle {expected}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("PASS: macro-F1 matches brute-force oracle on 1000 instances ({elapsed:?})");
}

// --- criterion 3: permutation protocol ---------------------------------

#[test]
fn criterion_3_permutation_protocol() {
    use kaze_core::evaluation::{ExperimentPlan, GenDefaults};
    use kaze_core::ingest::{DatasetManifest, FileFormat, RemapRule};
    use kaze_core::types::{LabelDef, TaskSpec};

    let dir = tempfile::tempdir().unwrap();
    let mut data = String::new();
    let themes = [
        "Donations and volunteering",
        "Infrastructure and utilities",
        "Affected individuals",
    ];
    // Imbalanced 3/2/1 split: predicting the first-listed label then
    // scores differently under different orders.
    for (i, &theme_idx) in [0usize, 0, 0, 1, 1, 2].iter().enumerate() {
        data.push_str(&format!(
            "{{\"id\":\"t{i}\",\"text\":\"tweet number {i} about the flood\",\"label\":\"{}\"}}\n",
            themes[theme_idx]
        ));
    }
    std::fs::write(dir.path().join("theme.jsonl"), data).unwrap();

    let task = TaskSpec::new(
        "theme",
        "Classify the given tweet into one of the given categories.",
        themes
            .iter()
            .map(|t| LabelDef::new(*t, "definition"))
            .collect(),
    )
    .unwrap();
    let plan = ExperimentPlan {
        models: vec!["model-a".into()],
        tasks: vec![task],
        datasets: vec![DatasetManifest {
            dataset_id: "theme-toy".into(),
            task_id: "theme".into(),
            path: dir.path().join("theme.jsonl"),
            format: FileFormat::Jsonl,
            text_field: "text".into(),
            label_field: "label".into(),
            id_field: "id".into(),
            remap: RemapRule::None,
            language: "en".into(),
            event: "flood".into(),
        }],
        strategies: vec![StrategyKind::ZeroCot],
        permutations: PermutationPolicy::All,
        repetitions: 1,
        temperatures: vec![0.0],
        cross_model: None,
        base_seed: 1,
        max_concurrency: 4,
        gen: GenDefaults::default(),
    };
    // Order-sensitive script: the answer is whichever label is listed
    // first, so per-permutation scores genuinely differ.
    let gateway = Gateway::live(ScriptedTransport::new(move |req| {
        let last = req.messages.last().unwrap();
        if last.role == Role::Assistant && last.content.ends_with(ANSWER_TRIGGER) {
            let content = &req.messages[0].content;
            let first = [
                "Donations and volunteering",
                "Infrastructure and utilities",
                "Affected individuals",
            ]
            .iter()
            .min_by_key(|l| content.find(*l).unwrap())
            .unwrap();
            Ok(first.to_string())
        } else {
            Ok("reasoning".to_string())
        }
    }));
    let out = dir.path().join("out");
    let reports = run_experiment(&plan, &gateway, &out).unwrap();
    let report = &reports[0];
    assert_eq!(report.run_scores.len(), 6, "3 labels under all = 3! runs");

    // Persist, re-read, and recompute: mean/std must match exactly.
    kaze_cli::write_reports(&out, &reports).unwrap();
    let reread = read_reports(&out);
    let values: Vec<f64> = reread[0].run_scores.iter().map(|r| r.macro_f1).collect();
    assert_eq!(values.len(), 6);
    let (mean, std) = mean_std(&values).unwrap();
    assert_eq!(reread[0].macro_f1_mean, mean, "mean must match exactly");
    assert_eq!(reread[0].macro_f1_std, std, "std must match exactly");
    assert!(std > 0.0, "the scripted order sensitivity must show up");

    // 2-label task executes exactly 2 permutation runs.
    let toy = build_toy_replay_dir();
    let reports = read_reports(&toy.path().join("record_out"));
    assert!(reports.iter().all(|r| r.run_scores.len() == 2));
    println!("PASS: permutation protocol (6 runs for 3 labels, 2 for 2; exact mean/std)");
}

// --- criteria 4-6: replay runs through the binary ----------------------

#[test]
fn criterion_4_call_accounting_on_replay() {
    let dir = build_toy_replay_dir();
    let config = Config::load(&dir.path().join("config.toml")).unwrap();
    let plan = config.to_plan().unwrap();
    let gateway = config.build_gateway().unwrap(); // replay
    let reports = run_experiment(&plan, &gateway, &dir.path().join("replay_out")).unwrap();

    let perms = 2;
    let by_strategy = |s: StrategyKind| {
        reports
            .iter()
            .find(|r| r.strategy == s)
            .unwrap_or_else(|| panic!("missing report for {s}"))
    };
    assert_eq!(
        by_strategy(StrategyKind::ZeroCot).calls.completions_served,
        2 * perms * 10,
        "zero-cot issues 2 completions per (example, permutation)"
    );
    assert_eq!(
        by_strategy(StrategyKind::SelfDebias)
            .calls
            .completions_served,
        2 * perms * 10,
        "self-debias issues 2 completions per (example, permutation)"
    );
    let goal = by_strategy(StrategyKind::GoalBased);
    assert_eq!(
        goal.calls.completions_served,
        10 + 2 * perms * 10,
        "goal-based issues 10 knowledge calls total plus 2 per (example, permutation)"
    );
    // Replay never touches a transport.
    assert!(reports.iter().all(|r| r.calls.transport_calls == 0));
    println!("PASS: call accounting on replay (40 / 40 / 50 completions)");
}

#[test]
fn criterion_5_end_to_end_determinism() {
    let dir = build_toy_replay_dir();
    let config_path = dir.path().join("config.toml");

    let run = |out: &str| {
        let status = bin()
            .args(["--config", config_path.to_str().unwrap()])
            .args(["--output-dir", dir.path().join(out).to_str().unwrap()])
            .arg("run")
            .status()
            .expect("binary runs");
        assert!(status.success(), "kaze run failed");
        std::fs::read(dir.path().join(out).join("reports.json")).unwrap()
    };

    let first = run("out1");
    let second = run("out2");
    assert_eq!(
        first, second,
        "reports.json must be byte-identical across reruns"
    );

    for file in ["per_run_scores.csv", "main_table.csv", "order_bias.csv"] {
        let a = std::fs::read(dir.path().join("out1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("out2").join(file)).unwrap();
        assert_eq!(a, b, "{file} must be byte-identical across reruns");
    }
    println!("PASS: end-to-end determinism (byte-identical reports across reruns)");
}

#[test]
fn criterion_6_scripted_bias_fixture() {
    let dir = build_toy_replay_dir();
    let out = dir.path().join("bias_out");
    let status = bin()
        .args(["--config", dir.path().join("config.toml").to_str().unwrap()])
        .args(["--output-dir", out.to_str().unwrap()])
        .arg("run")
        .status()
        .unwrap();
    assert!(status.success());

    let csv = std::fs::read_to_string(out.join("order_bias.csv")).unwrap();
    let std_of = |method: &str| -> f64 {
        csv.lines()
            .find(|l| l.contains(&format!(",{method},")))
            .unwrap_or_else(|| panic!("no {method} row in order_bias.csv"))
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    let zero_cot = std_of("zero-cot");
    let ours = std_of("goal-based");
    assert!(
        ours < zero_cot,
        "expected std(ours)={ours} < std(zero-cot)={zero_cot}"
    );

    // The knowledge strategy also fixes the 2 flipped baseline answers,
    // so its mean macro-F1 beats the baseline's in the report.
    let reports = read_reports(&out);
    let mean_of = |s: StrategyKind| {
        reports
            .iter()
            .find(|r| r.strategy == s)
            .unwrap()
            .macro_f1_mean
    };
    assert!(mean_of(StrategyKind::GoalBased) > mean_of(StrategyKind::ZeroCot));
    println!("PASS: order-bias report shows std(Ours) = {ours} < std(Zero-CoT) = {zero_cot}");
}

// --- criterion 7: remap correctness ------------------------------------

#[test]
fn criterion_7_remap_correctness() {
    // Exhaustive rule tables.
    let trec_cases = [
        ("GoodServices", RemapOutcome::Keep("Help-seeking".into())),
        ("SearchAndRescue", RemapOutcome::Keep("Help-seeking".into())),
        (
            "InformationWanted",
            RemapOutcome::Keep("Help-seeking".into()),
        ),
        (
            "ServiceAvailable",
            RemapOutcome::Keep("Help-offering".into()),
        ),
        ("Irrelevant", RemapOutcome::Drop),
        ("ContextualInformation", RemapOutcome::Drop),
        ("", RemapOutcome::Drop),
    ];
    for (raw, expected) in trec_cases {
        assert_eq!(remap_trec_is(raw), expected, "trec_is({raw})");
    }
    let crisislex_keep = [
        "Donations and volunteering",
        "Infrastructure and utilities",
        "Affected individuals",
    ];
    for raw in crisislex_keep {
        assert_eq!(remap_crisislex_theme(raw), RemapOutcome::Keep(raw.into()));
    }
    for raw in [
        "Sympathy and support",
        "Caution and advice",
        "Other useful information",
        "",
    ] {
        assert_eq!(remap_crisislex_theme(raw), RemapOutcome::Drop);
    }
    assert_eq!(
        remap_chile_binary("Requests or Needs"),
        RemapOutcome::Keep("Yes".into())
    );
    assert_eq!(
        remap_chile_binary("Not Humanitarian"),
        RemapOutcome::Keep("No".into())
    );
    for raw in ["Other", "Sympathy", ""] {
        assert_eq!(remap_chile_binary(raw), RemapOutcome::Drop);
    }

    // Lilac-shaped fixture: 128 help-seeking raw labels, 263 ServiceAvailable,
    // plus rows the remap must drop.
    let dir = tempfile::tempdir().unwrap();
    let mut data = String::new();
    let mut row = 0usize;
    let seeking = ["GoodServices", "SearchAndRescue", "InformationWanted"];
    for i in 0..128 {
        data.push_str(&format!(
            "{{\"id\":\"s{row}\",\"text\":\"tweet {row}\",\"label\":\"{}\"}}\n",
            seeking[i % 3]
        ));
        row += 1;
    }
    for _ in 0..263 {
        data.push_str(&format!(
            "{{\"id\":\"o{row}\",\"text\":\"tweet {row}\",\"label\":\"ServiceAvailable\"}}\n"
        ));
        row += 1;
    }
    for _ in 0..17 {
        data.push_str(&format!(
            "{{\"id\":\"d{row}\",\"text\":\"tweet {row}\",\"label\":\"Irrelevant\"}}\n"
        ));
        row += 1;
    }
    std::fs::write(dir.path().join("lilac.jsonl"), data).unwrap();
    std::fs::write(
        dir.path().join("lilac_manifest.toml"),
        r#"
id = "lilac"
task = "intent"
path = "lilac.jsonl"
format = "jsonl"
remap = "trec_is"
language = "en"
event = "Lilac wildfire"
"#,
    )
    .unwrap();

    let output = bin()
        .arg("validate-data")
        .arg(dir.path().join("lilac_manifest.toml"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        stdout.contains("Help-seeking (128), Help-offering (263)"),
        "got: {stdout}"
    );
    assert!(stdout.contains("17 dropped"), "got: {stdout}");
    println!("PASS: remap tables exhaustive; Lilac fixture prints Help-seeking (128), Help-offering (263)");
}

// --- criterion 8: salience probe arithmetic -----------------------------

#[test]
fn criterion_8_salience_probe_arithmetic() {
    use kaze_core::evaluation::{run_salience_probe, SalienceProbeConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};

    // 10 paraphrases x 20 samples = 200 scripted responses with a
    // 40/150/10/0 split over (dispositional, situational, both, neither).
    let counter = AtomicUsize::new(0);
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("probe_fixtures.jsonl");
    let recorder = Gateway::record(
        ScriptedTransport::new(move |_| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            Ok(match i {
                0..=39 => "Dispositional causality is more salient here.".to_string(),
                40..=189 => "Situational causality dominates this task.".to_string(),
                _ => "Both dispositional and situational factors matter.".to_string(),
            })
        }),
        &fixture,
    )
    .unwrap();
    let config = SalienceProbeConfig::new(
        "Detect the intent of a social media message during a disaster.",
        (0..10)
            .map(|i| format!("Paraphrase {i}: which causality matters for: {{task}}"))
            .collect(),
    );
    let recorded = run_salience_probe(&config, "model-a", &recorder).unwrap();
    assert_eq!(recorded.total, 200);

    // Replay the probe from fixtures alone; arithmetic must match.
    let replay = Gateway::replay(&fixture).unwrap();
    let dist = run_salience_probe(&config, "model-a", &replay).unwrap();
    assert_eq!(dist.total, 200);
    assert_eq!(dist.counts, [40, 150, 10, 0]);
    assert_eq!(dist.proportions, [0.20, 0.75, 0.05, 0.00]);
    let sum: f64 = dist.proportions.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
    println!("PASS: salience probe proportions (0.20, 0.75, 0.05, 0.00) over 200 responses");
}

// --- criterion 9: human-eval round trip ---------------------------------

#[test]
fn criterion_9_human_eval_round_trip() {
    use kaze_core::evaluation::{ExperimentPlan, GenDefaults};
    use kaze_core::ingest::{DatasetManifest, FileFormat, RemapRule};
    use kaze_core::types::{LabelDef, TaskSpec};

    let dir = tempfile::tempdir().unwrap();
    // Two datasets with different sizes and label mixes: d1 has 20
    // seeking / 40 offering, d2 has 20 / 20.
    let write = |name: &str, seeking: usize, offering: usize| {
        let mut data = String::new();
        for i in 0..seeking {
            data.push_str(&format!(
                "{{\"id\":\"{name}-s{i}\",\"text\":\"tweet number {i} in {name} seeking\",\"label\":\"Help-seeking\"}}\n"
            ));
        }
        for i in 0..offering {
            data.push_str(&format!(
                "{{\"id\":\"{name}-o{i}\",\"text\":\"tweet number {i} in {name} offering\",\"label\":\"Help-offering\"}}\n"
            ));
        }
        std::fs::write(dir.path().join(format!("{name}.jsonl")), data).unwrap();
    };
    write("d1", 20, 40);
    write("d2", 20, 20);

    let manifest = |id: &str| DatasetManifest {
        dataset_id: id.into(),
        task_id: "intent".into(),
        path: dir.path().join(format!("{id}.jsonl")),
        format: FileFormat::Jsonl,
        text_field: "text".into(),
        label_field: "label".into(),
        id_field: "id".into(),
        remap: RemapRule::None,
        language: "en".into(),
        event: "flood".into(),
    };
    let plan = ExperimentPlan {
        models: vec!["model-a".into()],
        tasks: vec![TaskSpec::new(
            "intent",
            "Classify the given tweet into one of the two given categories.",
            vec![
                LabelDef::new("Help-seeking", "Seeking."),
                LabelDef::new("Help-offering", "Offering."),
            ],
        )
        .unwrap()],
        datasets: vec![manifest("d1"), manifest("d2")],
        strategies: vec![StrategyKind::GoalBased],
        permutations: PermutationPolicy::All,
        repetitions: 1,
        temperatures: vec![0.0],
        cross_model: None,
        base_seed: 7,
        max_concurrency: 4,
        gen: GenDefaults::default(),
    };
    let gateway = Gateway::live(ScriptedTransport::new(|req| {
        let last = req.messages.last().unwrap();
        if last.content.starts_with("Question: What is the goal") {
            Ok(format!(
                "Goal knowledge for: {}",
                &last.content[..60.min(last.content.len())]
            ))
        } else if last.role == Role::Assistant {
            Ok("Help-seeking".to_string())
        } else {
            Ok("reasoning".to_string())
        }
    }));
    let out = dir.path().join("out");
    run_experiment(&plan, &gateway, &out).unwrap();

    // Export through the binary.
    let annotations = dir.path().join("annotations.csv");
    let status = bin()
        .args(["--seed", "7"])
        .arg("human-eval")
        .arg("export")
        .args(["--transcripts", out.join("transcripts").to_str().unwrap()])
        .args(["--per-model", "60"])
        .args(["--out", annotations.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());

    let rows = kaze_core::evaluation::human_eval::read_annotation_csv(
        std::fs::File::open(&annotations).unwrap(),
    )
    .unwrap();
    assert_eq!(rows.len(), 60, "60 rows per model per task");

    // Cell deviation from exact proportionality is at most 1.
    let populations: BTreeMap<(&str, &str), usize> = [
        (("Help-seeking", "d1"), 20),
        (("Help-offering", "d1"), 40),
        (("Help-seeking", "d2"), 20),
        (("Help-offering", "d2"), 20),
    ]
    .into_iter()
    .collect();
    let total: usize = populations.values().sum();
    for ((label, dataset), population) in &populations {
        let got = rows
            .iter()
            .filter(|r| r.gold_label == *label && r.dataset_id == *dataset)
            .count();
        let quota = 60.0 * *population as f64 / total as f64;
        assert!(
            (got as f64 - quota).abs() <= 1.0,
            "cell ({label}, {dataset}): {got} vs quota {quota}"
        );
    }

    // Annotate 59/60 faithful, all helpful; import through the binary.
    let mut annotated = rows.clone();
    for (i, row) in annotated.iter_mut().enumerate() {
        row.faithfulness = if i == 0 { "0".into() } else { "1".into() };
        row.helpfulness = "1".into();
    }
    let annotated_path = dir.path().join("annotated.csv");
    let file = std::fs::File::create(&annotated_path).unwrap();
    kaze_core::evaluation::human_eval::write_annotation_csv(&annotated, file).unwrap();

    let output = bin()
        .arg("human-eval")
        .arg("import")
        .arg(annotated_path.to_str().unwrap())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("0.98"), "got: {stdout}");
    assert!(stdout.contains("1.00"), "got: {stdout}");
    println!("PASS: human-eval round trip (60 stratified rows; 59/60 imports as 0.98)");
}

// --- optional, non-CI: live directional check ---------------------------

/// Directional reproduction against a live endpoint. Needs a served
/// open-weight instruction model and a user-obtained dataset; see the
/// README. Run with: KAZE_LIVE_CONFIG=path/to/config.toml cargo test
/// -p kaze-cli --test acceptance -- --ignored live_directional
#[test]
#[ignore = "requires a live endpoint and user-obtained data"]
fn live_directional_goal_based_beats_zero_cot() {
    let config_path = match std::env::var("KAZE_LIVE_CONFIG") {
        Ok(p) => PathBuf::from(p),
        Err(_) => {
            eprintln!("set KAZE_LIVE_CONFIG to run the live check");
            return;
        }
    };
    let config = Config::load(&config_path).unwrap();
    let plan = config.to_plan().unwrap();
    let gateway = config.build_gateway().unwrap();
    let out = tempfile::tempdir().unwrap();
    let reports = run_experiment(&plan, &gateway, out.path()).unwrap();
    let mean = |s: StrategyKind| {
        reports
            .iter()
            .find(|r| r.strategy == s)
            .map(|r| r.macro_f1_mean)
            .expect("strategy must be configured")
    };
    let goal = mean(StrategyKind::GoalBased);
    let zero = mean(StrategyKind::ZeroCot);
    assert!(
        goal > zero,
        "expected goal-based ({goal}) > zero-cot ({zero}); environment-dependent"
    );
    println!("PASS: live directional check (goal-based {goal} > zero-cot {zero})");
}
