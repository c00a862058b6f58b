//! Claim-based evaluation: staged question generation, claim extraction,
//! ROUGE-L-distance agglomerative clustering, pairwise judging with
//! replicates, and win-rate aggregation.

use std::collections::BTreeMap;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::derive_seed;
use crate::provider::template::TemplateStore;
use crate::provider::{complete_json, CompletionRequest, Provider};
use crate::tokenize::tokens;

/// One generated sensemaking question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub persona: String,
    pub task: String,
    pub text: String,
}

/// Deduplicated atomic claims extracted from one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSet {
    pub answer_id: String,
    pub claims: Vec<String>,
}

/// A partition of claim indices into near-duplicate clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<usize>>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Comprehensiveness,
    Diversity,
    Empowerment,
    Directness,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Comprehensiveness,
        Metric::Diversity,
        Metric::Empowerment,
        Metric::Directness,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Comprehensiveness => "comprehensiveness",
            Metric::Diversity => "diversity",
            Metric::Empowerment => "empowerment",
            Metric::Directness => "directness",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "comprehensiveness" => Ok(Metric::Comprehensiveness),
            "diversity" => Ok(Metric::Diversity),
            "empowerment" => Ok(Metric::Empowerment),
            "directness" => Ok(Metric::Directness),
            other => Err(Error::Config(format!("unknown metric: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

/// One judged replicate of an answer pair on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub question_id: String,
    pub condition_a: String,
    pub condition_b: String,
    pub metric: Metric,
    pub replicate: usize,
    pub winner: Winner,
    /// Set when an unparseable verdict was recorded as a tie.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Generates personas, tasks per persona, and questions per persona-task
/// pair through staged prompts. Counts are enforced exactly.
pub fn generate_questions(
    provider: &dyn Provider,
    templates: &TemplateStore,
    description: &str,
    n_personas: usize,
    n_tasks: usize,
    n_questions: usize,
) -> Result<Vec<Question>> {
    if description.trim().is_empty() {
        return Err(Error::InvalidArgument("dataset description is empty".into()));
    }
    let expect = |stage: &str, want: usize, got: usize| -> Result<()> {
        if want != got {
            return Err(Error::Format(format!(
                "{stage}: requested {want} items but the provider returned {got}"
            )));
        }
        Ok(())
    };
    let personas: Vec<String> = complete_json(
        provider,
        &CompletionRequest::new(
            "personas",
            templates.render(
                "personas",
                &[("count", n_personas.to_string().as_str()), ("description", description)],
            )?,
        ),
    )?;
    expect("personas", n_personas, personas.len())?;
    let mut questions = Vec::new();
    for (pi, persona) in personas.iter().enumerate() {
        let tasks: Vec<String> = complete_json(
            provider,
            &CompletionRequest::new(
                "tasks",
                templates.render(
                    "tasks",
                    &[
                        ("count", n_tasks.to_string().as_str()),
                        ("persona", persona),
                        ("description", description),
                    ],
                )?,
            ),
        )?;
        expect("tasks", n_tasks, tasks.len())?;
        for (ti, task) in tasks.iter().enumerate() {
            let texts: Vec<String> = complete_json(
                provider,
                &CompletionRequest::new(
                    "questions",
                    templates.render(
                        "questions",
                        &[
                            ("count", n_questions.to_string().as_str()),
                            ("persona", persona),
                            ("task", task),
                            ("description", description),
                        ],
                    )?,
                ),
            )?;
            expect("questions", n_questions, texts.len())?;
            for (qi, text) in texts.into_iter().enumerate() {
                if text.trim().is_empty() {
                    return Err(Error::Format("provider returned an empty question".into()));
                }
                questions.push(Question {
                    id: format!("q-{:02}-{:02}-{:02}", pi + 1, ti + 1, qi + 1),
                    persona: persona.clone(),
                    task: task.clone(),
                    text,
                });
            }
        }
    }
    Ok(questions)
}

/// Extracts atomic claims from an answer, exactly deduplicated.
pub fn extract_claims(
    provider: &dyn Provider,
    templates: &TemplateStore,
    answer_id: &str,
    answer_text: &str,
) -> Result<ClaimSet> {
    if answer_text.trim().is_empty() {
        return Ok(ClaimSet {
            answer_id: answer_id.to_string(),
            claims: Vec::new(),
        });
    }
    let prompt = templates.render("extract_claims", &[("answer", answer_text)])?;
    let raw: Vec<String> =
        complete_json(provider, &CompletionRequest::new("extract_claims", prompt))?;
    let mut claims = Vec::new();
    for claim in raw {
        let claim = claim.trim().to_string();
        if !claim.is_empty() && !claims.contains(&claim) {
            claims.push(claim);
        }
    }
    Ok(ClaimSet {
        answer_id: answer_id.to_string(),
        claims,
    })
}

/// ROUGE-L distance: 1 minus the F-measure of LCS precision and recall
/// over pipeline tokens. 0 when both strings are empty, 1 when exactly one
/// is.
pub fn rouge_l_distance<T: Float>(a: &str, b: &str) -> T {
    let ta = tokens(a);
    let tb = tokens(b);
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return T::zero(),
        (true, false) | (false, true) => return T::one(),
        _ => {}
    }
    let lcs = lcs_len(&ta, &tb);
    if lcs == 0 {
        return T::one();
    }
    let lcs = T::from(lcs).unwrap();
    let p = lcs / T::from(tb.len()).unwrap();
    let r = lcs / T::from(ta.len()).unwrap();
    let f = (T::one() + T::one()) * p * r / (p + r);
    T::one() - f
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ai in a {
        for (j, &bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Average-linkage agglomerative clustering under ROUGE-L distance.
///
/// Inter-cluster distance is the plain mean over cross pairs, recomputed
/// from the distance matrix at every step; merging stops when the minimum
/// exceeds `threshold`. Ties break on the lexicographically smallest
/// member claim of the candidate pair.
pub fn cluster_claims(claims: &[String], threshold: f64) -> ClusterSet {
    let n = claims.len();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = rouge_l_distance(&claims[i], &claims[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        if clusters.len() < 2 {
            break;
        }
        let key = |c: &[usize]| -> &str {
            c.iter()
                .map(|&i| claims[i].as_str())
                .min()
                .expect("cluster non-empty")
        };
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += dist[i][j];
                    }
                }
                let avg = sum / (clusters[a].len() * clusters[b].len()) as f64;
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => {
                        if avg < bd {
                            true
                        } else if avg > bd {
                            false
                        } else {
                            let cand = order_keys(key(&clusters[a]), key(&clusters[b]));
                            let incumbent = order_keys(key(&clusters[ba]), key(&clusters[bb]));
                            cand < incumbent
                        }
                    }
                };
                if better {
                    best = Some((avg, a, b));
                }
            }
        }
        let Some((d, a, b)) = best else { break };
        if d > threshold {
            break;
        }
        let merged_b = clusters.remove(b);
        clusters[a].extend(merged_b);
        clusters[a].sort_unstable();
    }
    clusters.sort_by(|x, y| {
        let kx = x.iter().map(|&i| claims[i].as_str()).min().unwrap_or("");
        let ky = y.iter().map(|&i| claims[i].as_str()).min().unwrap_or("");
        kx.cmp(ky).then_with(|| x.cmp(y))
    });
    ClusterSet {
        clusters,
        threshold,
    }
}

fn order_keys<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Judges a pair of answers on one metric over several replicates.
///
/// Presentation order is randomized per replicate from the seed to cancel
/// position bias; an unparseable verdict (after the automatic reprompt)
/// is recorded as a tie with a note.
#[allow(clippy::too_many_arguments)]
pub fn judge_pairwise(
    provider: &dyn Provider,
    templates: &TemplateStore,
    question: &Question,
    condition_a: &str,
    answer_a: &str,
    condition_b: &str,
    answer_b: &str,
    metric: Metric,
    replicates: usize,
    seed: u64,
) -> Result<Vec<JudgeVerdict>> {
    if answer_a.trim().is_empty() || answer_b.trim().is_empty() {
        return Err(Error::InvalidArgument(
            "judge_pairwise: both answers must be non-empty".into(),
        ));
    }
    #[derive(Deserialize)]
    struct JudgeReply {
        winner: String,
    }
    let template_id = format!("judge_{}", metric.as_str());
    let mut verdicts = Vec::with_capacity(replicates);
    for replicate in 0..replicates {
        let tag = format!("{}:{}:{}:{replicate}", question.id, condition_a, metric.as_str());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag));
        let swapped: bool = rng.gen();
        let (first, second) = if swapped {
            (answer_b, answer_a)
        } else {
            (answer_a, answer_b)
        };
        let prompt = templates.render(
            &template_id,
            &[
                ("question", question.text.as_str()),
                ("first", first),
                ("second", second),
            ],
        )?;
        let request = CompletionRequest::new(template_id.clone(), prompt);
        let (winner, note) = match complete_json::<JudgeReply>(provider, &request) {
            Ok(reply) => match reply.winner.as_str() {
                "first" => (if swapped { Winner::B } else { Winner::A }, None),
                "second" => (if swapped { Winner::A } else { Winner::B }, None),
                "tie" => (Winner::Tie, None),
                other => (
                    Winner::Tie,
                    Some(format!("unrecognized verdict `{other}`; recorded as tie")),
                ),
            },
            Err(Error::Format(msg)) => (
                Winner::Tie,
                Some(format!("unparseable verdict; recorded as tie ({msg})")),
            ),
            Err(e) => return Err(e),
        };
        if let Some(note) = &note {
            tracing::warn!(question = %question.id, metric = metric.as_str(), replicate, "{note}");
        }
        verdicts.push(JudgeVerdict {
            question_id: question.id.clone(),
            condition_a: condition_a.to_string(),
            condition_b: condition_b.to_string(),
            metric,
            replicate,
            winner,
            note,
        });
    }
    Ok(verdicts)
}

/// One row of the win-rate matrix: condition `a` against condition `b` on
/// one metric, ties counted half to each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateEntry {
    pub condition_a: String,
    pub condition_b: String,
    pub metric: Metric,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub win_rate_a_pct: f64,
}

/// Aggregates verdicts into per-pair per-metric win percentages; both
/// directions are emitted and sum to 100%.
pub fn win_rates(verdicts: &[JudgeVerdict]) -> Vec<WinRateEntry> {
    // tally under a normalized pair orientation
    let mut tally: BTreeMap<(String, String, Metric), (usize, usize, usize)> = BTreeMap::new();
    for v in verdicts {
        let (key, flip) = if v.condition_a <= v.condition_b {
            ((v.condition_a.clone(), v.condition_b.clone(), v.metric), false)
        } else {
            ((v.condition_b.clone(), v.condition_a.clone(), v.metric), true)
        };
        let entry = tally.entry(key).or_insert((0, 0, 0));
        match (v.winner, flip) {
            (Winner::A, false) | (Winner::B, true) => entry.0 += 1,
            (Winner::B, false) | (Winner::A, true) => entry.1 += 1,
            (Winner::Tie, _) => entry.2 += 1,
        }
    }
    let mut out = Vec::new();
    for ((a, b, metric), (wins_a, wins_b, ties)) in tally {
        let total = (wins_a + wins_b + ties) as f64;
        let rate_a = 100.0 * (wins_a as f64 + 0.5 * ties as f64) / total;
        let rate_b = 100.0 * (wins_b as f64 + 0.5 * ties as f64) / total;
        out.push(WinRateEntry {
            condition_a: a.clone(),
            condition_b: b.clone(),
            metric,
            wins_a,
            wins_b,
            ties,
            win_rate_a_pct: rate_a,
        });
        out.push(WinRateEntry {
            condition_a: b,
            condition_b: a,
            metric,
            wins_a: wins_b,
            wins_b: wins_a,
            ties,
            win_rate_a_pct: rate_b,
        });
    }
    out.sort_by(|x, y| {
        (&x.condition_a, &x.condition_b, x.metric).cmp(&(&y.condition_a, &y.condition_b, y.metric))
    });
    out
}

/// Per-condition claim statistics for the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub answers: usize,
    pub mean_claims: f64,
    pub mean_clusters: f64,
}

/// The evaluation report: claim counts and clusters per condition plus
/// the win-rate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub claim_threshold: f64,
    pub conditions: BTreeMap<String, ConditionStats>,
    pub win_rates: Vec<WinRateEntry>,
}

/// Assembles the report from per-condition claim sets and the verdict log.
pub fn build_report(
    claims_by_condition: &BTreeMap<String, Vec<ClaimSet>>,
    verdicts: &[JudgeVerdict],
    claim_threshold: f64,
) -> EvalReport {
    let mut conditions = BTreeMap::new();
    for (condition, claim_sets) in claims_by_condition {
        let n = claim_sets.len();
        let (mut total_claims, mut total_clusters) = (0usize, 0usize);
        for set in claim_sets {
            total_claims += set.claims.len();
            total_clusters += cluster_claims(&set.claims, claim_threshold).clusters.len();
        }
        conditions.insert(
            condition.clone(),
            ConditionStats {
                answers: n,
                mean_claims: if n == 0 { 0.0 } else { total_claims as f64 / n as f64 },
                mean_clusters: if n == 0 { 0.0 } else { total_clusters as f64 / n as f64 },
            },
        );
    }
    EvalReport {
        claim_threshold,
        conditions,
        win_rates: win_rates(verdicts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::MockProvider;

    fn setup() -> (MockProvider, TemplateStore) {
        (MockProvider::new(11, 32), TemplateStore::builtin())
    }

    #[test]
    fn staged_generation_yields_the_full_product() {
        let (provider, templates) = setup();
        let description = "Technical notes describing protective relays and monitoring sensors.";
        let questions =
            generate_questions(&provider, &templates, description, 5, 5, 5).unwrap();
        assert_eq!(questions.len(), 125);
        let single = generate_questions(&provider, &templates, description, 1, 1, 1).unwrap();
        assert_eq!(single.len(), 1);
        // determinism
        let again = generate_questions(&provider, &templates, description, 1, 1, 1).unwrap();
        assert_eq!(single, again);
    }

    #[test]
    fn claims_are_deduplicated_exactly() {
        let (provider, templates) = setup();
        let prompt = templates.render("extract_claims", &[("answer", "x")]).unwrap();
        provider.add_fixture("extract_claims", &prompt, "[\"a\", \"b\", \"a\"]");
        let set = extract_claims(&provider, &templates, "ans-1", "x").unwrap();
        assert_eq!(set.claims, vec!["a", "b"]);
        let empty = extract_claims(&provider, &templates, "ans-2", "  ").unwrap();
        assert!(empty.claims.is_empty());
    }

    #[test]
    fn rouge_l_known_values() {
        assert_eq!(rouge_l_distance::<f64>("same text", "same text"), 0.0);
        assert_eq!(rouge_l_distance::<f64>("aa bb", "cc dd"), 1.0);
        // LCS = 2, P = 1, R = 2/3, F = 0.8
        let d: f64 = rouge_l_distance("a b c", "a c");
        assert!((d - 0.2).abs() < 1e-12);
        assert_eq!(rouge_l_distance::<f64>("", ""), 0.0);
        assert_eq!(rouge_l_distance::<f64>("", "x"), 1.0);
    }

    #[test]
    fn rouge_l_is_symmetric() {
        let pairs = [("relay trips breaker", "breaker trips"), ("a b", "b a"), ("x", "y z x")];
        for (a, b) in pairs {
            let ab: f64 = rouge_l_distance(a, b);
            let ba: f64 = rouge_l_distance(b, a);
            assert!((ab - ba).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_claims_form_one_cluster() {
        let claims: Vec<String> = vec!["the relay trips".into(); 4];
        let set = cluster_claims(&claims, 0.5);
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.clusters[0], vec![0, 1, 2, 3]);
    }

    #[test]
    fn disjoint_claims_stay_singletons() {
        let claims: Vec<String> = vec!["aa bb".into(), "cc dd".into(), "ee ff".into()];
        let set = cluster_claims(&claims, 0.5);
        assert_eq!(set.clusters.len(), 3);
    }

    #[test]
    fn cluster_count_is_monotone_in_threshold() {
        let claims: Vec<String> = vec![
            "the relay trips the breaker".into(),
            "the relay trips the main breaker".into(),
            "sensors record voltage".into(),
            "sensors record the voltage waveform".into(),
            "the coil energizes".into(),
        ];
        let mut last = usize::MAX;
        for t in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let count = cluster_claims(&claims, t).clusters.len();
            assert!(count <= last);
            last = count;
        }
    }

    #[test]
    fn clustering_is_a_partition() {
        let claims: Vec<String> = (0..7).map(|i| format!("claim number {i} about relays")).collect();
        let set = cluster_claims(&claims, 0.5);
        let mut seen: Vec<usize> = set.clusters.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    /// Independent trace: label-vector bookkeeping instead of cluster
    /// lists, averages summed over the full matrix.
    fn bruteforce_trace(claims: &[String], threshold: f64) -> Vec<Vec<usize>> {
        let n = claims.len();
        let mut label: Vec<usize> = (0..n).collect();
        loop {
            let labels: Vec<usize> = {
                let mut ls: Vec<usize> = label.clone();
                ls.sort_unstable();
                ls.dedup();
                ls
            };
            if labels.len() < 2 {
                break;
            }
            let members = |l: usize| -> Vec<usize> {
                (0..n).filter(|&i| label[i] == l).collect()
            };
            let key = |l: usize| -> String {
                members(l).iter().map(|&i| claims[i].clone()).min().unwrap()
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for (ai, &la) in labels.iter().enumerate() {
                for &lb in &labels[ai + 1..] {
                    let (ma, mb) = (members(la), members(lb));
                    let mut sum = 0.0;
                    for &i in &ma {
                        for &j in &mb {
                            sum += rouge_l_distance::<f64>(&claims[i], &claims[j]);
                        }
                    }
                    let avg = sum / (ma.len() * mb.len()) as f64;
                    let better = match best {
                        None => true,
                        Some((bd, bla, blb)) => {
                            if avg < bd {
                                true
                            } else if avg > bd {
                                false
                            } else {
                                let (ka, kb) = (key(la), key(lb));
                                let (ia, ib) = (key(bla), key(blb));
                                let cand = order_keys(&ka, &kb);
                                let incumbent = order_keys(&ia, &ib);
                                cand < incumbent
                            }
                        }
                    };
                    if better {
                        best = Some((avg, la, lb));
                    }
                }
            }
            let Some((d, la, lb)) = best else { break };
            if d > threshold {
                break;
            }
            for l in label.iter_mut() {
                if *l == lb {
                    *l = la;
                }
            }
        }
        let mut labels: Vec<usize> = label.clone();
        labels.sort_unstable();
        labels.dedup();
        let mut out: Vec<Vec<usize>> = labels
            .into_iter()
            .map(|l| (0..n).filter(|&i| label[i] == l).collect())
            .collect();
        out.sort_by_key(|c| c.iter().map(|&i| claims[i].clone()).min());
        out
    }

    #[test]
    fn clustering_matches_the_bruteforce_trace() {
        use rand::seq::SliceRandom;
        let words = ["relay", "breaker", "coil", "fault", "meter", "wave"];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..40 {
            let n = rng.gen_range(1..=8);
            let claims: Vec<String> = (0..n)
                .map(|_| {
                    let len = rng.gen_range(1..5);
                    (0..len)
                        .map(|_| *words.choose(&mut rng).unwrap())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let threshold = rng.gen_range(0.0..1.0);
            let got = cluster_claims(&claims, threshold).clusters;
            let want = bruteforce_trace(&claims, threshold);
            assert_eq!(got, want, "case {case} with threshold {threshold}");
        }
    }

    #[test]
    fn four_claim_trace_by_hand() {
        // d(0,1) = d(2,3) = 0.2; everything across families is 1.0.
        // At threshold 0.5 the within-family pairs merge (the "a b" pair
        // first on the lexicographic tie) and merging stops there.
        let claims: Vec<String> =
            vec!["a b".into(), "a b c".into(), "x y".into(), "x y z".into()];
        let set = cluster_claims(&claims, 0.5);
        assert_eq!(set.clusters, vec![vec![0, 1], vec![2, 3]]);
    }

    fn question() -> Question {
        Question {
            id: "q-01-01-01".into(),
            persona: "a tester".into(),
            task: "testing".into(),
            text: "What trips the breaker?".into(),
        }
    }

    #[test]
    fn judge_replicates_prefer_longer_answers_under_mock() {
        let (provider, templates) = setup();
        let verdicts = judge_pairwise(
            &provider,
            &templates,
            &question(),
            "O0",
            "a detailed and much longer answer about relays and breakers",
            "SS",
            "short answer",
            Metric::Comprehensiveness,
            5,
            42,
        )
        .unwrap();
        assert_eq!(verdicts.len(), 5);
        assert!(verdicts.iter().all(|v| v.winner == Winner::A));
        for (i, v) in verdicts.iter().enumerate() {
            assert_eq!(v.replicate, i);
        }
    }

    #[test]
    fn identical_answers_tie_under_mock() {
        let (provider, templates) = setup();
        let verdicts = judge_pairwise(
            &provider,
            &templates,
            &question(),
            "O0",
            "the same answer",
            "SS",
            "the same answer",
            Metric::Diversity,
            3,
            42,
        )
        .unwrap();
        assert!(verdicts.iter().all(|v| v.winner == Winner::Tie));
    }

    #[test]
    fn unparseable_verdict_becomes_a_tie_with_note() {
        let (provider, templates) = setup();
        // pin every replicate's prompt to garbage output
        for replicate in 0..3 {
            let tag = format!("q-01-01-01:O0:empowerment:{replicate}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(7, &tag));
            let swapped: bool = rng.gen();
            let (first, second) = if swapped { ("bbb", "aaaa") } else { ("aaaa", "bbb") };
            let prompt = templates
                .render(
                    "judge_empowerment",
                    &[
                        ("question", "What trips the breaker?"),
                        ("first", first),
                        ("second", second),
                    ],
                )
                .unwrap();
            provider.add_fixture("judge_empowerment", &prompt, "not json");
            provider.add_fixture(
                "judge_empowerment",
                &format!(
                    "{prompt}\n\nThe previous reply was not valid JSON of the requested shape. \
                     Respond with valid JSON only."
                ),
                "still not json",
            );
        }
        let verdicts = judge_pairwise(
            &provider,
            &templates,
            &question(),
            "O0",
            "aaaa",
            "SS",
            "bbb",
            Metric::Empowerment,
            3,
            7,
        )
        .unwrap();
        assert!(verdicts.iter().all(|v| v.winner == Winner::Tie && v.note.is_some()));
    }

    fn verdict(a: &str, b: &str, metric: Metric, winner: Winner, replicate: usize) -> JudgeVerdict {
        JudgeVerdict {
            question_id: "q".into(),
            condition_a: a.into(),
            condition_b: b.into(),
            metric,
            replicate,
            winner,
            note: None,
        }
    }

    #[test]
    fn win_rates_all_wins_and_all_ties() {
        let vs: Vec<JudgeVerdict> = (0..10)
            .map(|i| verdict("O2", "SS", Metric::Comprehensiveness, Winner::A, i))
            .collect();
        let rates = win_rates(&vs);
        let row = rates.iter().find(|r| r.condition_a == "O2").unwrap();
        assert_eq!(row.win_rate_a_pct, 100.0);
        let rev = rates.iter().find(|r| r.condition_a == "SS").unwrap();
        assert_eq!(rev.win_rate_a_pct, 0.0);

        let ties: Vec<JudgeVerdict> = (0..4)
            .map(|i| verdict("O2", "SS", Metric::Diversity, Winner::Tie, i))
            .collect();
        let rates = win_rates(&ties);
        assert!(rates.iter().all(|r| r.win_rate_a_pct == 50.0));
    }

    #[test]
    fn win_rates_sum_to_one_hundred() {
        let mut vs = Vec::new();
        for i in 0..6 {
            vs.push(verdict("O2", "SS", Metric::Directness, Winner::A, i));
        }
        for i in 6..10 {
            vs.push(verdict("O2", "SS", Metric::Directness, Winner::B, i));
        }
        let rates = win_rates(&vs);
        let fwd = rates.iter().find(|r| r.condition_a == "O2").unwrap();
        let bwd = rates.iter().find(|r| r.condition_a == "SS").unwrap();
        assert_eq!(fwd.win_rate_a_pct, 60.0);
        assert!((fwd.win_rate_a_pct + bwd.win_rate_a_pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn report_aggregates_claims_and_clusters() {
        let mut claims_by_condition = BTreeMap::new();
        claims_by_condition.insert(
            "O0".to_string(),
            vec![ClaimSet {
                answer_id: "a1".into(),
                claims: vec!["x y z".into(), "x y z w".into(), "q r s".into()],
            }],
        );
        let report = build_report(&claims_by_condition, &[], 0.5);
        let stats = &report.conditions["O0"];
        assert_eq!(stats.answers, 1);
        assert!((stats.mean_claims - 3.0).abs() < 1e-12);
        assert!(stats.mean_clusters >= 1.0 && stats.mean_clusters <= 3.0);
    }
}
