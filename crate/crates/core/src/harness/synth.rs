//! Seeded synthetic corpus: short documents from a handful of task templates
//! with mostly Zipf-weighted slot fillers, written as `task<TAB>text` lines.

use crate::rng::{derive_seed, Rng, Stream};

const ADJ: &[&str] = &["old", "small", "red", "quiet", "bright", "young"];
const NOUN: &[&str] = &["man", "dog", "house", "car", "teacher", "girl", "boat", "bird"];
const VERB: &[&str] = &["walked", "looked", "ran", "waited", "stood", "slept"];
const PREP: &[&str] = &["near", "behind", "under", "inside"];
const PLACE: &[&str] = &["garden", "station", "market", "bridge", "forest", "school"];
const TIME: &[&str] = &["in the morning", "at night", "on sunday"];
const ATTR: &[&str] = &["color", "size", "name", "age"];
const VALUE: &[&str] = &["blue", "large", "unknown", "ten", "round"];
const NUM: &[&str] = &["one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
const FN: &[&str] = &["scale", "shift", "clamp", "total"];
const ARG: &[&str] = &["x", "n", "value", "items"];
const OP: &[&str] = &["plus", "minus", "times"];

/// Zipf(1) choice from `list`.
fn pick<'a>(rng: &mut Rng, list: &[&'a str]) -> &'a str {
    let weights: Vec<f64> = (1..=list.len()).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.next_f64() * total;
    for (w, item) in weights.iter().zip(list) {
        if u < *w {
            return item;
        }
        u -= w;
    }
    list[list.len() - 1]
}

fn pick_uniform<'a>(rng: &mut Rng, list: &[&'a str]) -> &'a str {
    list[rng.below(list.len() as u64) as usize]
}

fn story(rng: &mut Rng, out: &mut Vec<String>) {
    let sentences = 2 + rng.below(3);
    for s in 0..sentences {
        if s > 0 {
            out.push(pick(rng, &["then", "later", "and then", "after that"]).into());
        }
        out.push("the".into());
        if rng.bernoulli(0.6) {
            out.push(pick_uniform(rng, ADJ).into());
        }
        // Uniform subject slots keep every adjective/noun/verb triple
        // frequent enough to be seen in training.
        out.push(pick_uniform(rng, NOUN).into());
        out.push(pick_uniform(rng, VERB).into());
        out.push(pick(rng, PREP).into());
        out.push("the".into());
        out.push(pick(rng, PLACE).into());
        if rng.bernoulli(0.4) {
            out.push(pick(rng, TIME).into());
        }
        out.push(".".into());
    }
}

fn qa(rng: &mut Rng, out: &mut Vec<String>) {
    let attr = pick(rng, ATTR);
    let noun = pick(rng, NOUN);
    let value = pick(rng, VALUE);
    let text = format!(
        "question : what is the {attr} of the {noun} ? answer : the {attr} of the {noun} is {value} ."
    );
    out.push(text);
}

fn code(rng: &mut Rng, out: &mut Vec<String>) {
    let f = pick(rng, FN);
    let a = pick(rng, ARG);
    let lines = 1 + rng.below(3);
    out.push(format!("def {f} ( {a} ) :"));
    for _ in 0..lines {
        let op = pick(rng, OP);
        let n = pick(rng, NUM);
        out.push(format!("{a} = {a} {op} {n} ;"));
    }
    out.push(format!("return {a} ;"));
}

fn summary(rng: &mut Rng, out: &mut Vec<String>) {
    let noun = pick(rng, NOUN);
    let place = pick(rng, PLACE);
    let verb = pick(rng, VERB);
    out.push(format!(
        "article : the {noun} {verb} near the {place} and the people of the {place} watched . summary : {noun} {verb} ."
    ));
}

fn count(rng: &mut Rng, out: &mut Vec<String>) {
    let start = rng.below(4) as usize;
    let len = 3 + rng.below(5) as usize;
    out.push("count :".into());
    for n in NUM.iter().skip(start).take(len) {
        out.push((*n).into());
    }
    out.push("done .".into());
}

pub const TASKS: &[&str] = &["story", "qa", "code", "summary", "count"];

/// `docs` documents; task `i % 5` for document `i`.
pub fn synthesize(seed: u64, docs: usize) -> String {
    let mut text = String::new();
    for i in 0..docs {
        let mut rng = Rng::new(derive_seed(seed, i as u64), Stream::Workload);
        let task = TASKS[i % TASKS.len()];
        let mut parts = Vec::new();
        match task {
            "story" => story(&mut rng, &mut parts),
            "qa" => qa(&mut rng, &mut parts),
            "code" => code(&mut rng, &mut parts),
            "summary" => summary(&mut rng, &mut parts),
            _ => count(&mut rng, &mut parts),
        }
        text.push_str(task);
        text.push('\t');
        text.push_str(&parts.join(" "));
        text.push('\n');
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::corpus::{Corpus, Tokenization};

    #[test]
    fn seeded_and_labelled() {
        let a = synthesize(3, 50);
        assert_eq!(a, synthesize(3, 50));
        assert_ne!(a, synthesize(4, 50));
        let c = Corpus::parse(&a, Tokenization::Whitespace);
        assert_eq!(c.len(), 50);
        assert_eq!(c.documents[1].task, "qa");
    }

    #[test]
    fn large_enough_for_benchmarks() {
        let docs = crate::harness::DataConfig::default().synthetic_docs;
        let c = Corpus::parse(&synthesize(1, docs), Tokenization::Whitespace);
        assert!(c.token_count() >= 100_000, "{}", c.token_count());
    }
}
