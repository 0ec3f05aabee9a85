//! Acceptance criteria 1-9. Runs without the libtest harness so the
//! per-criterion verdict lines always show up in the output.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use patch_critic::baselines::{derive_seed, random_oracle, ClassWeights};
use patch_critic::cache::digest_bytes;
use patch_critic::calibration::{aggregate_build, apply_threshold, ThresholdPolicy};
use patch_critic::context::{enhance_context, find_function_spans, outermost_function_spans};
use patch_critic::critic::{parse_verdict, CriticVariant, CriticVerdict, ParseMode, VerdictError};
use patch_critic::dataset::{extract_unseen_tests, load_dataset, BuildStatus, DatasetFormat, DatasetPaths, Outcome};
use patch_critic::diff::{apply_patch, parse_patch, render_patch, reverse_patch, Hunk, LineTag, SourceTree};
use patch_critic::evaluation::{confusion, f1_score, metrics, relative_change, spearman};

use common::fixture_dir;

type Check = fn() -> Result<(), String>;

fn main() {
    let criteria: [(&str, Check, u64); 9] = [
        ("metric arithmetic", metric_arithmetic, 1),
        ("weighted random baseline", random_baseline, 5),
        ("diff round trips", diff_round_trips, 30),
        ("context enhancement corpus", context_corpus, 10),
        ("aggregation brute force", aggregation_brute_force, 5),
        ("spearman oracle", spearman_oracle, 30),
        ("prompt fidelity and verdict parsing", prompt_fidelity, 30),
        ("end-to-end offline replay", end_to_end_replay, 20),
        ("calibration policy", calibration_property, 1),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let took = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if took <= Duration::from_secs(*budget) {
                Ok(())
            } else {
                Err(format!("took {took:.2?}, budget {budget}s"))
            }
        });
        match outcome {
            Ok(()) => println!("criterion {}: PASS  {name} ({took:.2?})", n + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({took:.2?}): {e}", n + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

// 1 ----------------------------------------------------------------------

fn metric_arithmetic() -> Result<(), String> {
    for (p, r, want) in [(0.854, 0.988, 0.916), (0.721, 0.954, 0.821)] {
        let f1 = f1_score(Some(p), Some(r)).ok_or("undefined F1")?;
        ensure!(close(f1, want, 0.001), "F1({p}, {r}) = {f1}, want {want}");
        ensure!(
            close(f1, 2.0 * p * r / (p + r), 1e-12),
            "F1 differs from the harmonic mean"
        );
    }
    let change = relative_change(8.3, 10.3).map_err(|e| e.to_string())?;
    ensure!(close(change, 24.1, 0.1), "relative change {change}");
    Ok(())
}

// 2 ----------------------------------------------------------------------

fn random_baseline() -> Result<(), String> {
    let n = 100_000;
    let root = 2024;
    let mut label_rng = ChaCha8Rng::seed_from_u64(derive_seed(root, "labels"));
    let labels: Vec<bool> = (0..n).map(|_| label_rng.random_bool(0.85)).collect();
    let preds: Vec<bool> = random_oracle(ClassWeights::new(0.85).unwrap(), derive_seed(root, "random"), n)
        .into_iter()
        .map(|o| o.is_pass())
        .collect();
    let c = confusion(&preds, &labels).map_err(|e| e.to_string())?;
    let m = metrics(&c);
    let (acc, prec, rec) = (m.accuracy.unwrap(), m.precision.unwrap(), m.recall.unwrap());
    ensure!(close(acc, 0.745, 0.01), "accuracy {acc}");
    ensure!(close(acc * 100.0, 75.0, 2.0), "accuracy {acc} vs 75.0");
    ensure!(close(prec * 100.0, 84.7, 2.0), "precision {prec}");
    ensure!(close(rec * 100.0, 85.9, 2.0), "recall {rec}");
    Ok(())
}

// 3 ----------------------------------------------------------------------

const VOCAB: [&str; 9] = [
    "def f():",
    "    return 1",
    "",
    "x = 1",
    "y = x + 1",
    "# note",
    "    pass",
    "class A:",
    "print(x)",
];

fn random_text(rng: &mut ChaCha8Rng, min_lines: usize) -> String {
    let n = rng.random_range(min_lines..=24);
    let mut s: String = (0..n)
        .map(|_| format!("{}\n", VOCAB[rng.random_range(0..VOCAB.len())]))
        .collect();
    if !s.is_empty() && rng.random_bool(0.2) {
        s.pop();
    }
    s
}

fn mutate(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut lines: Vec<String> = text.split_inclusive('\n').map(str::to_string).collect();
    let missing_newline = !text.is_empty() && !text.ends_with('\n');
    if missing_newline {
        if let Some(last) = lines.last_mut() {
            last.push('\n');
        }
    }
    for _ in 0..rng.random_range(1..=4) {
        let pick = VOCAB[rng.random_range(0..VOCAB.len())].to_string() + "\n";
        match rng.random_range(0..3) {
            0 if !lines.is_empty() => {
                let i = rng.random_range(0..lines.len());
                lines.remove(i);
            }
            1 if !lines.is_empty() => {
                let i = rng.random_range(0..lines.len());
                lines[i] = pick;
            }
            _ => {
                let i = rng.random_range(0..=lines.len());
                lines.insert(i, pick);
            }
        }
    }
    if lines.is_empty() {
        lines.push("x = 2\n".into());
    }
    let mut out: String = lines.concat();
    let drop_newline = if rng.random_bool(0.15) {
        !missing_newline
    } else {
        missing_newline
    };
    if drop_newline {
        out.pop();
    }
    out
}

fn unified(old_path: &str, new_path: &str, old: &str, new: &str, context: usize) -> String {
    common::unified_diff(old_path, new_path, old, new, context)
}

fn diff_round_trips() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(3, "diff"));
    // zero context, missing final newline, deletion, creation
    let mut seen = [0usize; 4];
    for case in 0..1000 {
        let mut old = SourceTree::new();
        let files = rng.random_range(1..=3);
        for f in 0..files {
            old.insert(&format!("pkg/m{f}.py"), &random_text(&mut rng, 1));
        }
        let mut new = old.clone();
        let context = rng.random_range(0..=5);
        let mut text = String::new();
        for f in 0..files {
            let path = format!("pkg/m{f}.py");
            let before = old.get(&path).unwrap().to_string();
            match rng.random_range(0..10) {
                0 => {
                    new.remove(&path);
                    text += &unified(&format!("a/{path}"), "/dev/null", &before, "", context);
                }
                1 => {}
                _ => {
                    let after = mutate(&mut rng, &before);
                    if after != before {
                        new.insert(&path, &after);
                        text += &unified(&format!("a/{path}"), &format!("b/{path}"), &before, &after, context);
                    }
                }
            }
        }
        if rng.random_bool(0.3) || text.is_empty() {
            let path = "pkg/created.py";
            let after = random_text(&mut rng, 1);
            new.insert(path, &after);
            text += &unified("/dev/null", &format!("b/{path}"), "", &after, context);
        }

        seen[0] += (context == 0) as usize;
        seen[1] += text.contains("\\ No newline at end of file") as usize;
        seen[2] += text.contains("+++ /dev/null") as usize;
        seen[3] += text.contains("--- /dev/null") as usize;
        let ctx = |what: &str| format!("case {case} ({what}):\n{text}");
        let patch = parse_patch(&text).map_err(|e| format!("{}: {e}\nOLD {old:?}\nNEW {new:?}", ctx("parse")))?;
        let applied = apply_patch(&old, &patch).map_err(|e| format!("{}: {e}", ctx("apply")))?;
        ensure!(applied == new, "{}", ctx("apply result"));

        ensure!(
            parse_patch(&patch.to_text()).as_ref() == Ok(&patch),
            "{}",
            ctx("to_text reparse")
        );

        let width = rng.random_range(0..=6);
        let rendered = render_patch(&patch, width, &old).map_err(|e| format!("{}: {e}", ctx("render")))?;
        let reparsed = parse_patch(&rendered).map_err(|e| format!("{}: {e}\n{rendered}", ctx("reparse")))?;
        let reapplied = apply_patch(&old, &reparsed).map_err(|e| format!("{}: {e}\n{rendered}", ctx("reapply")))?;
        ensure!(reapplied == new, "{}", ctx(&format!("render width {width}")));

        let back = apply_patch(&new, &reverse_patch(&patch)).map_err(|e| format!("{}: {e}", ctx("reverse")))?;
        ensure!(back == old, "{}", ctx("reverse result"));
    }
    ensure!(seen.iter().all(|&n| n >= 50), "edge cases too rare: {seen:?}");
    Ok(())
}

// 4 ----------------------------------------------------------------------

const SHAPES: &str = r#""""Geometry helpers."""
import math

UNIT = 1.0


def area(radius):
    return math.pi * radius ** 2


@cached
def perimeter(radius):
    return 2 * math.pi * radius


@register("square")
@cached
def square_area(side):
    # squares are easy
    return side * side


def outer(values):
    def inner(v):
        return v + UNIT

    return [inner(v) for v in values]


class Shape:
    sides = 0

    def __init__(self, name):
        self.name = name

    @property
    def label(self):
        return self.name.title()

    def describe(self):
        def fmt(x):
            return f"<{x}>"
        return fmt(self.name)

    class Meta:
        def options(self):
            return {"abstract": True}


async def fetch(url):
    data = await get(url)
    return data


def long_signature(
    first,
    second=(1, 2),
):
    total = first + sum(second)
    text = """
not a def: def fake():
"""
    return total, text


def last():
    pass
"#;

const SERVICE: &str = r#"import os


def env(name, default=None):
    return os.environ.get(name, default)


class Service:
    """A service."""

    retries = 3

    def __init__(self, host, port):
        self.host = host
        self.port = port

    def url(self):
        return f"http://{self.host}:{self.port}"

    @staticmethod
    def default_port():
        return 8080

    @classmethod
    def from_env(cls):
        return cls(env("HOST", "localhost"), int(env("PORT", "80")))

    def call(self, path, payload=None):
        attempts = 0
        while attempts < self.retries:
            attempts += 1
            if payload:
                return self._post(path, payload)
            return self._get(path)
        raise RuntimeError("unreachable")

    def _get(self, path):
        return ("GET", self.url() + path)

    def _post(self, path, payload):
        return ("POST", self.url() + path, payload)


def retry(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OSError:
            return fn(*args, **kwargs)

    return wrapper


@retry
def ping(service):
    return service.call("/ping")


def parse(line):
    key, _, value = line.partition("=")
    return key.strip(), value.strip()


def load(lines):
    return dict(parse(l) for l in lines if l.strip())


def dump(mapping):
    return "\n".join(f"{k}={v}" for k, v in sorted(mapping.items()))


def main():
    svc = Service.from_env()
    print(ping(svc))


if __name__ == "__main__":
    main()
"#;

/// Hand-annotated function spans: (qualified name, first line, last line,
/// outermost). Lines are 1-based and include decorators.
const SHAPES_SPANS: [(&str, usize, usize, bool); 13] = [
    ("area", 7, 8, true),
    ("perimeter", 11, 13, true),
    ("square_area", 16, 20, true),
    ("outer", 23, 27, true),
    ("outer.inner", 24, 25, false),
    ("Shape.__init__", 33, 34, true),
    ("Shape.label", 36, 38, true),
    ("Shape.describe", 40, 43, true),
    ("Shape.describe.fmt", 41, 42, false),
    ("Shape.Meta.options", 46, 47, true),
    ("fetch", 50, 52, true),
    ("long_signature", 55, 63, true),
    ("last", 66, 67, true),
];

const SERVICE_SPANS: [(&str, usize, usize, bool); 15] = [
    ("env", 4, 5, true),
    ("Service.__init__", 13, 15, true),
    ("Service.url", 17, 18, true),
    ("Service.default_port", 20, 22, true),
    ("Service.from_env", 24, 26, true),
    ("Service.call", 28, 35, true),
    ("Service._get", 37, 38, true),
    ("Service._post", 40, 41, true),
    ("retry", 44, 51, true),
    ("retry.wrapper", 45, 49, false),
    ("ping", 54, 56, true),
    ("parse", 59, 61, true),
    ("load", 64, 65, true),
    ("dump", 68, 69, true),
    ("main", 72, 74, true),
];

enum Op {
    Replace(usize, &'static str),
    Delete(usize),
    InsertAfter(usize, &'static str),
}

/// Applies line edits (1-based line numbers of the original text).
fn edit(text: &str, ops: &[Op]) -> String {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let n = i + 1;
        let mut keep = true;
        for op in ops {
            match op {
                Op::Replace(at, s) if *at == n => {
                    out.push_str(s);
                    out.push('\n');
                    keep = false;
                }
                Op::Delete(at) if *at == n => keep = false,
                _ => {}
            }
        }
        if keep {
            out.push_str(line);
        }
        for op in ops {
            if let Op::InsertAfter(at, s) = op {
                if *at == n {
                    out.push_str(s);
                    out.push('\n');
                }
            }
        }
    }
    out
}

fn corpus_edits() -> Vec<(&'static str, &'static str, Vec<Op>)> {
    use Op::*;
    vec![
        (
            "shapes.py",
            SHAPES,
            vec![Replace(8, "    return math.pi * radius * radius")],
        ),
        (
            "shapes.py",
            SHAPES,
            vec![
                Replace(13, "    return math.tau * radius"),
                Replace(20, "    return side ** 2"),
            ],
        ),
        ("shapes.py", SHAPES, vec![Replace(4, "UNIT = 2.0")]),
        ("shapes.py", SHAPES, vec![InsertAfter(24, "        v = float(v)")]),
        ("shapes.py", SHAPES, vec![Replace(11, "@cached(maxsize=8)")]),
        (
            "shapes.py",
            SHAPES,
            vec![Replace(47, "            return {\"abstract\": False}")],
        ),
        ("shapes.py", SHAPES, vec![Replace(61, "still not a def: def fake():")]),
        (
            "shapes.py",
            SHAPES,
            vec![InsertAfter(67, "\n\ndef tail():\n    return None")],
        ),
        (
            "shapes.py",
            SHAPES,
            vec![Delete(41), Delete(42), Replace(43, "        return f\"<{self.name}>\"")],
        ),
        (
            "shapes.py",
            SHAPES,
            vec![
                Replace(8, "    return 0"),
                Replace(4, "UNIT = 3.0"),
                Replace(47, "            return {}"),
            ],
        ),
        ("shapes.py", SHAPES, vec![InsertAfter(31, "    corners = 0")]),
        ("service.py", SERVICE, vec![Replace(31, "            attempts += 2")]),
        ("service.py", SERVICE, vec![Replace(22, "        return 8081")]),
        (
            "service.py",
            SERVICE,
            vec![
                Replace(1, "import os, sys"),
                Replace(74, "    print(ping(svc), file=sys.stderr)"),
            ],
        ),
        (
            "service.py",
            SERVICE,
            vec![Replace(48, "        except (OSError, ValueError):")],
        ),
        (
            "service.py",
            SERVICE,
            vec![
                Replace(59, "def parse(line, sep=\"=\"):"),
                Replace(60, "    key, _, value = line.partition(sep)"),
            ],
        ),
        ("service.py", SERVICE, vec![Replace(78, "    raise SystemExit(main())")]),
        (
            "service.py",
            SERVICE,
            vec![Replace(9, "    \"\"\"A remote service.\"\"\"")],
        ),
        (
            "service.py",
            SERVICE,
            vec![
                Replace(5, "    return os.getenv(name, default)"),
                Replace(35, "        raise RuntimeError(\"retries exhausted\")"),
                Delete(65),
                InsertAfter(65, "    return {k: v for k, v in map(parse, lines)}"),
                Replace(78, "    main()  # entry point"),
            ],
        ),
    ]
}

/// Old-side (0-based) positions changed by a hunk: deleted lines and
/// insertion points.
fn changes(h: &Hunk) -> (Vec<usize>, Vec<usize>) {
    let (mut dels, mut adds) = (vec![], vec![]);
    let mut idx = h.old_range().start;
    for l in &h.lines {
        match l.tag {
            LineTag::Context => idx += 1,
            LineTag::Del => {
                dels.push(idx);
                idx += 1;
            }
            LineTag::Add => adds.push(idx),
        }
    }
    (dels, adds)
}

fn contains(outer: &std::ops::Range<usize>, inner: &std::ops::Range<usize>) -> bool {
    outer.start <= inner.start && inner.end <= outer.end
}

fn context_corpus() -> Result<(), String> {
    let mut functions = 0;
    for (path, text, spans) in [
        ("shapes.py", SHAPES, &SHAPES_SPANS[..]),
        ("service.py", SERVICE, &SERVICE_SPANS[..]),
    ] {
        let found: Vec<(String, usize, usize)> = find_function_spans(path, text)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|s| (s.qualified_name, s.start_line, s.end_line))
            .collect();
        let want: Vec<(String, usize, usize)> = spans.iter().map(|(n, s, e, _)| (n.to_string(), *s, *e)).collect();
        ensure!(found == want, "{path}: scanner spans\n got {found:?}\nwant {want:?}");
        let outer: Vec<String> = outermost_function_spans(path, text)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|s| s.qualified_name)
            .collect();
        let want_outer: Vec<String> = spans.iter().filter(|s| s.3).map(|s| s.0.to_string()).collect();
        ensure!(outer == want_outer, "{path}: outermost {outer:?}");
        functions += spans.len();
    }
    ensure!(functions >= 25, "corpus has only {functions} functions");

    for (case, (path, text, ops)) in corpus_edits().into_iter().enumerate() {
        let spans: Vec<std::ops::Range<usize>> = if path == "shapes.py" {
            &SHAPES_SPANS[..]
        } else {
            &SERVICE_SPANS[..]
        }
        .iter()
        .filter(|s| s.3)
        .map(|s| s.1 - 1..s.2)
        .collect();
        let mut tree = SourceTree::new();
        tree.insert(path, text);
        let after = edit(text, &ops);
        let patch = parse_patch(&unified(&format!("a/{path}"), &format!("b/{path}"), text, &after, 3))
            .map_err(|e| format!("edit {case}: {e}"))?;
        let enhanced = enhance_context(&patch, &tree).map_err(|e| format!("edit {case}: {e}"))?;

        let post = apply_patch(&tree, &patch).map_err(|e| e.to_string())?;
        let post_enhanced = apply_patch(&tree, &enhanced).map_err(|e| format!("edit {case}: {e}"))?;
        ensure!(post_enhanced == post, "edit {case}: post-state differs");
        ensure!(
            post.get(path) == Some(after.as_str()),
            "edit {case}: fixture edit mismatch"
        );

        let twice = enhance_context(&enhanced, &tree).map_err(|e| e.to_string())?;
        ensure!(twice == enhanced, "edit {case}: not idempotent");

        let original = &patch.file_diffs[0].hunks;
        let widened = &enhanced.file_diffs[0].hunks;
        for h in original {
            let host = widened
                .iter()
                .find(|w| contains(&w.old_range(), &h.old_range()) && contains(&w.new_range(), &h.new_range()))
                .ok_or_else(|| format!("edit {case}: hunk {:?} not contained", h.old_range()))?;
            let (dels, adds) = changes(h);
            for span in &spans {
                let touched =
                    dels.iter().any(|d| span.contains(d)) || adds.iter().any(|&p| span.start < p && p <= span.end);
                if touched {
                    ensure!(
                        contains(&host.old_range(), span),
                        "edit {case}: span {span:?} not covered by {:?}",
                        host.old_range()
                    );
                }
            }
        }
        for w in widened {
            let r = w.old_range();
            let start_ok =
                original.iter().any(|h| h.old_range().start == r.start) || spans.iter().any(|s| s.start == r.start);
            let end_ok = original.iter().any(|h| h.old_range().end == r.end) || spans.iter().any(|s| s.end == r.end);
            ensure!(
                start_ok && end_ok,
                "edit {case}: window {r:?} does not align to a hunk or span boundary"
            );
        }
    }
    Ok(())
}

// 5 ----------------------------------------------------------------------

fn aggregation_brute_force() -> Result<(), String> {
    ensure!(aggregate_build(&[]).is_err(), "empty verdict vector accepted");
    let mut cases = 0;
    for n in 1..=10usize {
        for mask in 0u32..(1 << n) {
            let v: Vec<Outcome> = (0..n).map(|i| Outcome::from_pass(mask >> i & 1 == 1)).collect();
            let (status, rate) = aggregate_build(&v).map_err(|e| e.to_string())?;
            let passes = mask.count_ones() as usize;
            let want = if passes == n {
                BuildStatus::Success
            } else {
                BuildStatus::Failure
            };
            ensure!(status == want, "{v:?}: {status:?}");
            ensure!(rate == passes as f64 / n as f64, "{v:?}: rate {rate}");
            cases += 1;
        }
    }
    ensure!(cases == (1 << 11) - 2, "covered {cases} cases");
    Ok(())
}

// 6 ----------------------------------------------------------------------

/// Rank of each value by definition: one plus the number of smaller
/// values plus half the number of other equal values.
fn definition_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn oracle_rho(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (definition_ranks(x), definition_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn permutations(n: usize) -> Vec<Vec<f64>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n as f64);
            out.push(q);
        }
    }
    out
}

fn spearman_oracle() -> Result<(), String> {
    for n in 2..=5 {
        let perms = permutations(n);
        for x in &perms {
            for y in &perms {
                let got = spearman(x, y)
                    .map_err(|e| e.to_string())?
                    .ok_or("undefined for a permutation")?;
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                let nf = n as f64;
                let classic = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
                ensure!(close(got, classic, 1e-12), "{x:?} {y:?}: {got} vs {classic}");
                ensure!(
                    close(got, oracle_rho(x, y).unwrap(), 1e-12),
                    "{x:?} {y:?}: oracle mismatch"
                );
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(6, "spearman"));
    for case in 0..1000 {
        let n = rng.random_range(2..=12);
        let levels = rng.random_range(1..=4);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..=levels) as f64 / 4.0).collect();
        let got = spearman(&x, &y).map_err(|e| e.to_string())?;
        let want = oracle_rho(&x, &y);
        let same = match (got, want) {
            (Some(a), Some(b)) => close(a, b, 1e-12),
            (None, None) => true,
            _ => false,
        };
        ensure!(same, "case {case}: {x:?} {y:?}: {got:?} vs {want:?}");
    }
    ensure!(spearman(&[1.0], &[1.0]).is_err(), "n = 1 accepted");
    Ok(())
}

// 7 ----------------------------------------------------------------------

/// The six published templates in document order, with the SHA-256 of
/// each block for when the source document is not available.
const PUBLISHED: [(CriticVariant, &str); 6] = [
    (
        CriticVariant::HolisticTestSource,
        "4f3068130a622520b18166eda3f0ba7ecfd6881c487d0ba9ac2f139a226a8340",
    ),
    (
        CriticVariant::IsolatedTestSource,
        "1d1edffed59064a5e5b69b7ff30f05eb0be88db33da37da508c34c8ade5f9e36",
    ),
    (
        CriticVariant::IsolatedTestPatch,
        "417e8ae4272258dce07b0b4166bde5697707936ed35323b06fb2e619bc99f0c1",
    ),
    (
        CriticVariant::HolisticTestPatch,
        "0976232a3adfe03eaed48d08d09558eab733b2e4cad69897ae42848899c96d18",
    ),
    (
        CriticVariant::ReferenceFree,
        "ccf60b1f687c0f1e3210d57f8810033a7addd27e364cbf021c1aa814a163ed02",
    ),
    (
        CriticVariant::ReferenceFreeHints,
        "87486f98cbc0221ed9cbb5f68322954e554b81daf7f68a1fc703ce2be6764c0f",
    ),
];

fn published_blocks() -> Option<Vec<String>> {
    let doc = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../paper.md");
    let text = fs::read_to_string(doc).ok()?;
    let (open, close) = ("\\begin{promptexample}\n", "\n\\end{promptexample}");
    let mut blocks = vec![];
    let mut rest = text.as_str();
    while let Some(i) = rest.find(open) {
        let body = &rest[i + open.len()..];
        let j = body.find(close)?;
        blocks.push(body[..j].to_string());
        rest = &body[j..];
    }
    Some(blocks)
}

fn prompt_fidelity() -> Result<(), String> {
    let blocks = published_blocks();
    if let Some(b) = &blocks {
        ensure!(b.len() == PUBLISHED.len(), "found {} template blocks", b.len());
    }
    for (i, (variant, sha)) in PUBLISHED.iter().enumerate() {
        let template = variant.template();
        let values: BTreeMap<String, String> = template
            .placeholders()
            .into_iter()
            .map(|p| (p.to_string(), format!("\u{1}{p}\u{2}")))
            .collect();
        let rendered = template.render(&values).map_err(|e| e.to_string())?;
        let mut restored = rendered.clone();
        for p in template.placeholders() {
            restored = restored.replace(&format!("\u{1}{p}\u{2}"), &format!("{{{{{p}}}}}"));
        }
        if let Some(b) = &blocks {
            ensure!(restored == b[i], "{variant}: differs from the published block");
        }
        ensure!(digest_bytes(restored.as_bytes()) == *sha, "{variant}: digest differs");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(7, "verdicts"));
    let mut well_formed = vec![];
    for case in 0..10_000 {
        let pass = rng.random_bool(0.5);
        let confidence: u8 = rng.random_range(0..=100);
        let words = [
            "the", "patch", "fixes", "test", "value", "a < b", "x > y", "=>", "ok.", "\n",
        ];
        let analysis: String = (0..rng.random_range(0..40))
            .map(|_| *words.choose(&mut rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        let word = match (pass, rng.random_range(0..3)) {
            (true, 0) => "yes",
            (true, 1) => "Yes",
            (true, _) => " YES ",
            (false, 0) => "no",
            (false, 1) => "No",
            (false, _) => "\nno\n",
        };
        let pct = if rng.random_bool(0.1) { "%" } else { "" };
        let mut parts = [
            format!("<analysis>\n{analysis}\n</analysis>"),
            format!("<confidence>{confidence}{pct}</confidence>"),
            format!("<prediction>{word}</prediction>"),
        ];
        parts.shuffle(&mut rng);
        let response = parts.join(if rng.random_bool(0.5) { "\n" } else { "\n\n" });
        let parsed =
            parse_verdict(&response, ParseMode::Strict).map_err(|e| format!("case {case}: {e}\n{response}"))?;
        ensure!(parsed.prediction.is_pass() == pass, "case {case}: prediction");
        ensure!(
            parsed.confidence == confidence,
            "case {case}: confidence {}",
            parsed.confidence
        );
        ensure!(parsed.analysis.trim() == analysis.trim(), "case {case}: analysis");
        well_formed.push(response);
    }

    for (case, original) in well_formed.iter().enumerate() {
        let mut s = original.clone();
        for _ in 0..rng.random_range(1..=3) {
            let chars: Vec<char> = s.chars().collect();
            let at = rng.random_range(0..=chars.len());
            s = match rng.random_range(0..6) {
                0 => chars[..at].iter().collect(),
                1 => {
                    let end = rng.random_range(at..=chars.len());
                    chars[..at].iter().chain(&chars[end..]).collect()
                }
                2 => {
                    let junk = [
                        "<",
                        ">",
                        "</prediction>",
                        "<confidence>",
                        "maybe",
                        "-7",
                        "1e9",
                        "\u{feff}",
                        "９０",
                    ];
                    let j = junk.choose(&mut rng).unwrap();
                    chars[..at].iter().collect::<String>() + j + &chars[at..].iter().collect::<String>()
                }
                3 => s.replace("prediction", "predicton"),
                4 => s.replace("confidence", "confidance"),
                _ => s.replace(char::is_numeric, "x"),
            };
        }
        for mode in [ParseMode::Strict, ParseMode::Lenient] {
            let result = panic::catch_unwind(AssertUnwindSafe(|| parse_verdict(&s, mode)))
                .map_err(|_| format!("mutation {case} panicked: {s:?}"))?;
            match result {
                Ok(v) => ensure!(v.confidence <= 100, "mutation {case}: confidence {}", v.confidence),
                Err(e) => {
                    if !s.contains("<prediction>") {
                        ensure!(matches!(e, VerdictError::MissingPrediction), "mutation {case}: {e:?}");
                    }
                }
            }
        }
    }
    Ok(())
}

// 8 ----------------------------------------------------------------------

fn run_pipeline(out: &Path, concurrency: usize) -> Result<(), String> {
    let config = fixture_dir().join("config.toml");
    for cmd in ["evaluate", "aggregate", "rank", "report"] {
        let o = Command::new(env!("CARGO_BIN_EXE_patch-critic"))
            .arg("--config")
            .arg(&config)
            .arg("--output")
            .arg(out)
            .args(["--offline", "--concurrency", &concurrency.to_string(), cmd])
            .env("RUST_LOG", "off")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            o.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    Ok(())
}

fn metric_rows(report: &str) -> BTreeMap<(String, String), Value> {
    report
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["record"] == "metrics")
        .map(|v| {
            (
                (
                    v["variant"].as_str().unwrap().to_string(),
                    v["level"].as_str().unwrap().to_string(),
                ),
                v,
            )
        })
        .collect()
}

fn counts(v: &Value) -> [u64; 4] {
    ["tp", "fp", "tn", "fn"].map(|k| v[k].as_u64().unwrap())
}

fn end_to_end_replay() -> Result<(), String> {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, c) in dirs.iter().zip([1, 1, 8]) {
        run_pipeline(dir.path(), c)?;
    }
    let snaps: Vec<_> = dirs.iter().map(|d| common::snapshot_dir(d.path())).collect();
    ensure!(snaps[0].len() >= 15, "only {} output files", snaps[0].len());
    ensure!(snaps[0] == snaps[1], "two runs differ");
    ensure!(snaps[0] == snaps[2], "concurrency 1 and 8 differ");

    let report = String::from_utf8(snaps[0]["report.jsonl"].clone()).unwrap();
    let rows = metric_rows(&report);
    // (variant, level) -> [tp, fp, tn, fn], worked out by hand from the fixture tables.
    let expected: [(&str, &str, [u64; 4]); 9] = [
        ("isolated_test_patch", "micro", [59, 5, 10, 1]),
        ("isolated_test_patch", "macro", [14, 5, 10, 1]),
        ("isolated_test_patch+policy", "micro", [58, 1, 14, 2]),
        ("isolated_test_patch+policy", "macro", [13, 1, 14, 2]),
        ("holistic_test_patch", "macro", [15, 1, 14, 0]),
        ("reference_free", "macro", [15, 10, 5, 0]),
        ("edit_distance", "macro", [15, 2, 13, 0]),
        ("random", "micro", [0, 0, 0, 0]),
        ("random", "macro", [0, 0, 0, 0]),
    ];
    for (variant, level, want) in expected {
        let row = rows
            .get(&(variant.into(), level.into()))
            .ok_or(format!("no {variant}/{level} row"))?;
        if variant == "random" {
            continue;
        }
        ensure!(counts(row) == want, "{variant}/{level}: {:?} vs {want:?}", counts(row));
        let [tp, fp, _, fn_] = want.map(|x| x as f64);
        let f1 = 2.0 * tp / (2.0 * tp + fp + fn_);
        ensure!(close(row["f1"].as_f64().unwrap(), f1, 1e-12), "{variant}/{level}: f1");
    }
    ensure!(
        close(
            rows[&("isolated_test_patch".into(), "micro".into())]["f1"]
                .as_f64()
                .unwrap(),
            118.0 / 124.0,
            1e-12
        ),
        "micro F1"
    );
    ensure!(
        rows[&("isolated_test_patch+policy".into(), "micro".into())]["forced"] == 5,
        "forced count"
    );

    // Random rows recounted from the sampled verdicts.
    let labels = fixture_labels();
    let random = String::from_utf8(snaps[0]["verdicts/random.jsonl"].clone()).unwrap();
    let mut micro = [0u64; 4];
    let mut build: BTreeMap<(String, String), bool> = BTreeMap::new();
    for line in random.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let key = (
            v["instance_id"].as_str().unwrap().to_string(),
            v["workflow"].as_str().unwrap().to_string(),
        );
        let pred = v["prediction"] == "pass";
        let truth = labels[&key][v["test_id"].as_str().unwrap()];
        micro[match (pred, truth) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        }] += 1;
        *build.entry(key).or_insert(true) &= pred;
    }
    let mut macro_ = [0u64; 4];
    for (key, pred) in &build {
        let truth = labels[key].values().all(|p| *p);
        macro_[match (*pred, truth) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        }] += 1;
    }
    ensure!(
        counts(&rows[&("random".into(), "micro".into())]) == micro,
        "random micro"
    );
    ensure!(
        counts(&rows[&("random".into(), "macro".into())]) == macro_,
        "random macro"
    );

    // Ranking rho against the definition oracle on the scripted pass rates.
    let rankings: Vec<Value> = report
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["record"] == "ranking")
        .collect();
    ensure!(rankings.len() == common::INSTANCES, "{} rankings", rankings.len());
    for (i, r) in rankings.iter().enumerate() {
        let names = common::test_names(i);
        let rate = |f: &dyn Fn(&str) -> bool| names.iter().filter(|n| f(n)).count() as f64 / names.len() as f64;
        let pred: Vec<f64> = common::WORKFLOWS
            .iter()
            .map(|w| rate(&|n| common::isolated_call(i, w, n).0))
            .collect();
        let truth: Vec<f64> = common::WORKFLOWS
            .iter()
            .map(|w| rate(&|n| common::truly_passes(i, w, n)))
            .collect();
        let want = oracle_rho(&pred, &truth);
        let got = r["rho"].as_f64();
        let same = match (got, want) {
            (Some(a), Some(b)) => close(a, b, 1e-12),
            (None, None) => r["rho"] == "n/a",
            _ => false,
        };
        ensure!(same, "instance {i}: rho {:?} vs {want:?}", r["rho"]);
    }
    Ok(())
}

fn fixture_labels() -> BTreeMap<(String, String), BTreeMap<String, bool>> {
    let mut out = BTreeMap::new();
    for i in 0..common::INSTANCES {
        for w in common::WORKFLOWS {
            let tests = common::test_names(i)
                .into_iter()
                .map(|n| (common::test_id(i, n), common::truly_passes(i, w, n)))
                .collect();
            out.insert((common::instance_id(i), w.to_string()), tests);
        }
    }
    out
}

// 9 ----------------------------------------------------------------------

fn calibration_property() -> Result<(), String> {
    let dir = fixture_dir();
    let dataset = load_dataset(&DatasetPaths {
        instances: dir.join("instances.jsonl"),
        format: DatasetFormat::Jsonl,
        candidates: Some(dir.join("candidates.jsonl")),
        labels: Some(dir.join("labels.jsonl")),
        snapshots: Some(dir.join("snapshots.jsonl")),
    })
    .map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_patch-critic"))
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("--output")
        .arg(out.path())
        .args(["evaluate", "--variant", "isolated_test_patch"])
        .env("RUST_LOG", "off")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(o.status.success(), "evaluate failed");
    let verdicts: Vec<CriticVerdict> = fs::read_to_string(out.path().join("verdicts/isolated_test_patch.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    ensure!(verdicts.len() == 75, "{} verdicts", verdicts.len());

    let policy = ThresholdPolicy::default();
    let (mut before, mut after) = ((0u64, 0u64), (0u64, 0u64));
    let mut forced = 0;
    for inst in &dataset {
        let tests = extract_unseen_tests(&inst.gold_test_patch, &inst.snapshot).map_err(|e| e.to_string())?;
        for v in verdicts.iter().filter(|v| v.instance_id == inst.instance_id) {
            let test_id = v.test_id.as_deref().unwrap();
            let test = tests.iter().find(|t| t.test_id == test_id).unwrap();
            let c = apply_threshold(v, test, &policy);
            ensure!(
                !(v.prediction == Outcome::Fail && c.prediction == Outcome::Pass),
                "{test_id}: fail flipped to pass"
            );
            if c.prediction != v.prediction {
                ensure!(c.forced, "{test_id}: changed without the forced flag");
            }
            if c.forced {
                forced += 1;
                ensure!(c.prediction == Outcome::Fail, "{test_id}: forced but not fail");
                ensure!(
                    v.confidence <= 65 && test.body.chars().count() > 50,
                    "{test_id}: forced outside the policy"
                );
            }
            let truth = inst.labels[&v.workflow].tests[test_id];
            if truth == Outcome::Fail {
                before.1 += 1;
                after.1 += 1;
                before.0 += (v.prediction == Outcome::Fail) as u64;
                after.0 += (c.prediction == Outcome::Fail) as u64;
            }
        }
    }
    ensure!(forced == 5, "{forced} forced verdicts");
    let spec = |(tn, neg): (u64, u64)| tn as f64 / neg as f64;
    // Same negatives on both sides, so comparing true negatives compares specificity.
    ensure!(
        before.1 == after.1 && before.0 <= after.0,
        "specificity fell from {} to {}",
        spec(before),
        spec(after)
    );
    Ok(())
}
