//! Helpers shared by the integration tests: brute-force oracles, scripted
//! scorers and a driver for the full command-line pipeline.
#![allow(dead_code, clippy::needless_range_loop)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use unitfix_core::mlm::UnitScorer;
use unitfix_core::phonemap::PhoneMap;
use unitfix_core::rng::mix;
use unitfix_core::UnitVocab;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
}

/// Edit distance from a full `(n+1)×(m+1)` table.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Phones of a unit sequence, frame-mapped then run-collapsed.
pub fn collapse_phones(tokens: &[u32], map: &PhoneMap) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for &t in tokens {
        let p = map.mapping[t as usize];
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Pooled PER in percent.
pub fn oracle_per(pairs: &[(Vec<u32>, Vec<u32>)]) -> f64 {
    let errors: usize = pairs.iter().map(|(h, r)| levenshtein(h, r)).sum();
    let len: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    100.0 * errors as f64 / len as f64
}

/// Straight-line re-derivation of the corrector, written without any of the
/// library's grouping or selection helpers.
pub fn naive_correct(
    tokens: &[u32],
    scorer: &dyn UnitScorer,
    iterations: usize,
    p_mask: f64,
    by_phone: bool,
    fill_all: bool,
    map: &PhoneMap,
) -> Vec<u32> {
    let v = scorer.vocab().len();
    let mask = v as u32;
    let t = tokens.len();
    let n_max = (p_mask * t as f64).floor() as usize;
    let mut x = tokens.to_vec();
    if n_max == 0 {
        return x;
    }
    let m = std::cmp::max(1, n_max / iterations);
    for k in 1..=iterations {
        let n_k = std::cmp::max(1, n_max * (iterations - k + 1) / iterations);
        let dist = scorer.distributions(&x).unwrap();
        let conf: Vec<f64> = (0..t).map(|i| dist[i * v + x[i] as usize]).collect();
        let key = |i: usize| {
            if by_phone {
                map.mapping[x[i] as usize]
            } else {
                x[i]
            }
        };
        // (start, len, max confidence)
        let mut runs: Vec<(usize, usize, f64)> = Vec::new();
        for i in 0..t {
            match runs.last_mut() {
                Some(r) if key(r.0) == key(i) => {
                    r.1 += 1;
                    r.2 = r.2.max(conf[i]);
                }
                _ => runs.push((i, 1, conf[i])),
            }
        }
        let mut order: Vec<usize> = (0..runs.len()).collect();
        order.sort_by(|&a, &b| {
            runs[a]
                .2
                .partial_cmp(&runs[b].2)
                .unwrap()
                .then(runs[a].0.cmp(&runs[b].0))
        });
        let mut chosen = Vec::new();
        let mut covered = 0;
        for r in order {
            if covered >= n_k {
                break;
            }
            covered += runs[r].1;
            chosen.push(r);
        }
        let mut masked = x.clone();
        for &r in &chosen {
            for i in runs[r].0..runs[r].0 + runs[r].1 {
                masked[i] = mask;
            }
        }
        let dist = scorer.distributions(&masked).unwrap();
        let best = |i: usize| -> (u32, f64) {
            let row = &dist[i * v..(i + 1) * v];
            let mut b = 0;
            for u in 1..v {
                if row[u] > row[b] {
                    b = u;
                }
            }
            (b as u32, row[b])
        };
        let mut fills: Vec<(usize, f64)> = chosen
            .iter()
            .map(|&r| {
                let (s, l, _) = runs[r];
                (r, (s..s + l).map(|i| best(i).1).sum::<f64>() / l as f64)
            })
            .collect();
        fills.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then(runs[a.0].0.cmp(&runs[b.0].0))
        });
        let mut filled = 0;
        let mut next = x.clone();
        for (r, _) in fills {
            if !fill_all && filled >= m {
                break;
            }
            let (s, l, _) = runs[r];
            for i in s..s + l {
                next[i] = best(i).0;
            }
            filled += l;
        }
        x = next;
    }
    x
}

/// Context-dependent pseudo-random distributions, fixed by `seed`.
pub struct Noisy {
    pub vocab: UnitVocab,
    pub seed: u64,
}

impl UnitScorer for Noisy {
    fn vocab(&self) -> UnitVocab {
        self.vocab
    }

    fn distributions(&self, tokens: &[u32]) -> unitfix_core::Result<Vec<f64>> {
        let v = self.vocab.len();
        let at = |i: isize| -> u64 {
            if i < 0 || i as usize >= tokens.len() {
                u64::MAX
            } else {
                tokens[i as usize] as u64
            }
        };
        let mut out = Vec::with_capacity(tokens.len() * v);
        for i in 0..tokens.len() as isize {
            let h = mix(mix(mix(self.seed, at(i - 1)), at(i)), at(i + 1));
            let row: Vec<f64> = (0..v)
                .map(|u| 1.0 + (mix(h, u as u64) % 1000) as f64)
                .collect();
            let z: f64 = row.iter().sum();
            out.extend(row.iter().map(|w| w / z));
        }
        Ok(out)
    }
}

/// Puts all mass on `target` at every frame.
pub struct Perfect {
    pub vocab: UnitVocab,
    pub target: Vec<u32>,
}

impl UnitScorer for Perfect {
    fn vocab(&self) -> UnitVocab {
        self.vocab
    }

    fn distributions(&self, tokens: &[u32]) -> unitfix_core::Result<Vec<f64>> {
        let v = self.vocab.len();
        let mut out = vec![0.0; tokens.len() * v];
        for i in 0..tokens.len() {
            out[i * v + self.target[i] as usize] = 1.0;
        }
        Ok(out)
    }
}

pub const VARIANTS: [&str; 4] = [
    "cluster-groups",
    "phone-groups",
    "cluster-groups-fill-all",
    "phone-groups-fill-all",
];

/// Artifact locations of one pipeline run rooted at `root`.
pub struct Pipeline {
    pub root: PathBuf,
    pub config: PathBuf,
    pub jobs: usize,
}

impl Pipeline {
    pub fn new(root: &Path, jobs: usize) -> Self {
        Self {
            root: root.to_path_buf(),
            config: data_dir().join("acceptance.json"),
            jobs,
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn run(&self, args: &[&str]) -> String {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_unitfix"));
        cmd.arg("--config")
            .arg(&self.config)
            .arg("--jobs")
            .arg(self.jobs.to_string())
            .current_dir(&self.root);
        let out = cmd.args(args).output().expect("spawn unitfix");
        assert!(
            out.status.success(),
            "unitfix {args:?} failed ({:?}): {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Corpus, codebook, unit sequences, count scorer and phone map.
    pub fn prepare(&self) {
        fs::create_dir_all(&self.root).unwrap();
        self.run(&["gen-corpus", "--out", "data", "--heldout", "100"]);
        self.run(&[
            "kmeans-fit",
            "--corpus",
            "data/standard",
            "--out",
            "codebook.kmcb",
        ]);
        self.run(&[
            "kmeans-assign",
            "--codebook",
            "codebook.kmcb",
            "--corpus",
            "data/standard",
            "--out",
            "units/standard.txt",
        ]);
        for set in ["accented", "heldout"] {
            self.run(&[
                "kmeans-assign",
                "--codebook",
                "codebook.kmcb",
                "--corpus",
                &format!("data/{set}"),
                "--out",
                &format!("units/{set}.txt"),
                "--standard-out",
                &format!("units/{set}.standard.txt"),
            ]);
        }
        self.run(&[
            "mlm-train",
            "--units",
            "units/standard.txt",
            "--out",
            "lm.json",
        ]);
        self.run(&[
            "phonemap-learn",
            "--units",
            "units/standard.txt",
            "--corpus",
            "data/standard",
            "--out",
            "phone_map.json",
        ]);
    }

    /// Corrects the accented units with every variant and scores PER for
    /// them and for the uncorrected units.
    pub fn correct_and_score(&self) {
        for v in VARIANTS {
            let mut args = vec![];
            let trace = format!("traces/{v}.jsonl");
            if v == "cluster-groups" {
                args.extend(["--trace", trace.as_str()]);
            }
            let out = format!("corrected/{v}.txt");
            args.extend([
                "correct",
                "--scorer",
                "lm.json",
                "--units",
                "units/accented.txt",
                "--phone-map",
                "phone_map.json",
                "--variant",
                v,
                "--out",
                &out,
            ]);
            self.run(&args);
        }
        for (name, hyp) in
            std::iter::once(("uncorrected".to_string(), "units/accented.txt".to_string())).chain(
                VARIANTS
                    .iter()
                    .map(|v| (v.to_string(), format!("corrected/{v}.txt"))),
            )
        {
            self.run(&[
                "eval-per",
                "--hyp",
                &hyp,
                "--ref",
                "data/accented/ref_phones.txt",
                "--phone-map",
                "phone_map.json",
                "--out",
                &format!("per/{name}.csv"),
            ]);
        }
    }

    /// Backbone, adapters on corrected and uncorrected targets, and held-out
    /// masked-frame accuracy of all three.
    pub fn adapt(&self) {
        self.run(&[
            "adapt-pretrain",
            "--corpus",
            "data/standard",
            "--units",
            "units/standard.txt",
            "--out",
            "adapt/base.encp",
        ]);
        for (name, units) in [
            ("corrected", "corrected/phone-groups-fill-all.txt"),
            ("uncorrected", "units/accented.txt"),
        ] {
            self.run(&[
                "adapt-train",
                "--base",
                "adapt/base.encp",
                "--corpus",
                "data/accented",
                "--units",
                units,
                "--out",
                &format!("adapt/{name}.encp"),
            ]);
        }
        for name in ["base", "corrected", "uncorrected"] {
            self.run(&[
                "adapt-eval",
                "--model",
                &format!("adapt/{name}.encp"),
                "--corpus",
                "data/heldout",
                "--units",
                "units/heldout.standard.txt",
                "--out",
                &format!("adapt/{name}.json"),
            ]);
        }
    }

    pub fn per(&self, name: &str) -> f64 {
        unitfix::formats::records::read_per_summary(&self.path(&format!("per/{name}.csv"))).unwrap()
    }

    pub fn accuracy(&self, name: &str) -> f64 {
        let text = fs::read_to_string(self.path(&format!("adapt/{name}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["masked_frame_accuracy"].as_f64().unwrap()
    }
}

/// Every file under `dir` with its relative path, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((
                    p.strip_prefix(base).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// The committed reference run.
pub struct Recorded {
    pub per: Vec<(String, f64)>,
    pub accuracy: Vec<(String, f64)>,
}

impl Recorded {
    pub fn load() -> Self {
        let text =
            fs::read_to_string(data_dir().join("recorded_run.json")).expect("recorded_run.json");
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let pairs = |k: &str| -> Vec<(String, f64)> {
            v[k].as_object()
                .unwrap()
                .iter()
                .map(|(k, x)| (k.clone(), x.as_f64().unwrap()))
                .collect()
        };
        Self {
            per: pairs("per"),
            accuracy: pairs("masked_frame_accuracy"),
        }
    }

    pub fn per(&self, name: &str) -> f64 {
        self.per
            .iter()
            .find(|p| p.0 == name)
            .unwrap_or_else(|| panic!("no recorded PER for {name}"))
            .1
    }

    pub fn accuracy(&self, name: &str) -> f64 {
        self.accuracy
            .iter()
            .find(|p| p.0 == name)
            .unwrap_or_else(|| panic!("no recorded accuracy for {name}"))
            .1
    }
}
