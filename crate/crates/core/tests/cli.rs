use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eigenlmm::io;
use eigenlmm::kinship::{compute_relatedness, GenotypeMatrix};
use eigenlmm::simulate::{sim_phenotype, sim_unrelated_genotypes, SimSeed};
use eigenlmm::spectra::decompose;

fn eigenlmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigenlmm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Genotypes, kinship, decomposition and a phenotype with small SNP effects.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(n: usize, binary: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_owned();
        let seed = SimSeed::new(11, "cli-fixture");
        let kin_rows = sim_unrelated_genotypes(n, 3 * n, &seed.substream("kin"));
        let ids: Vec<String> = (0..kin_rows.len()).map(|i| format!("k{i}")).collect();
        io::write_genotypes(root.join("kin_geno.txt"), &ids, &kin_rows).unwrap();

        let mut test_rows = sim_unrelated_genotypes(n, 40, &seed.substream("test"));
        test_rows[3] = vec![1.0; n];
        test_rows[5][0] = f64::NAN;
        let test_ids: Vec<String> = (0..test_rows.len()).map(|i| format!("rs{i}")).collect();
        io::write_genotypes(root.join("geno.txt"), &test_ids, &test_rows).unwrap();

        let g = GenotypeMatrix::new(ids, kin_rows).unwrap();
        let d = decompose(&compute_relatedness(&g, 0.0).unwrap()).unwrap();
        let noise = sim_phenotype(&d, 0.4, &seed.substream("y"), 0).unwrap();
        let y: Vec<f64> = noise
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let g = test_rows[0][i] - 1.0;
                let liability = 0.15 * g + e;
                if binary {
                    f64::from(u8::from(liability > 0.0))
                } else {
                    liability
                }
            })
            .collect();
        io::write_phenotype(root.join("y.txt"), &y).unwrap();
        let out = eigenlmm(&[
            "kinship",
            "--genotypes",
            s(&root.join("kin_geno.txt")),
            "--out",
            s(&root.join("kin.bin")),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let out = eigenlmm(&["decompose", "--kinship", s(&root.join("kin.bin")), "--out", s(&root.join("d.bin"))]);
        assert!(out.status.success(), "{}", stderr(&out));
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn assoc(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "assoc".to_string(),
            "--decomp".into(),
            s(&self.path("d.bin")).into(),
            "--genotypes".into(),
            s(&self.path("geno.txt")).into(),
            "--phenotype".into(),
            s(&self.path("y.txt")).into(),
            "--out".into(),
            s(&self.path(out)).into(),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        eigenlmm(&refs)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }
}

fn column(table: &str, name: &str) -> Vec<String> {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let c = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split('\t').nth(c).unwrap().to_owned()).collect()
}

#[test]
fn kinship_cache_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let geno = dir.path().join("g.txt");
    std::fs::write(&geno, "a 0 1 2 1 0\nb 2 2 1 0 NA\nc 1 1 1 1 1\nd 0 0 1 2 2\n").unwrap();
    let cache = dir.path().join("r.bin");
    let out = eigenlmm(&["kinship", "--genotypes", s(&geno), "--out", s(&cache)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("resolved config"));
    let bytes = std::fs::read(&cache).unwrap();
    assert_eq!(&bytes[..4], b"MMMR");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 5);

    let (ids, rows) = io::read_genotypes(&geno).unwrap();
    let lib = compute_relatedness(&GenotypeMatrix::new(ids, rows).unwrap(), 0.0).unwrap();
    let cli = io::read_relatedness_cache(&cache).unwrap();
    assert_eq!(cli.values(), lib.values());
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let out = eigenlmm(&["kinship", "--genotypes", "/nonexistent/geno.txt", "--out", "/tmp/x.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/geno.txt"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(eigenlmm(&["assoc", "--bogus"]).status.code(), Some(2));
    assert_eq!(eigenlmm(&["frobnicate"]).status.code(), Some(2));
    let out = eigenlmm(&["assoc", "--decomp", "a", "--genotypes", "b", "--phenotype", "c", "--out", "d", "--method", "reml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rank_deficient_null_model_exits_1() {
    let f = Fixture::new(60, false);
    let cov = f.path("cov.txt");
    std::fs::write(&cov, "1\n".repeat(60)).unwrap();
    let out = f.assoc("o.tsv", &["--covariates", s(&cov)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("rank-deficient"));
}

#[test]
fn assoc_rows_and_failure_reasons() {
    let f = Fixture::new(120, false);
    let out = f.assoc("cm.tsv", &["--method", "gls"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("null model (gls): eta = "));
    let table = f.read("cm.tsv");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "snp_id\tbeta\tse\teta\tsigma2\tlrt\tp\treason");
    assert_eq!(lines.len(), 41);
    assert_eq!(lines[4], "rs3\tNA\tNA\tNA\tNA\tNA\tNA\tdegenerate predictor");
    assert!(lines[6].starts_with("rs5\t") && lines[6].ends_with("\tok"));
    let ids = column(&table, "snp_id");
    assert_eq!(ids, (0..40).map(|i| format!("rs{i}")).collect::<Vec<_>>());
}

#[test]
fn cm_and_gls_agree_for_small_effects() {
    let f = Fixture::new(150, false);
    assert!(f.assoc("cm.tsv", &["--method", "cm"]).status.success());
    assert!(f.assoc("gls.tsv", &["--method", "gls"]).status.success());
    let p = |name| -> Vec<f64> {
        column(&f.read(name), "p")
            .iter()
            .filter(|v| *v != "NA")
            .map(|v| v.parse().unwrap())
            .collect()
    };
    let (cm, gls) = (p("cm.tsv"), p("gls.tsv"));
    assert_eq!(cm.len(), 39);
    for (a, b) in cm.iter().zip(&gls) {
        assert!(b >= a, "GLS p-value must not be smaller than CM");
        assert!((a - b).abs() <= 0.1 * a, "{a} vs {b}");
    }
}

#[test]
fn scan_is_identical_across_thread_counts() {
    let f = Fixture::new(100, true);
    let flags = ["--logodds", "--bf", "--method", "cm"];
    let one = f.assoc("t1.tsv", &[&flags[..], &["--threads", "1"]].concat());
    assert!(one.status.success(), "{}", stderr(&one));
    let eight = f.assoc("t8.tsv", &[&flags[..], &["--threads", "8"]].concat());
    assert!(eight.status.success());
    assert_eq!(std::fs::read(f.path("t1.tsv")).unwrap(), std::fs::read(f.path("t8.tsv")).unwrap());
    let table = f.read("t1.tsv");
    assert!(table.starts_with("snp_id\tbeta\tse\teta\tsigma2\tlrt\tp\tgamma\tgamma_se\tlog10_bf\treason\n"));
    assert!(column(&table, "gamma").iter().filter(|g| *g != "NA").count() >= 38);
}

#[test]
fn logodds_requires_binary_trait() {
    let f = Fixture::new(60, false);
    let out = f.assoc("o.tsv", &["--logodds"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bf_reports_prior_provenance() {
    let f = Fixture::new(80, true);
    let out = eigenlmm(&[
        "bf",
        "--decomp",
        s(&f.path("d.bin")),
        "--genotypes",
        s(&f.path("geno.txt")),
        "--phenotype",
        s(&f.path("y.txt")),
        "--out",
        s(&f.path("bf.tsv")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("log-odds prior sd 0.2"));
    let table = f.read("bf.tsv");
    assert_eq!(table.lines().count(), 41);
    assert!(table.lines().nth(1).unwrap().ends_with("\tok"));
}

#[test]
fn bf_matches_assoc_bf_column() {
    let f = Fixture::new(80, true);
    assert!(f.assoc("a.tsv", &["--bf"]).status.success());
    let out = eigenlmm(&[
        "bf",
        "--decomp",
        s(&f.path("d.bin")),
        "--genotypes",
        s(&f.path("geno.txt")),
        "--phenotype",
        s(&f.path("y.txt")),
        "--out",
        s(&f.path("bf.tsv")),
    ]);
    assert!(out.status.success());
    assert_eq!(column(&f.read("a.tsv"), "log10_bf"), column(&f.read("bf.tsv"), "log10_bf"));
}

#[test]
fn gc_identity_and_correction() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    // median 0.3 < 0.4549: lambda < 1, left unchanged
    std::fs::write(&input, "snp_id\tlrt\tp\treason\na\t0.1\t0.75\tok\nb\t0.3\t0.58\tok\nc\t9\t0.0027\tok\nd\tNA\tNA\tdegenerate predictor\n").unwrap();
    let out_path = dir.path().join("out.tsv");
    let out = eigenlmm(&["gc", "--input", s(&input), "--out", s(&out_path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&out_path).unwrap());

    std::fs::write(&input, "snp_id\tlrt\tp\treason\na\t0.9099\t0.34\tok\nb\t4\t0.0455\tok\nc\t0.1\t0.75\tok\nd\tNA\tNA\tx\n").unwrap();
    let out = eigenlmm(&["gc", "--input", s(&input), "--out", s(&out_path)]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lambda: f64 = stdout.trim().split('\t').nth(1).unwrap().parse().unwrap();
    assert!((lambda - 0.9099 / 0.454_936_423_119_572_7).abs() < 1e-12);
    let table = std::fs::read_to_string(&out_path).unwrap();
    let lrt = column(&table, "lrt");
    assert!((lrt[1].parse::<f64>().unwrap() - 4.0 / lambda).abs() < 1e-12);
    assert_eq!(lrt[3], "NA");
    assert_eq!(column(&table, "reason")[3], "x");
}

#[test]
fn qq_emits_points() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    let mut text = String::from("snp_id\tlrt\n");
    for i in 0..100 {
        text.push_str(&format!("s{i}\t{}\n", i as f64 / 10.0));
    }
    std::fs::write(&input, text).unwrap();
    let out_path = dir.path().join("qq.txt");
    let out = eigenlmm(&["qq", "--input", s(&input), "--max-points", "20", "--out", s(&out_path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<String> = std::fs::read_to_string(&out_path).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(lines[0], "expected\tobserved");
    assert_eq!(lines.len(), 21);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = eigenlmm(&[
            "simulate",
            "heritability",
            "--n",
            "60",
            "--eta",
            "0.5",
            "--replicates",
            "10",
            "--seed",
            "7",
            "--out",
            s(&out_dir),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["kinship.bin", "decomp.bin", "phenotypes.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let out = eigenlmm(&[
        "bf",
        "--decomp",
        s(&a.join("decomp.bin")),
        "--phenotype",
        s(&a.join("phenotypes.txt")),
        "--heritability",
        "--out",
        s(&a.join("h2.tsv")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(a.join("h2.tsv")).unwrap().lines().count(), 11);
}

#[test]
fn simulate_other_studies() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, extra) in [
        ("family", vec!["--replicates", "3"]),
        ("psd", vec!["--n", "20", "--replicates", "2"]),
        ("casecontrol", vec!["--n", "200", "--snps", "5"]),
    ] {
        let out_dir = dir.path().join(kind);
        let mut args = vec!["simulate", kind, "--out", s(&out_dir)];
        args.extend(extra);
        let out = eigenlmm(&args);
        assert!(out.status.success(), "{kind}: {}", stderr(&out));
    }
    let (ids, rows) = io::read_genotypes(dir.path().join("family/genotypes.txt")).unwrap();
    assert_eq!((ids.len(), rows[0].len()), (3, 150));
    assert_eq!(io::read_phenotype(dir.path().join("casecontrol/phenotype.txt")).unwrap().len(), 200);
    assert_eq!(io::read_relatedness_cache(dir.path().join("psd/kinship.bin")).unwrap().n(), 20);
}

#[test]
fn scan_with_kinship_from_the_tested_snps() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    let sim = p("cc");
    let out = eigenlmm(&["simulate", "casecontrol", "--n", "300", "--snps", "200", "--out", s(&sim)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let geno = sim.join("genotypes.txt");
    for args in [
        vec!["kinship", "--genotypes", s(&geno), "--out", s(&p("k.bin"))],
        vec!["decompose", "--kinship", s(&p("k.bin")), "--out", s(&p("d.bin"))],
        vec![
            "assoc",
            "--decomp",
            s(&p("d.bin")),
            "--genotypes",
            s(&geno),
            "--phenotype",
            s(&sim.join("phenotype.txt")),
            "--out",
            s(&p("res.tsv")),
        ],
    ] {
        let out = eigenlmm(&args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let table = std::fs::read_to_string(p("res.tsv")).unwrap();
    let reasons = column(&table, "reason");
    assert_eq!(reasons.len(), 200);
    assert!(reasons.iter().all(|r| r == "ok"), "{:?}", reasons.iter().filter(|r| *r != "ok").collect::<Vec<_>>());
}
