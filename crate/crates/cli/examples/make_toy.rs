//! Writes the bundled toy inputs under the given directory (default
//! `data/toy`): a synthetic wild type, alignment, training corpus,
//! mutant list, two assays and their reference table.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tranception_core::seq::{write_fasta, STANDARD_AMINO_ACIDS};
use tranception_core::synthetic::SiteLandscape;

const LEN: usize = 30;
const SEED: u64 = 7;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    fs::create_dir_all(dir.join("assays"))?;
    let land = SiteLandscape::random(LEN, 1.25, SEED);
    let wt = land.wild_type();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut fasta = Vec::new();
    write_fasta(&mut fasta, &[wt.clone()], 60)?;
    fs::write(dir.join("wt.fasta"), fasta)?;

    let mut corpus = Vec::new();
    write_fasta(&mut corpus, &land.sample(2000, SEED + 1), 60)?;
    fs::write(dir.join("corpus.fasta"), corpus)?;

    // Alignment rows with scattered gaps and the odd insertion.
    let mut a2m = String::new();
    for (i, line) in land.sample_a2m(300, SEED + 2).lines().enumerate() {
        if line.starts_with('>') || i < 2 {
            let _ = writeln!(a2m, "{line}");
            continue;
        }
        let mut row = String::new();
        for c in line.chars() {
            row.push(if rng.gen_bool(0.05) { '-' } else { c });
            if rng.gen_bool(0.01) {
                row.push(STANDARD_AMINO_ACIDS[rng.gen_range(0..20)].to_ascii_lowercase() as char);
            }
        }
        let _ = writeln!(a2m, "{row}");
    }
    fs::write(dir.join("msa.a2m"), a2m)?;

    let residues = wt.residues();
    let mut singles = Vec::new();
    for (i, &r) in residues.iter().enumerate() {
        for &a in STANDARD_AMINO_ACIDS.iter().filter(|&&a| a != r) {
            singles.push((format!("{}{}{}", r as char, i + 1, a as char), land.log_ratio(i, r, a)));
        }
    }
    let mut doubles = Vec::new();
    while doubles.len() < 40 {
        let (i, j) = (rng.gen_range(0..LEN), rng.gen_range(0..LEN));
        if i >= j {
            continue;
        }
        let (a, b) = (STANDARD_AMINO_ACIDS[rng.gen_range(0..20)], STANDARD_AMINO_ACIDS[rng.gen_range(0..20)]);
        if a == residues[i] || b == residues[j] {
            continue;
        }
        let code = format!("{}{}{}:{}{}{}", residues[i] as char, i + 1, a as char, residues[j] as char, j + 1, b as char);
        if doubles.iter().any(|(c, _)| c == &code) {
            continue;
        }
        doubles.push((code, land.log_ratio(i, residues[i], a) + land.log_ratio(j, residues[j], b)));
    }

    let mut mutants = String::from("mutant\n");
    for (c, _) in singles.iter().chain(&doubles) {
        let _ = writeln!(mutants, "{c}");
    }
    let _ = writeln!(mutants, "del12-13\nins20:GS\n{}5{}:del9-9", residues[4] as char, STANDARD_AMINO_ACIDS[0] as char);
    fs::write(dir.join("mutants.csv"), mutants)?;

    // Assay A: singles and doubles; assay B: singles only, noisier.
    let write_assay = |name: &str, rows: &[(String, f64)], sd: f64, seed: u64, extras: bool| -> std::io::Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).expect("valid sd");
        let mut s = String::from("mutant,DMS_score,note\n");
        for (c, t) in rows {
            let _ = writeln!(s, "{c},{:.6},", t + noise.sample(&mut rng));
        }
        if extras {
            let (c, t) = &rows[0];
            let _ = writeln!(s, "{c},{:.6},replicate", t + noise.sample(&mut rng));
            let _ = writeln!(s, "{}1{},0.0,silent", residues[0] as char, residues[0] as char);
            let _ = writeln!(s, "{},,missing", rows[1].0);
            let _ = writeln!(s, "Z99Q,1.0,unparseable");
        }
        fs::write(dir.join("assays").join(format!("{name}.csv")), s)
    };
    let all: Vec<(String, f64)> = singles.iter().chain(&doubles).cloned().collect();
    write_assay("TOY1_A", &all, 0.3, SEED + 3, true)?;
    write_assay("TOY1_B", &singles, 0.8, SEED + 4, false)?;

    let reference = format!(
        "assay_id,uniprot_id,cutoff,cutoff_method,msa_depth_bucket,mutation_depth_bucket,taxon,target_seq\n\
         TOY1_A,TOY1_SYNTH,,median,Medium,Multiple,Synthetic,{wt}\n\
         TOY1_B,TOY1_SYNTH,-2.0,manual,Medium,Single,Synthetic,{wt}\n",
        wt = wt.as_str()
    );
    fs::write(dir.join("reference.csv"), reference)?;

    fs::write(
        dir.join("train.toml"),
        "[model]\nn_layers = 1\nn_heads = 4\nd_model = 32\nd_ff = 64\nmax_context = 32\nseed = 7\n\n\
         [train]\nsteps = 300\nbatch_size = 16\npeak_lr = 0.003\nwarmup_steps = 50\nseed = 7\nvalidation_fraction = 0.01\n",
    )?;
    Ok(())
}
