//! Print prevalence and treatment statistics for a random experiment-scale cohort.

use deltaguide::synth::{random_structure, simulate_cohort, RandomStructureParams, SimulationConfig};

fn main() -> deltaguide::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let structure = random_structure(&RandomStructureParams { seed, ..Default::default() })?;
    let cohort = simulate_cohort(&structure, &SimulationConfig { n_patients: n, rng_seed: seed, ..Default::default() })?;
    let t_last = cohort.n_windows - 1;
    let n_d = structure.diseases.len();
    println!("observed fraction {:.4}", cohort.observed_fraction());
    for (d, disease) in structure.diseases.iter().enumerate() {
        let diag = cohort.patients.iter().filter(|p| p.dx[t_last][d]).count();
        let lines: Vec<usize> = (0..disease.lines.len())
            .map(|k| cohort.patients.iter().filter(|p| p.meds[t_last].get(structure.digit(d, k))).count())
            .collect();
        println!("{} parents {:?} dx {:.3} lines {:?}", disease.id, disease.parents, diag as f64 / n as f64, lines);
    }
    let anchor = t_last - 5;
    for (o, outcome) in structure.outcomes.iter().enumerate() {
        let code = n_d + o;
        let end = cohort.patients.iter().filter(|p| p.dx[t_last][code]).count();
        let eligible: Vec<_> = cohort.patients.iter().filter(|p| !p.dx[anchor][code]).collect();
        let pos = eligible.iter().filter(|p| p.dx[t_last][code]).count();
        println!(
            "{} parents {:?} prevalence {:.3} eligible {} positives {} ({:.3})",
            outcome.id, outcome.parents, end as f64 / n as f64, eligible.len(), pos, pos as f64 / eligible.len() as f64
        );
    }
    let mut combos = std::collections::HashMap::new();
    let mut additions = 0;
    for p in &cohort.patients {
        for t in 0..cohort.n_windows {
            *combos.entry(p.meds[t].clone()).or_insert(0usize) += 1;
            if t > 0 && p.meds[t] != p.meds[t - 1] {
                additions += 1;
            }
        }
    }
    println!("distinct combinations {} additions {}", combos.len(), additions);
    Ok(())
}
