//! Runs one scan block on a short sequence and shows that a key the mask
//! blocks has no influence on the query, while an allowed key does.

use scanssc::autodiff::{ParamSet, Tape};
use scanssc::masks::build_depth_mask;
use scanssc::scan::{scan_block, ScanBlockParams};
use scanssc::Tensor;
use rand::SeedableRng;

fn run(ps: &ParamSet, p: &ScanBlockParams, x: &Tensor, l: usize) -> scanssc::Result<Tensor> {
    let mask = build_depth_mask(l, 0.0)?;
    let mut tape = Tape::new();
    let bound = ps.bind_constant(&mut tape);
    let xv = tape.constant(x.clone());
    let y = scan_block(&mut tape, &bound, xv, &mask, p, 2, 1e-5)?;
    Ok(tape.value(y).clone())
}

fn main() -> scanssc::Result<()> {
    let (l, c) = (6, 8);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::new();
    let p = ScanBlockParams::init(&mut ps, "block", c, 4 * c, 1.0, &mut rng);
    let x = Tensor::random_uniform(&[1, l, c], -1.0, 1.0, &mut rng);
    let base = run(&ps, &p, &x, l)?;

    let query = 2;
    println!("depth mask, L = {l}; query {query} sees keys 0..={query}");
    for key in 0..l {
        let mut xp = x.clone();
        for ch in 0..c {
            let v = xp.get(&[0, key, ch]);
            xp.set(&[0, key, ch], v + 0.5 * (ch as f64 - 3.5));
        }
        let y = run(&ps, &p, &xp, l)?;
        let change = (0..c)
            .map(|ch| (y.get(&[0, query, ch]) - base.get(&[0, query, ch])).abs())
            .fold(0.0, f64::max);
        println!("perturb key {key}: query output moves by {change:.3e}");
    }
    Ok(())
}
