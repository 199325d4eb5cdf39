//! Prints the coarse patch centroids and fine sub-patch centroids of a small
//! frame layout.
//!
//! cargo run --release --example sampling -- [H] [D] [M] [K]

use polyvid::sampling::{build_grid, coarse_coords, fine_coords, PatchSpec};

fn main() -> polyvid::Result<()> {
    let a: Vec<usize> = std::env::args().skip(1).map(|s| s.parse().expect("integer")).collect();
    let (h, d, m, k) = match a.as_slice() {
        [h, d, m, k] => (*h, *d, *m, *k),
        _ => (8, 8, 2, 2),
    };
    let spec = PatchSpec::new(1, h, d, (m, m), (k, k))?;
    let grid = build_grid(h, d)?;
    let coarse = coarse_coords(&spec, &grid)?;
    for i in 0..m {
        for j in 0..m {
            let c = coarse[i * m + j].0;
            println!("patch ({i},{j}) centroid ({:.4}, {:.4})", c[0], c[1]);
            for (n, f) in fine_coords(&spec, &grid, i, j)?.coords.iter().enumerate() {
                println!("    sub-patch ({},{}) ({:.4}, {:.4})", n / k, n % k, f[0], f[1]);
            }
        }
    }
    Ok(())
}
