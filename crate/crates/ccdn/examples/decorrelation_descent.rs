//! Gradient descent on the cross-semantic loss alone. Features start
//! clustered around one shared direction per block, so the correlation
//! matrix begins nearly all-ones; the descent drives the off-diagonal down
//! while the diagonal stays put.

fn main() {
    let (d, p, b, lr) = (8, 4, 4, 0.5);
    println!("d {d}, {p} blocks, batch {b}, lr {lr}\n");
    println!("{:>5}  {:>16}  {:>13}", "steps", "mean |off-diag|", "mean diagonal");
    for steps in [0usize, 25, 100, 250, 500] {
        let (off, diag) = ccdn::cocs::decorrelation_descent(7, d, p, b, steps, lr)
            .expect("descent failed");
        println!("{steps:>5}  {off:>16.4}  {diag:>13.4}");
    }
}
