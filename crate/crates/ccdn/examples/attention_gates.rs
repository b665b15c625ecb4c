//! Runs one cross-order attention site on a random feature map and shows how
//! each excitation block gates the channels differently.

use ccdn::ctm::{ctm_forward, ExcitationBank};
use ccdn::params::ParamStore;
use ccdn::tape::Tape;
use ccdn::tensor::Tensor;
use rand::Rng;

fn main() {
    let (b, d, s, p) = (2usize, 8usize, 6usize, 4usize);
    let mut rng = ccdn::rng::stream(3, "gates-demo");

    let mut store = ParamStore::new();
    let bank = ExcitationBank::create(&mut store, &mut rng, "site", d, p, true)
        .expect("bank creation failed");

    let data: Vec<f64> = (0..b * d * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
    let tape = Tape::new();
    let bound = store.bind_frozen(&tape);
    let x = tape.constant(Tensor::new(&[b, d, s, s], data).unwrap());

    let out = ctm_forward(&tape, x, &bank.bind(&bound), 5).expect("forward failed");

    let k1 = tape.value(out.descriptor.first_order);
    println!("first-order descriptor (item 0):  {}", fmt_row(&k1.data()[..d]));
    if let Some(k2) = out.descriptor.second_order {
        let k2 = tape.value(k2);
        println!("second-order descriptor (item 0): {}", fmt_row(&k2.data()[..d]));
    }

    println!("\nper-excitation gated maps ({p} blocks share the two descriptors):");
    let x_mean = mean(tape.value(x).data());
    for (i, &m) in out.maps.iter().enumerate() {
        let v = tape.value(m);
        println!(
            "  block {i}: mean {:.4}  min {:.4}  max {:.4}",
            mean(v.data()),
            v.data().iter().cloned().fold(f64::INFINITY, f64::min),
            v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
    }
    println!("  input:   mean {x_mean:.4}  (gates shrink channels they down-weight)");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt_row(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:6.3}")).collect::<Vec<_>>().join(" ")
}
