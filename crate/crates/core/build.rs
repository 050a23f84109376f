//! Generates the G(3,0,1) product tables at build time.
//!
//! Blades are written as strictly increasing index lists over the generators
//! e0..e3. A product is formed by concatenating the index lists, bubble-sorting
//! while counting adjacent swaps, then contracting repeated generators with the
//! metric (e0^2 = 0, e1^2 = e2^2 = e3^2 = 1).

use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const BASIS: [&[u8]; 16] = [
    &[],
    &[0],
    &[1],
    &[2],
    &[3],
    &[0, 1],
    &[0, 2],
    &[0, 3],
    &[1, 2],
    &[1, 3],
    &[2, 3],
    &[0, 1, 2],
    &[0, 1, 3],
    &[0, 2, 3],
    &[1, 2, 3],
    &[0, 1, 2, 3],
];

const METRIC: [i32; 4] = [0, 1, 1, 1];

fn blade_index(indices: &[u8]) -> usize {
    BASIS
        .iter()
        .position(|b| *b == indices)
        .expect("every sorted subset is a basis blade")
}

/// Returns (target blade, sign) or None when the metric annihilates the product.
fn geometric(a: &[u8], b: &[u8]) -> Option<(usize, i32)> {
    let mut list: Vec<u8> = a.iter().chain(b.iter()).copied().collect();
    let mut swaps = 0usize;
    for i in (0..list.len()).rev() {
        for j in 0..i {
            if list[j] > list[j + 1] {
                list.swap(j, j + 1);
                swaps += 1;
            }
        }
    }
    let mut sign = if swaps % 2 == 0 { 1 } else { -1 };
    let mut out = Vec::with_capacity(list.len());
    let mut i = 0;
    while i < list.len() {
        if i + 1 < list.len() && list[i] == list[i + 1] {
            sign *= METRIC[list[i] as usize];
            i += 2;
        } else {
            out.push(list[i]);
            i += 1;
        }
    }
    if sign == 0 {
        None
    } else {
        Some((blade_index(&out), sign))
    }
}

fn main() {
    let mut src = String::new();
    writeln!(src, "// @generated by build.rs; do not edit.").unwrap();

    let mut targets = [[255u8; 16]; 16];
    let mut signs = [[0i8; 16]; 16];
    let mut gp_terms = Vec::new();
    let mut wedge_terms = Vec::new();
    for (i, a) in BASIS.iter().enumerate() {
        for (j, b) in BASIS.iter().enumerate() {
            if let Some((k, s)) = geometric(a, b) {
                targets[i][j] = k as u8;
                signs[i][j] = s as i8;
                gp_terms.push((i, j, k, s));
                let disjoint = a.iter().all(|x| !b.contains(x));
                if disjoint {
                    wedge_terms.push((i, j, k, s));
                }
            } else if a.iter().all(|x| !b.contains(x)) {
                unreachable!("disjoint blades never vanish");
            }
        }
    }

    writeln!(src, "pub(crate) const CAYLEY_TARGET: [[u8; 16]; 16] = {targets:?};").unwrap();
    writeln!(src, "pub(crate) const CAYLEY_SIGN: [[i8; 16]; 16] = {signs:?};").unwrap();

    let fmt_terms = |terms: &[(usize, usize, usize, i32)]| -> String {
        let body: Vec<String> = terms
            .iter()
            .map(|(i, j, k, s)| format!("({i}, {j}, {k}, {s}.0)"))
            .collect();
        format!("[{}]", body.join(", "))
    };
    writeln!(
        src,
        "pub(crate) const GP_TERMS: [(usize, usize, usize, f64); {}] = {};",
        gp_terms.len(),
        fmt_terms(&gp_terms)
    )
    .unwrap();
    writeln!(
        src,
        "pub(crate) const WEDGE_TERMS: [(usize, usize, usize, f64); {}] = {};",
        wedge_terms.len(),
        fmt_terms(&wedge_terms)
    )
    .unwrap();

    // Right complement: blade ^ dual(blade) = +e0123.
    let mut dual = Vec::new();
    for a in BASIS.iter() {
        let comp: Vec<u8> = (0u8..4).filter(|x| !a.contains(x)).collect();
        let (k, s) = geometric(a, &comp).expect("complement is disjoint");
        assert_eq!(k, 15);
        dual.push((blade_index(&comp), s));
    }
    let body: Vec<String> = dual.iter().map(|(k, s)| format!("({k}, {s}.0)")).collect();
    writeln!(
        src,
        "pub(crate) const DUAL: [(usize, f64); 16] = [{}];",
        body.join(", ")
    )
    .unwrap();

    let out = Path::new(&env::var("OUT_DIR").unwrap()).join("cayley.rs");
    fs::write(out, src).unwrap();
    println!("cargo:rerun-if-changed=build.rs");
}
