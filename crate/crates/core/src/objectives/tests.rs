use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn view(target: Image, labels: Vec<u8>, is_input: bool) -> SupervisionView {
    let (w, h) = (target.width, target.height);
    let parts = PartMaskSet {
        width: w,
        height: h,
        depth: vec![0.0; w * h],
        labels,
    };
    SupervisionView {
        mask: parts.foreground(),
        target,
        parts,
        is_input,
    }
}

fn render(color: Image, alpha: Vec<f64>) -> RenderOutput {
    RenderOutput { color, alpha }
}

fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(1..=NUM_PARTS)).collect()
}

#[test]
fn single_level_single_full_part_is_plain_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (rand_image(&mut rng, 16, 12), rand_image(&mut rng, 16, 12));
    let sup = SupervisionSet {
        levels: vec![vec![view(a.clone(), vec![1; 192], false)]],
    };
    let r = vec![vec![render(b.clone(), vec![1.0; 192])]];
    let mut w = LossWeights {
        levels: vec![1.0],
        parts: vec![1.0],
        perceptual: 0.0,
        ..Default::default()
    };
    let (l, _) = hierarchical_loss(&sup, &r, &w).unwrap();
    assert!((l - mse(&a, &b)).abs() <= 1e-9);
    w.perceptual = 0.7;
    let (l, _) = hierarchical_loss(&sup, &r, &w).unwrap();
    assert!((l - mse(&a, &b) - 0.7 * perceptual_proxy(&a, &b)).abs() <= 1e-9);
}

#[test]
fn perfect_reconstruction_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_image(&mut rng, 8, 8);
    let labels = random_labels(&mut rng, 64);
    let sup = SupervisionSet {
        levels: vec![vec![view(a.clone(), labels, true)], vec![]],
    };
    let r = vec![vec![render(a.clone(), sup.levels[0][0].mask.clone())], vec![]];
    let out = total_loss(&sup, &r, &LossWeights::default()).unwrap();
    assert_eq!(out.total, 0.0);
    assert!(out.grads[0][0].color.iter().all(|g| *g == 0.0));
}

#[test]
fn doubling_head_weight_doubles_head_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sup = SupervisionSet {
        levels: vec![vec![view(rand_image(&mut rng, 10, 10), random_labels(&mut rng, 100), false)]],
    };
    let r = vec![vec![render(rand_image(&mut rng, 10, 10), vec![1.0; 100])]];
    let with = |head: f64| {
        let mut w = LossWeights::default();
        w.levels = vec![1.0];
        w.parts[15] = head;
        hierarchical_loss(&sup, &r, &w).unwrap().0
    };
    let mut only_head = LossWeights::default();
    only_head.levels = vec![1.0];
    for (k, p) in only_head.parts.iter_mut().enumerate() {
        *p = if k == 15 { 1.0 } else { 0.0 };
    }
    let head_term = hierarchical_loss(&sup, &r, &only_head).unwrap().0;
    assert!(head_term > 0.0);
    assert!((with(4.0) - with(2.0) - 2.0 * head_term).abs() < 1e-12);
    assert!((with(2.0) - with(0.0) - 2.0 * head_term).abs() < 1e-12);
}

#[test]
fn part_mse_decomposes_whole_image_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = (14, 9);
    let labels = random_labels(&mut rng, w * h);
    let (a, b) = (rand_image(&mut rng, w, h), rand_image(&mut rng, w, h));
    let whole = mse(&a, &b) * (w * h) as f64;
    let mut sum = 0.0;
    for j in 1..=NUM_PARTS {
        let mask: Vec<f64> = labels.iter().map(|&l| (l == j) as u8 as f64).collect();
        let count: f64 = mask.iter().sum();
        let mut g = vec![0.0; w * h * 3];
        sum += part_term(&a, &b, &mask, 0.0, 1.0, &mut g) * count;
    }
    assert!((sum - whole).abs() < 1e-6);
}

#[test]
fn inverted_mask_costs_one() {
    let (w, h) = (8, 4);
    let img = Image::filled(w, h, [0.3; 3]);
    let labels: Vec<u8> = (0..w * h).map(|i| if i % w < w / 2 { 1 } else { 0 }).collect();
    let sup = SupervisionSet {
        levels: vec![vec![view(img.clone(), labels, false)]],
    };
    let inv: Vec<f64> = sup.levels[0][0].mask.iter().map(|m| 1.0 - m).collect();
    let r = vec![vec![render(img, inv)]];
    let lw = LossWeights {
        perceptual: 0.0,
        mask: 1.0,
        ..Default::default()
    };
    let (l, _) = reconstruction_loss(&sup, &r, &lw).unwrap();
    assert_eq!(l, 1.0);
}

#[test]
fn input_weight_equals_duplicated_view() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v0 = view(rand_image(&mut rng, 8, 8), random_labels(&mut rng, 64), true);
    let v1 = view(rand_image(&mut rng, 8, 8), random_labels(&mut rng, 64), false);
    let r0 = render(rand_image(&mut rng, 8, 8), (0..64).map(|_| rng.random_range(0.0..1.0)).collect());
    let r1 = render(rand_image(&mut rng, 8, 8), (0..64).map(|_| rng.random_range(0.0..1.0)).collect());
    let weighted = SupervisionSet {
        levels: vec![vec![v0.clone(), v1.clone()]],
    };
    let lw = LossWeights {
        input_weight: 2.0,
        ..Default::default()
    };
    let (a, _) = reconstruction_loss(&weighted, &[vec![r0.clone(), r1.clone()]], &lw).unwrap();
    let mut dup0 = v0.clone();
    dup0.is_input = false;
    let duplicated = SupervisionSet {
        levels: vec![vec![dup0.clone(), dup0, v1]],
    };
    let (b, _) = reconstruction_loss(&duplicated, &[vec![r0.clone(), r0, r1]], &LossWeights::default()).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn total_equals_hierarchical_when_reconstruction_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = rand_image(&mut rng, 8, 8);
    let mut b = a.clone();
    let labels = random_labels(&mut rng, 64);
    for (i, l) in labels.iter().enumerate() {
        if *l == 16 {
            b.data[i * 3] = 1.0 - b.data[i * 3];
        }
    }
    let mut sup = SupervisionSet {
        levels: vec![vec![view(a, labels, false)]],
    };
    let r = vec![vec![render(b.clone(), sup.levels[0][0].mask.clone())]];
    sup.levels[0][0].target = b;
    let lw = LossWeights {
        mask: 0.0,
        ..Default::default()
    };
    let (h, _) = hierarchical_loss(&sup, &r, &lw).unwrap();
    let out = total_loss(&sup, &r, &lw).unwrap();
    assert_eq!(out.reconstruction, 0.0);
    assert_eq!(out.total, h);
}

#[test]
fn mismatched_levels_rejected() {
    let sup = SupervisionSet { levels: vec![vec![]] };
    let e = hierarchical_loss(&sup, &[], &LossWeights::default()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn default_part_weights_emphasize_head_and_arms() {
    let w = LossWeights::default();
    assert_eq!(w.parts.len(), 24);
    assert_eq!(w.parts[15], 2.0);
    assert_eq!(w.parts[23], 2.0);
    assert_eq!(w.parts[0], 1.0);
    assert_eq!(w.parts[14], 1.0);
}
