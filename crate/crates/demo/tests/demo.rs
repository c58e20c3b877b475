use iterseg_demo::{bundled_model, Demo, DemoError};

#[test]
fn bundled_model_matches_the_demo_phantoms() {
    let model = bundled_model().unwrap();
    assert_eq!(model.net.config().num_actions, model.actions.len());
    let demo = Demo::new(0).unwrap();
    assert_eq!(demo.dims(), (24, 24, 12));
    assert_eq!(demo.steps(), 0);
    assert_eq!(demo.dice().unwrap(), 0.0);
}

#[test]
fn same_seed_same_phantom() {
    let a = Demo::new(5).unwrap();
    let b = Demo::new(5).unwrap();
    let c = Demo::new(6).unwrap();
    assert_eq!(a.render(6).unwrap(), b.render(6).unwrap());
    assert_ne!(a.render(6).unwrap(), c.render(6).unwrap());
}

#[test]
fn render_is_opaque_rgba_of_one_slice() {
    let demo = Demo::new(1).unwrap();
    let px = demo.render(0).unwrap();
    assert_eq!(px.len(), 24 * 24 * 4);
    assert!(px.chunks(4).all(|p| p[3] == 255));
    assert!(matches!(demo.render(12), Err(DemoError::Slice(12))));
}

#[test]
fn clicks_show_up_on_their_slice_only() {
    let mut demo = Demo::new(2).unwrap();
    assert!(demo.click(3, 4, 5, true).unwrap());
    assert!(!demo.click(3, 4, 5, true).unwrap());
    assert!(demo.click(0, 0, 5, false).unwrap());
    let px = demo.render(5).unwrap();
    let at = |x: usize, y: usize| &px[(y * 24 + x) * 4..(y * 24 + x) * 4 + 3];
    assert_eq!(at(3, 4), [0, 230, 0]);
    assert_eq!(at(0, 0), [40, 120, 255]);
    let other = demo.render(4).unwrap();
    assert_ne!(&other[(4 * 24 + 3) * 4..(4 * 24 + 3) * 4 + 3], [0, 230, 0]);
    assert!(demo.click(24, 0, 0, true).is_err());
}

#[test]
fn refining_with_a_click_in_the_object_raises_dice() {
    let mut demo = Demo::new(3).unwrap();
    let truth = demo.truth();
    let d = truth.dims();
    let inside: Vec<(usize, usize, usize)> = (0..d.len())
        .filter(|&i| truth.data()[i] > 0.5)
        .map(|i| (i % d.nx, (i / d.nx) % d.ny, i / (d.nx * d.ny)))
        .collect();
    let n = inside.len();
    assert!(n > 0);
    let mean = |f: fn(&(usize, usize, usize)) -> usize| inside.iter().map(f).sum::<usize>() / n;
    let centroid = (mean(|p| p.0), mean(|p| p.1), mean(|p| p.2));
    let (x, y, z) = *inside
        .iter()
        .min_by_key(|p| p.0.abs_diff(centroid.0) + p.1.abs_diff(centroid.1) + p.2.abs_diff(centroid.2))
        .unwrap();
    demo.click(x, y, z, true).unwrap();
    let mut dice = 0.0;
    for step in 1..=3 {
        dice = demo.refine().unwrap();
        assert_eq!(demo.steps(), step);
        assert_eq!(dice, demo.dice().unwrap());
    }
    assert!(dice > 0.0, "dice {dice}");
}
