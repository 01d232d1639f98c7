use segsolve::presets::junction_field;
use segsolve::{build_grid, extract_interfaces, Field, GridSpec, State};
use segsolve_cli::render::{render_image, Image, BACKGROUND, OUTSIDE};

fn label_fractions(img: &Image, k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    let mut total = 0;
    for y in 0..img.height {
        for x in 0..img.width {
            if img.pixel(x, y) == OUTSIDE {
                continue;
            }
            total += 1;
            if let Some(l) = img.label_of(x, y) {
                counts[l] += 1;
            }
        }
    }
    counts.iter().map(|c| *c as f64 / total as f64).collect()
}

#[test]
fn two_phase_splits_in_half() {
    let g = build_grid(&GridSpec::unit_square(65)).unwrap();
    let s = State::new(vec![
        Field::from_fn(&g, |x, _| (x - 0.5).max(0.0)),
        Field::from_fn(&g, |x, _| (0.5 - x).max(0.0)),
    ])
    .unwrap();
    let rep = extract_interfaces(&g, &s, 1e-12).unwrap();
    let img = Image::from_ppm(&render_image(&g, &s, Some(&rep)).to_ppm()).unwrap();
    for f in label_fractions(&img, 2) {
        assert!((f - 0.5).abs() <= 0.02, "{f}");
    }
    // density 2 on the left
    assert_eq!(img.label_of(2, img.height / 3), Some(1));
    assert_eq!(img.label_of(img.width - 3, img.height / 3), Some(0));
}

#[test]
fn triple_junction_has_three_equal_sectors() {
    let g = build_grid(&GridSpec::disk(129, [0.0, 0.0], 1.0)).unwrap();
    let s = junction_field(&g, 3, [0.0, 0.0], 0.0);
    let img = render_image(&g, &s, None);
    for f in label_fractions(&img, 3) {
        assert!((f - 1.0 / 3.0).abs() <= 0.03, "{f}");
    }
}

#[test]
fn zero_state_is_uniform_background() {
    let g = build_grid(&GridSpec::unit_square(17)).unwrap();
    let img = render_image(&g, &State::zeros(&g, 2), None);
    assert!(img.rgb.chunks(3).all(|p| p == BACKGROUND));
    let bytes = img.to_ppm();
    assert!(bytes.starts_with(b"P6\n68 68\n255\n"));
    assert_eq!(bytes.len(), 13 + 3 * 68 * 68);
}
