use advmakeup::autograd::Tensor;
use advmakeup_web_demo::{diversity_strip, makeup_transfer_strip, noise_quality_of, strip};

#[test]
fn strip_lays_panels_side_by_side() {
    let a = Tensor::full(&[3, 2, 2], -1.0);
    let b = Tensor::full(&[3, 2, 2], 1.0);
    let rgba = strip(&[&a, &b]);
    assert_eq!(rgba.len(), 4 * 4 * 2);
    // row 0: two black pixels then two white ones, all opaque
    assert_eq!(&rgba[..8], &[0, 0, 0, 255, 0, 0, 0, 255]);
    assert_eq!(&rgba[8..16], &[255, 255, 255, 255, 255, 255, 255, 255]);
}

#[test]
fn makeup_transfer_has_three_panels_and_changes_the_face() {
    let r = 32;
    let rgba = makeup_transfer_strip(1, 2, r, 0).unwrap();
    assert_eq!(rgba.len(), 4 * 3 * r as usize * r as usize);
    let panel = |k: usize| -> Vec<u8> {
        (0..r as usize)
            .flat_map(|y| {
                let start = 4 * (y * 3 * r as usize + k * r as usize);
                rgba[start..start + 4 * r as usize].to_vec()
            })
            .collect()
    };
    assert_ne!(panel(0), panel(2));
    assert_eq!(rgba, makeup_transfer_strip(1, 2, r, 0).unwrap());
}

#[test]
fn diversity_at_p_zero_is_the_identity() {
    let rgba = diversity_strip(3, 16, 0.0, 0.5, 0.3, 9).unwrap();
    let row = 4 * 16;
    for y in 0..16 {
        let line = &rgba[y * 2 * row..(y + 1) * 2 * row];
        assert_eq!(line[..row], line[row..]);
    }
    assert!(diversity_strip(3, 16, 1.5, 0.5, 0.1, 0).is_err());
}

#[test]
fn quality_falls_as_noise_grows() {
    let clean = noise_quality_of(4, 32, 0.0, 1).unwrap();
    assert_eq!(clean.psnr(), 100.0);
    assert!((clean.ssim() - 1.0).abs() < 1e-9);
    let mild = noise_quality_of(4, 32, 0.05, 1).unwrap();
    let heavy = noise_quality_of(4, 32, 0.4, 1).unwrap();
    assert!(mild.psnr() > heavy.psnr());
    assert!(mild.ssim() > heavy.ssim());
    assert_eq!(heavy.rgba().len(), 4 * 2 * 32 * 32);
}

#[test]
fn out_of_range_resolution_is_rejected() {
    assert!(makeup_transfer_strip(1, 2, 8, 0).is_err());
    assert!(noise_quality_of(1, 512, 0.1, 0).is_err());
    assert!(noise_quality_of(1, 32, -0.1, 0).is_err());
}
