//! Writes a grid of synthetic faces (rows: identities, columns: samples,
//! bare then made-up) to the given PNG path.

use advmakeup::data::{synth_face, StyleDomain};
use image::{imageops, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "gallery.png".into());
    let res: u32 = args
        .next()
        .map(|s| s.parse().expect("resolution"))
        .unwrap_or(64);
    let (ids, per) = (6u32, 4u32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut grid = RgbImage::new(res * per * 2, res * ids);
    for id in 0..ids {
        for (d, domain) in [StyleDomain::Source, StyleDomain::Reference]
            .into_iter()
            .enumerate()
        {
            for k in 0..per {
                let (face, _) = synth_face(id as usize, domain, res as usize, &mut rng);
                let x = (d as u32 * per + k) * res;
                imageops::replace(&mut grid, &face.to_rgb8(), x as i64, (id * res) as i64);
            }
        }
    }
    grid.save(&out).expect("write gallery");
}
