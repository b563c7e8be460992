//! Compares the two colour recovery modes on one pixel and on a gray patch.

use lanet::imaging::{ImagePlane, PlaneKind};
use lanet::model::color_recover;
use lanet::tensor::ColorMode;

fn main() -> lanet::Result<()> {
    let enhanced = ImagePlane::new(1, 1, 3, vec![0.6, 0.5, 0.2], PlaneKind::Ldr)?;
    let low = ImagePlane::new(1, 1, 3, vec![0.10, 0.15, 0.05], PlaneKind::Ldr)?;
    for mode in [ColorMode::LiteralEq5, ColorMode::InputColor] {
        let out = color_recover(&enhanced, &low, mode)?;
        let d = out.data();
        println!("{mode:?}: rgb = [{:.4}, {:.4}, {:.4}], r/g = {:.4}", d[0], d[1], d[2], d[0] / d[1]);
    }
    println!("enhanced r/g = {:.4}, low r/g = {:.4}", 0.6 / 0.5, 0.10 / 0.15);

    // On gray inputs the modes differ by a factor e/g.
    let (e, g) = (0.6, 0.2);
    let enh = ImagePlane::filled(2, 2, 3, e, PlaneKind::Ldr);
    let gray = ImagePlane::filled(2, 2, 3, g, PlaneKind::Ldr);
    let literal = color_recover(&enh, &gray, ColorMode::LiteralEq5)?.get(0, 0, 0);
    let input = color_recover(&enh, &gray, ColorMode::InputColor)?.get(0, 0, 0);
    println!("gray e={e}, g={g}: literal {literal:.4} (e²/g = {:.4}), input-colour {input:.4}", e * e / g);
    Ok(())
}
