//! Pixel accuracy, Dice and mean IoU from confusion counts, with micro and
//! macro averaging over images.
//!
//! cargo run --example segmentation_metrics

use ftseg::metrics::{confusion, dice, foreground_iou, miou, pixel_accuracy, report, Averaging};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a 2x2 image: one true positive, one false positive, two true negatives
    let c = confusion(&[1, 1, 0, 0], &[1, 0, 0, 0])?;
    println!("{c:?}");
    println!(
        "pa {:.4} dice {:.4} fg iou {:.4} miou {:.4}",
        pixel_accuracy(&c)?,
        dice(&c),
        foreground_iou(&c),
        miou(&c)
    );

    // empty prediction against empty ground truth scores 1
    let empty = confusion(&[0; 16], &[0; 16])?;
    println!("empty vs empty: dice {} miou {}", dice(&empty), miou(&empty));

    // a small perfect object and a large half-missed one
    let small = confusion(&[1, 0, 0, 0, 0, 0, 0, 0], &[1, 0, 0, 0, 0, 0, 0, 0])?;
    let large = confusion(&[1, 1, 0, 0, 0, 0, 0, 0], &[1, 1, 1, 1, 0, 0, 0, 0])?;
    for averaging in [Averaging::Micro, Averaging::Macro] {
        let r = report(&[small, large], averaging)?;
        println!("{averaging:?}: pa {:.4} dice {:.4} miou {:.4}", r.pa, r.dice, r.miou);
    }
    Ok(())
}
