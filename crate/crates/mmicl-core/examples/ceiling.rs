// temporary: measures the codebook round-trip MIoU ceiling on val masks
use mmicl_core::eval::mask_iou;
use mmicl_core::image::Mask;
use mmicl_core::quantizers::codebook::{dequantize_image, image_patches, quantize_image, train_codebook};
use mmicl_core::synthdata::{DataConfig, Dataset, Split};
use mmicl_core::vocab::Vocabulary;

fn main() {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let dataset = Dataset::generate(DataConfig { train_scenes: 400, val_scenes: 100, width: 32, height: 32, seed: 0 });
    let mut patches = Vec::new();
    for sid in dataset.split_ids(Split::Train) {
        patches.extend(image_patches(&dataset.scenes[sid].image, 4).unwrap());
        for obj in &dataset.scenes[sid].objects {
            patches.extend(image_patches(&obj.mask.to_image(), 4).unwrap());
        }
    }
    let cb = train_codebook(&patches, 4, k, 20, 13).unwrap();
    let vocab = Vocabulary::standard(10, cb.len()).unwrap();
    let mut total = 0.0; let mut n = 0;
    for sid in dataset.split_ids(Split::Val) {
        for obj in &dataset.scenes[sid].objects {
            let toks = quantize_image(&obj.mask.to_image(), &cb, &vocab).unwrap();
            let img = dequantize_image(&toks, &cb, &vocab, 32, 32).unwrap();
            let rt = Mask::from_image_midgray(&img);
            total += mask_iou(&rt, &obj.mask).unwrap();
            n += 1;
        }
    }
    println!("K={k}: oracle MIoU over {n} val masks = {:.4}", total / n as f64);
}
