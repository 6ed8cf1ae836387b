//! Compress, decode and texture a volume through the public API only.

use divc::container::{compress_volume, decompress_volume, rate_report, CompressedVolume};
use divc::nnet::{train, Architecture, Model, TrainConfig, TrainingBlock};
use divc::surface::{error_bound_check, mesh_volume, surface_distance, topology_equal};
use divc::texture::{recompute_uvs, ColorField};
use divc::volume::{extract_occupied_blocks, synth_volume, SceneSpec};

#[test]
fn compress_decode_and_texture() {
    let scene = SceneSpec::named("blend", 160.0, 0).unwrap();
    let volume = synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap();
    let (blocks, _) = extract_occupied_blocks(&volume, 8).unwrap();
    let data: Vec<TrainingBlock> = blocks.iter().map(|b| TrainingBlock::new(b, volume.tau())).collect();

    let mut model = Model::new(Architecture::default(), 1).unwrap();
    let cfg = TrainConfig { steps: 20, seed: 2, ..TrainConfig::default() };
    train(&mut model, &data, &cfg).unwrap();
    let model = Model::from_bytes(&model.to_bytes()).unwrap();

    let c = compress_volume(&volume, &model).unwrap();
    let bytes = c.to_bytes();
    assert_eq!(rate_report(&c).total_bits, 8 * bytes.len() as u64);
    let decoded = decompress_volume(&CompressedVolume::from_bytes(&bytes).unwrap(), &model).unwrap().volume;

    assert_eq!(decoded.inside_mask(), volume.inside_mask());
    let a = mesh_volume(&volume).unwrap();
    let b = mesh_volume(&decoded).unwrap();
    assert!(topology_equal(&a, &b));
    assert!(error_bound_check(&a, &b, 5.0).unwrap() <= 5.0);
    assert!(surface_distance(&a, &b, 2, 0).hausdorff <= 5.0 * 3f64.sqrt());

    let (mesh, atlas) = recompute_uvs(&decoded, 8, 256).unwrap();
    assert_eq!(atlas.uvs.len(), 3 * mesh.triangles.len());
    assert!(atlas.slots_injective());
    let field = ColorField::named("checker").unwrap();
    let image = atlas.rasterize(&mesh, &|p| field.color(p));
    assert_eq!(image.width, atlas.size);
    assert!(image.data.iter().any(|&v| v != 0));
}
