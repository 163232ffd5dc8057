use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::backbone::OracleBackbone;
use crate::geometry::{synth, ObjectModel, Pose};
use crate::net::TemplateTokens;
use crate::render::{nocs_encode, rasterize, render_template_set, Shading};

fn unit_random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f32> {
    unit_rows(&Tensor::from_fn(n, d, |_, _| rng.random_range(-1.0f32..1.0)))
}

fn origins(counts: &[usize]) -> Vec<TokenOrigin> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| (0..n).map(move |patch| TokenOrigin { template: t, patch }))
        .collect()
}

#[test]
fn vote_finds_exact_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = unit_random(&mut rng, 20, 16);
    let others = unit_random(&mut rng, 40, 16);
    // Template 1 is the image itself; templates 0 and 2 are unrelated.
    let mut data = others.data[..20 * 16].to_vec();
    data.extend_from_slice(&image.data);
    data.extend_from_slice(&others.data[20 * 16..]);
    let t = Tensor::from_vec(60, 16, data);
    let vote = vote_primary_template(&image, &t, &origins(&[20, 20, 20]), 3).unwrap();
    assert_eq!(vote.primary, 1);
    assert_eq!(vote.counts, vec![0, 20, 0]);
}

#[test]
fn vote_tie_goes_to_lower_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = unit_random(&mut rng, 10, 8);
    let mut data = image.data.clone();
    data.extend_from_slice(&image.data);
    let t = Tensor::from_vec(20, 8, data);
    let vote = vote_primary_template(&image, &t, &origins(&[10, 10]), 2).unwrap();
    assert_eq!(vote.primary, 0);
}

#[test]
fn vote_ignores_positive_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = unit_random(&mut rng, 30, 12);
    let t = unit_random(&mut rng, 50, 12);
    let o = origins(&[10, 10, 10, 10, 10]);
    let a = vote_primary_template(&image, &t, &o, 5).unwrap();
    let b = vote_primary_template(&image.map(|v| v * 8.0), &t.map(|v| v * 0.25), &o, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vote_requires_template_tokens() {
    let image = Tensor::from_vec(1, 2, vec![1.0f32, 0.0]);
    assert!(matches!(
        vote_primary_template(&image, &Tensor::zeros(0, 2), &[], 1),
        Err(MatchError::NoForegroundTokens)
    ));
}

#[test]
fn orthonormal_sets_match_diagonally() {
    let d = 6;
    let eye = Tensor::from_fn(d, d, |r, c| if r == c { 1.0f32 } else { 0.0 });
    for t in [0.1, 0.01] {
        let m = dual_softmax_match(&eye, &eye, t, 0.2);
        assert_eq!(m.len(), d);
        for x in &m {
            assert_eq!(x.a, x.b);
        }
        if t == 0.01 {
            assert!(m.iter().all(|x| x.confidence > 1.0 - 1e-6));
        }
    }
}

#[test]
fn ambiguous_pairs_score_a_quarter() {
    let s = std::f32::consts::FRAC_1_SQRT_2;
    let a = Tensor::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
    let b = Tensor::from_vec(2, 2, vec![s, s, s, -s]);
    // Both softmaxes split evenly: confidence 0.5 · 0.5.
    let kept = dual_softmax_match(&a, &b, 0.1, 0.0);
    assert!(kept.iter().all(|m| (m.confidence - 0.25).abs() < 1e-12));
    assert!(dual_softmax_match(&a, &b, 0.1, 0.3).is_empty());
}

#[test]
fn threshold_one_keeps_nothing_for_random_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = unit_random(&mut rng, 10, 8);
    let b = unit_random(&mut rng, 12, 8);
    assert!(dual_softmax_match(&a, &b, 0.1, 1.0).is_empty());
}

#[test]
fn dual_softmax_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let a = unit_random(&mut rng, 15, 8);
        let b = unit_random(&mut rng, 11, 8);
        let ab: Vec<(usize, usize)> = dual_softmax_match(&a, &b, 0.1, 0.05).iter().map(|m| (m.a, m.b)).collect();
        let mut ba: Vec<(usize, usize)> = dual_softmax_match(&b, &a, 0.1, 0.05).iter().map(|m| (m.b, m.a)).collect();
        ba.sort();
        assert_eq!(ab, ba);
    }
}

fn cube_model() -> ObjectModel {
    ObjectModel::from_mesh(&synth::cube(0.1), vec![]).unwrap()
}

fn cube_set() -> (ObjectModel, crate::render::TemplateSet) {
    let model = cube_model();
    let set = render_template_set(&model, "cube", 1, 140).unwrap();
    (model, set)
}

#[test]
fn lifted_points_agree_with_stored_nocs() {
    let (_, set) = cube_set();
    let cols = 10;
    let mut checked = 0;
    for t in &set.templates {
        for patch in 0..cols * cols {
            let Some(p) = lift_patch_to_3d(t, patch) else {
                let (x0, y0) = ((patch % cols) * 14, (patch / cols) * 14);
                for y in y0..y0 + 14 {
                    for x in x0..x0 + 14 {
                        assert!(!t.mask[t.index(x as u32, y as u32)]);
                    }
                }
                continue;
            };
            assert!(p.norm() <= 1.0 + 1e-6);
            let (cx, cy) = patch_center_pixel(patch, cols);
            let i = t.index(cx as u32, cy as u32);
            if t.mask[i] {
                let enc = nocs_encode(&p);
                for ch in 0..3 {
                    assert!((enc[ch] - t.nocs[i][ch]).abs() <= 2.0 / 255.0);
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn merge_is_idempotent() {
    let c = |patch: usize, conf: f64, p: [f64; 3]| Correspondence {
        pixel: [0.0; 2],
        point_normalized: p,
        point: p,
        confidence: conf,
        template_index: 0,
        layer: 2,
        image_patch: patch,
        template_patch: 0,
    };
    let list = vec![
        c(0, 0.9, [0.0, 0.0, 0.0]),
        c(0, 0.5, [0.01, 0.0, 0.0]),
        c(0, 0.4, [0.5, 0.0, 0.0]),
        c(1, 0.7, [0.0, 0.0, 0.0]),
    ];
    let once = merge_correspondences(list.clone(), 0.02);
    assert_eq!(once.len(), 3);
    assert_eq!(once[0].confidence, 0.9);
    let mut doubled = list.clone();
    doubled.extend(list);
    assert_eq!(merge_correspondences(doubled, 0.02), once);
}

/// Renders the cube from a perturbed template viewpoint and matches it with oracle descriptors.
#[test]
fn oracle_cube_correspondences_are_accurate() {
    let (model, set) = cube_set();
    let oracle = OracleBackbone::new(192, 9);
    let grids: Vec<_> = set
        .templates
        .iter()
        .map(|t| oracle.describe(t.width as usize, t.height as usize, &t.nocs, &t.mask).tokens)
        .collect();
    let ids: Vec<usize> = (0..set.len()).collect();
    let tok = TemplateTokens::gather(&grids.iter().collect::<Vec<_>>(), &set.templates.iter().collect::<Vec<_>>(), &ids)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..5 {
        let base = &set.graph.view_poses[trial * 2];
        let tilt = Pose::from_axis_angle(
            Vec3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)),
            Vec3::zeros(),
        );
        let pose = base.compose(&tilt);
        let k = set.templates[0].intrinsics;
        let test = rasterize(&model.mesh, &pose, &k, Shading::Lambertian).unwrap();
        let grid = oracle.describe(140, 140, &test.nocs, &test.mask);
        let vote = vote_primary_template(&grid.tokens, &tok.tokens, &tok.origins, set.len()).unwrap();
        let selected = set.graph.select_views(vote.primary);
        assert_eq!(selected.len(), 7);
        let layers: Vec<LayerTokens> = (2..=4)
            .map(|layer| LayerTokens {
                layer,
                image: &grid.tokens,
                templates: &tok.tokens,
                origins: &tok.origins,
            })
            .collect();
        let corrs = gather_correspondences(&layers, &selected, 10, &CropTransform::identity(140), &set, &MatcherConfig::default())
            .unwrap();
        assert!(corrs.len() >= 20, "{}", corrs.len());
        let mut errs: Vec<f64> = corrs
            .iter()
            .filter_map(|c| {
                let truth = test.lift_pixel(c.pixel[0] as u32, c.pixel[1] as u32)?;
                Some((truth - Vec3::from(c.point_normalized)).norm())
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        // Image and template grids are not aligned, so errors up to half a patch are expected.
        let footprint = 14.0 * pose.translation.norm() / k.fx;
        assert!(median < 0.5 * footprint, "trial {trial}: median lift error {median}, patch {footprint}");
    }
}

#[test]
fn empty_foreground_is_too_few() {
    let (_, set) = cube_set();
    let image = Tensor::from_fn(100, 4, |r, _| r as f32);
    let empty = Tensor::<f32>::zeros(0, 4);
    let layers = [LayerTokens {
        layer: 2,
        image: &image,
        templates: &empty,
        origins: &[],
    }];
    assert!(matches!(
        gather_correspondences(&layers, &[0], 10, &CropTransform::identity(140), &set, &MatcherConfig::default()),
        Err(MatchError::TooFewCorrespondences(0))
    ));
}
