use std::sync::Arc;

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use sketchloop_core::backends::{BackendSet, Backends, Failure, MockSegmenter, MockSoftEdge};
use sketchloop_core::imaging::{composite_over_white, Grid, LabelMap, SoftEdgeMap};
use sketchloop_core::scaffold::{
    dilate, extract_boundaries, intersect, make_scaffold, ScaffoldConfig, ScaffoldError,
};

fn oracle_boundary(labels: &LabelMap, x: u32, y: u32) -> bool {
    let (w, h) = labels.dimensions();
    let here = *labels.get(x, y);
    let mut differs = false;
    for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
            differs |= *labels.get(nx as u32, ny as u32) != here;
        }
    }
    differs
}

fn oracle_scaffold(labels: &LabelMap, edges: &SoftEdgeMap, r: u32) -> Grid<f32> {
    let (w, h) = labels.dimensions();
    Grid::from_fn(w, h, |x, y| {
        let r = r as i64;
        let mut near = false;
        for yy in (y as i64 - r)..=(y as i64 + r) {
            for xx in (x as i64 - r)..=(x as i64 + r) {
                if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                    near |= oracle_boundary(labels, xx as u32, yy as u32);
                }
            }
        }
        if near {
            *edges.get(x, y)
        } else {
            0.0
        }
    })
}

fn fixture() -> (LabelMap, SoftEdgeMap) {
    let labels = Grid::from_fn(10, 10, |x, _| u32::from(x >= 5));
    let edges = Grid::from_fn(10, 10, |x, _| match x {
        4 => 1.0,
        8 => 0.8,
        _ => 0.0,
    });
    (labels, edges)
}

fn design() -> RgbImage {
    RgbImage::from_fn(10, 10, |x, _| {
        if x < 5 {
            Rgb([200, 30, 30])
        } else {
            Rgb([30, 30, 200])
        }
    })
}

fn backends_with(seg: MockSegmenter, edges: MockSoftEdge) -> Backends {
    Backends::new(BackendSet {
        segmentation: Arc::new(seg),
        soft_edge: Some(Arc::new(edges)),
        ..BackendSet::mock()
    })
}

#[tokio::test]
async fn fixture_backends_give_hand_computed_scaffold() {
    let (labels, edges) = fixture();
    let backends = backends_with(MockSegmenter::fixed(labels), MockSoftEdge::fixed(edges));
    let config = ScaffoldConfig {
        dilation_radius: 0,
        ..ScaffoldConfig::default()
    };
    let s = make_scaffold(&design(), &backends, &config).await.unwrap();
    for y in 0..10 {
        for x in 0..10 {
            let expected = if x == 4 { 1.0 } else { 0.0 };
            assert_eq!(*s.lines.get(x, y), expected, "pixel ({x},{y})");
        }
    }
    assert_eq!(s.alpha, 0.3);
    assert!(!s.classical_edges);

    // column 8 is 3 px from the nearest boundary column, outside radius 2
    let wide = make_scaffold(&design(), &backends, &ScaffoldConfig::default())
        .await
        .unwrap();
    assert_eq!(*wide.lines.get(8, 0), 0.0);
    assert_eq!(*wide.lines.get(4, 0), 1.0);
}

#[tokio::test]
async fn flat_design_gives_empty_scaffold() {
    let flat = RgbImage::from_pixel(16, 16, Rgb([90, 90, 90]));
    let s = make_scaffold(&flat, &Backends::mock(), &ScaffoldConfig::default())
        .await
        .unwrap();
    assert!(s.is_blank());
}

#[tokio::test]
async fn segmentation_timeout_is_an_error_after_one_retry() {
    let seg = MockSegmenter::new().with_failure(Failure::Timeout(5));
    let seg = Arc::new(seg);
    let backends = Backends::new(BackendSet {
        segmentation: seg.clone(),
        ..BackendSet::mock()
    });
    let err = make_scaffold(&design(), &backends, &ScaffoldConfig::default())
        .await
        .unwrap_err();
    match err {
        ScaffoldError::Backend(e) => {
            assert!(e.is_timeout());
            assert_eq!(e.kind.as_str(), "segmentation");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seg.calls(), 2);
    assert!(backends
        .call_log()
        .iter()
        .any(|c| c.kind.as_str() == "segmentation"));
}

#[tokio::test]
async fn missing_soft_edge_backend_uses_classical_edges() {
    let backends = Backends::new(BackendSet {
        soft_edge: None,
        ..BackendSet::mock()
    });
    let s = make_scaffold(&design(), &backends, &ScaffoldConfig::default())
        .await
        .unwrap();
    assert!(s.classical_edges);
    assert!(!s.is_blank());
}

#[test]
fn foreground_compositing() {
    let img = RgbImage::from_fn(8, 4, |x, y| Rgb([x as u8 * 20, y as u8 * 40, 77]));
    let all = Grid::filled(8, 4, 1.0);
    assert_eq!(composite_over_white(&img, &all).unwrap(), img);

    let left = Grid::from_fn(8, 4, |x, _| if x < 4 { 1.0 } else { 0.0 });
    let out = composite_over_white(&img, &left).unwrap();
    for y in 0..4 {
        for x in 0..8 {
            let expected = if x < 4 {
                *img.get_pixel(x, y)
            } else {
                Rgb([255, 255, 255])
            };
            assert_eq!(*out.get_pixel(x, y), expected);
        }
    }
}

fn label_map() -> impl Strategy<Value = LabelMap> {
    (1u32..=32, 1u32..=32, 1u32..=5).prop_flat_map(|(w, h, regions)| {
        let noise = prop::collection::vec(0..regions, (w * h) as usize)
            .prop_map(move |v| Grid::from_vec(w, h, v).unwrap());
        let sites = prop::collection::vec((0..w, 0..h), regions as usize).prop_map(move |sites| {
            Grid::from_fn(w, h, |x, y| {
                let d = |&(sx, sy): &(u32, u32)| x.abs_diff(sx).pow(2) + y.abs_diff(sy).pow(2);
                (0..sites.len()).min_by_key(|&i| d(&sites[i])).unwrap() as u32
            })
        });
        prop_oneof![noise, sites]
    })
}

fn with_edges() -> impl Strategy<Value = (LabelMap, SoftEdgeMap)> {
    label_map().prop_flat_map(|labels| {
        let (w, h) = labels.dimensions();
        let values = prop_oneof![Just(0.0f32), 0.0f32..=1.0];
        prop::collection::vec(values, (w * h) as usize)
            .prop_map(move |v| (labels.clone(), Grid::from_vec(w, h, v).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(250))]

    #[test]
    fn matches_brute_force_oracle((labels, edges) in with_edges(), r in 0u32..4) {
        let (w, h) = labels.dimensions();
        let boundary = extract_boundaries(&labels);
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(*boundary.get(x, y), oracle_boundary(&labels, x, y));
            }
        }
        let got = intersect(&boundary, &edges, r).unwrap();
        prop_assert_eq!(&got, &oracle_scaffold(&labels, &edges, r));

        let zone = dilate(&boundary, r);
        let wider = intersect(&boundary, &edges, r + 1).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = *got.get(x, y);
                if v != 0.0 {
                    prop_assert!(*zone.get(x, y));
                    prop_assert!(*edges.get(x, y) != 0.0);
                    prop_assert_eq!(v, *edges.get(x, y));
                    prop_assert!(*wider.get(x, y) != 0.0);
                }
            }
        }

        let renamed = labels.map(|&l| (l * 7 + 3) % 11 + 100);
        prop_assert_eq!(extract_boundaries(&renamed), boundary);
    }
}
