use ess::datasets::store::{read_manifest, read_source, read_target, write_dataset, Dataset, DatasetSpec, TargetLoad, TargetSplit};
use ess::datasets::{
    generate_scene, make_source, make_target, remap_labels, ClassRemap, Domain, SceneConfig, TargetConfig, TargetSample,
};
use ess::event::{build_voxel_grid, simulate_events, window_by_count, SimulatorConfig, VoxelGrid};
use ess::image::LabelMap;

fn small_scene() -> SceneConfig {
    SceneConfig {
        height: 32,
        width: 32,
        frames: 40,
        radius: (4.0, 7.0),
        ..SceneConfig::default()
    }
}

fn small_target() -> TargetConfig {
    TargetConfig {
        scene: small_scene(),
        n_grids: 3,
        events_per_window: 300,
        ..TargetConfig::default()
    }
}

fn foreground_fraction(l: &LabelMap) -> f64 {
    l.data.iter().filter(|&&v| v != 0).count() as f64 / l.data.len() as f64
}

#[test]
fn same_seed_gives_identical_scenes() {
    let a = generate_scene(0, &small_scene(), Domain::Source).unwrap();
    let b = generate_scene(0, &small_scene(), Domain::Source).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_scene(1, &small_scene(), Domain::Source).unwrap());
}

#[test]
fn labels_stay_inside_the_class_range() {
    let cfg = SceneConfig {
        classes: 4,
        ..small_scene()
    };
    for seed in 0..20 {
        let s = generate_scene(seed, &cfg, Domain::Target).unwrap();
        assert!(s.labels.iter().all(|l| l.data.iter().all(|&v| v < 4)));
    }
    for classes in [0, 1, 12] {
        let bad = SceneConfig { classes, ..small_scene() };
        assert!(generate_scene(0, &bad, Domain::Source).is_err());
    }
}

#[test]
fn foreground_area_respects_bounds_over_100_seeds() {
    let cfg = small_scene();
    for seed in 0..100 {
        let s = generate_scene(seed, &cfg, Domain::Source).unwrap();
        for l in &s.labels {
            let f = foreground_fraction(l);
            assert!(f >= cfg.foreground.0 && f <= cfg.foreground.1, "seed {seed}: {f}");
        }
    }
}

#[test]
fn every_class_appears_in_100_source_samples() {
    let cfg = small_scene();
    let src = make_source(3, 100, &cfg).unwrap();
    assert_eq!(src.len(), 100);
    let mut hist = vec![0usize; cfg.classes];
    for s in &src {
        for (h, n) in hist.iter_mut().zip(s.labels.histogram(cfg.classes)) {
            *h += n;
        }
    }
    assert!(hist.iter().all(|&n| n > 0), "{hist:?}");
}

#[test]
fn domains_differ_only_in_style() {
    assert_ne!(Domain::Source.style(), Domain::Target.style());
    let a = generate_scene(9, &small_scene(), Domain::Source).unwrap();
    let b = generate_scene(9, &small_scene(), Domain::Target).unwrap();
    assert_ne!(a.frames[0].1, b.frames[0].1);
}

#[test]
fn source_samples_are_single_stills() {
    let src = make_source(0, 8, &small_scene()).unwrap();
    assert_eq!(src.len(), 8);
    assert!(src.iter().all(|s| (s.image.height, s.image.width) == (32, 32)));
}

#[test]
fn target_grids_carry_their_window_polarity() {
    // the same pipeline the generator runs, checked window by window
    let cfg = small_target();
    for seed in 0..5 {
        let scene = generate_scene(seed, &cfg.scene, Domain::Target).unwrap();
        let stream = simulate_events(&scene.frames, &cfg.simulator).unwrap();
        let needed = cfg.n_grids * cfg.events_per_window;
        if stream.len() < needed {
            continue;
        }
        for w in window_by_count(&stream.tail(needed), cfg.events_per_window).unwrap() {
            let polarity: i64 = w.events().iter().map(|e| e.p.sign() as i64).sum();
            let g: VoxelGrid<f32> = build_voxel_grid(&w, cfg.bins, 32, 32).unwrap();
            assert!((g.sum() - polarity as f64).abs() < 1e-4);
        }
    }
    let samples: Vec<TargetSample<f32>> = make_target(4, 3, &cfg).unwrap();
    for s in &samples {
        assert_eq!(s.grids.len(), 3);
        for g in &s.grids {
            assert!((g.sum() - g.sum().round()).abs() < 1e-4);
            assert!(g.sum().abs() <= cfg.events_per_window as f64);
        }
    }
}

#[test]
fn too_few_events_are_reported() {
    let cfg = TargetConfig {
        simulator: SimulatorConfig { threshold: 5.0 },
        ..small_target()
    };
    assert!(make_target::<f32>(0, 1, &cfg).is_err());
}

#[test]
fn remap_tables_land_in_range() {
    let all = LabelMap::new(1, 19, (0..19).collect()).unwrap();
    assert_eq!(remap_labels(&all, &ClassRemap::identity(19)).unwrap(), all);
    let dsec = remap_labels(&all, &ClassRemap::dsec_11()).unwrap();
    assert!(dsec.data.iter().all(|&v| v < 11));
    let ddd = remap_labels(&all, &ClassRemap::ddd17_6()).unwrap();
    assert!(ddd.data.iter().all(|&v| v < 6));
    let unmapped = LabelMap::new(1, 1, vec![200]).unwrap();
    assert!(remap_labels(&unmapped, &ClassRemap::dsec_11()).is_err());
}

#[test]
fn dataset_round_trips_through_disk_without_touching_labels() {
    let spec = DatasetSpec {
        seed: 5,
        source_size: 3,
        target_train: 2,
        target_test: 1,
        pretext: 1,
        target: small_target(),
    };
    let ds = Dataset::generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), spec);
    assert_eq!(read_source(dir.path(), &spec).unwrap(), ds.source);
    for split in TargetSplit::ALL {
        assert_eq!(read_target(dir.path(), &spec, split, TargetLoad::ALL).unwrap(), ds.split(split));
    }

    // labels can be physically absent for grid-only loading
    let sample = dir.path().join("target/sample_00000");
    std::fs::remove_file(sample.join("eval_label.bin")).unwrap();
    let bare = read_target(dir.path(), &spec, TargetSplit::Train, TargetLoad::GRIDS_ONLY).unwrap();
    assert!(bare.iter().all(|s| s.eval_labels.is_none()));
    let partial = read_target(dir.path(), &spec, TargetSplit::Train, TargetLoad::ALL).unwrap();
    assert!(partial[0].eval_labels.is_none() && partial[1].eval_labels.is_some());
}
