use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use illm_cli::plot::{codec_family, plot_rd, Metric};
use illm_core::checkpoint::Checkpoint;
use illm_core::codec::{CodecConfig, HyperpriorCodec};
use illm_core::data::synthetic_textures;
use illm_core::eval::{Aggregate, CropPolicy, MetricsReport};
use illm_core::image::Image;

fn illm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_illm")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn illm_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_illm")).args(args).env(key, value).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_codec() -> HyperpriorCodec {
    let cfg = CodecConfig { latent_channels: 8, hyper_channels: 4, hidden_channels: 8, ..Default::default() };
    HyperpriorCodec::new(cfg, 3).unwrap()
}

fn write_ckpt(dir: &Path, codec: &HyperpriorCodec) -> PathBuf {
    let mut c = Checkpoint::new();
    codec.write_checkpoint(&mut c).unwrap();
    let p = dir.join("model.ckpt");
    c.save(&p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn compress_then_decompress_reproduces_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let codec = tiny_codec();
    let ckpt = write_ckpt(dir.path(), &codec);
    let img = synthetic_textures(1, 40, 2).unwrap().remove(0).crop(0, 0, 37, 29).unwrap().quantize_8bit();
    let png = dir.path().join("in.png");
    img.save(&png).unwrap();
    let (bin, out) = (dir.path().join("x.illm"), dir.path().join("out.png"));
    for backend in ["reference", "fast"] {
        let o = illm_env(&["compress", "-i", s(&png), "-o", s(&bin), "--ckpt", s(&ckpt)], "ILLM_BACKEND", backend);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = illm(&["decompress", "-i", s(&bin), "-o", s(&out), "--ckpt", s(&ckpt)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let expect = codec.reconstruct(&Image::load(&png).unwrap()).unwrap().quantize_8bit();
        assert_eq!(Image::load(&out).unwrap(), expect);
        assert_eq!(std::fs::read(&bin).unwrap(), codec.compress_bytes(&Image::load(&png).unwrap()).unwrap());
    }
    let o = illm_env(&["compress", "-i", s(&png), "-o", s(&bin), "--ckpt", s(&ckpt)], "ILLM_BACKEND", "turbo");
    assert!(!o.status.success());
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let png = dir.path().join("in.png");
    Image::filled(8, 8, 0.5).unwrap().save(&png).unwrap();
    let o = illm(&["compress", "-i", s(&png), "-o", "x.illm", "--ckpt", s(&missing)]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("not found"), "{err}");

    let ckpt = write_ckpt(dir.path(), &tiny_codec());
    std::fs::write(dir.path().join("bad.png"), b"garbage").unwrap();
    let o = illm(&["compress", "-i", s(&dir.path().join("bad.png")), "-o", "x.illm", "--ckpt", s(&ckpt)]);
    assert!(!o.status.success());
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nstepz = 3\n").unwrap();
    let o = illm(&["train", "--config", s(&cfg)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));

    let o = illm(&["compress", "--bogus"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = illm(&["train", "--config", s(&cfg), "--stage", "3"]);
    assert!(!o.status.success());
}

#[test]
fn train_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = d.join("s1.ckpt");
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[train]\nstage = \"labeler\"\nsteps = 2\nbatch_size = 2\ncrop = 64\nsynthetic_images = 3\ncheckpoint = {:?}\n\
             [codec]\nlatent_channels = 8\nhyper_channels = 4\nhidden_channels = 8\n\
             [labeler]\nclasses = 4\ndim = 2\nhidden_channels = 8\n\
             [eval]\nkid_subset_size = 2\nkid_subsets = 3\n",
            ckpt
        ),
    )
    .unwrap();
    let o = illm(&["train", "--config", s(&cfg), "--stage", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"pretrain\""));

    let data = d.join("data");
    std::fs::create_dir(&data).unwrap();
    for (i, img) in synthetic_textures(3, 48, 9).unwrap().iter().enumerate() {
        img.save(&data.join(format!("{i}.png"))).unwrap();
    }
    let report = d.join("r1.json");
    let o = illm(&["eval", "--dataset", s(&data), "--ckpt", s(&ckpt), "--report", s(&report), "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = MetricsReport::load(&report).unwrap();
    assert_eq!(r.images.len(), 3);
    assert!(r.aggregate.kid_mean.is_some());

    let again = d.join("r2.json");
    let o = illm(&["eval", "--dataset", s(&data), "--ckpt", s(&ckpt), "--report", s(&again), "--config", s(&cfg)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&again).unwrap());

    let svg = d.join("curves.svg");
    let o = illm(&["plot", "--reports", s(&report), s(&again), "--out", s(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("class=\"panel\"").count(), 3);
}

fn report(codec: &str, bpp: f64, fid: Option<f64>, ms: Option<f64>) -> MetricsReport {
    MetricsReport {
        schema_version: 1,
        codec_id: codec.into(),
        dataset_id: "toy".into(),
        extractor_id: "tiny-conv".into(),
        crop_policy: CropPolicy::WholeResized,
        images: vec![],
        aggregate: Aggregate {
            mean_bpp: bpp,
            mean_psnr: 20.0 + 10.0 * bpp,
            mean_ms_ssim: ms,
            mean_perceptual_distance: 0.1,
            fid,
            kid_mean: None,
            kid_std: None,
        },
        skipped: vec![],
    }
}

#[test]
fn three_rate_points_make_one_polyline_per_panel() {
    let rs = vec![
        report("illm-00000000000000aa", 0.3, Some(2.0), Some(0.9)),
        report("illm-00000000000000bb", 0.1, Some(5.0), Some(0.8)),
        report("illm-00000000000000cc", 0.2, Some(3.0), Some(0.85)),
    ];
    let fig = plot_rd(&rs).unwrap();
    assert_eq!(fig.panels, Metric::ALL.to_vec());
    assert_eq!(fig.curves, vec![("illm".to_string(), 3)]);
    assert!(fig.warnings.is_empty());
    let lines: Vec<&str> = fig.svg.lines().filter(|l| l.starts_with("<polyline")).collect();
    assert_eq!(lines.len(), 3);
    for l in lines {
        let pts = l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        let xs: Vec<f64> = pts.split(' ').map(|p| p.split(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(xs.len(), 3);
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "sorted by bpp");
    }
    assert!(fig.svg.contains("lower is better"));
    assert_eq!(fig.svg, plot_rd(&rs).unwrap().svg);
}

#[test]
fn disjoint_metrics_keep_shared_panels() {
    let rs = vec![report("a", 0.1, Some(1.0), None), report("b", 0.2, None, Some(0.9))];
    let fig = plot_rd(&rs).unwrap();
    assert_eq!(fig.panels, vec![Metric::Psnr]);
    assert_eq!(fig.warnings.len(), 2);
    assert_eq!(fig.curves.len(), 2);

    let mut bad = rs.clone();
    bad[1].schema_version = 2;
    assert!(plot_rd(&bad).is_err());
    assert!(plot_rd(&[]).is_err());
    assert_eq!(codec_family("illm-0123456789abcdef"), "illm");
    assert_eq!(codec_family("identity"), "identity");
}
