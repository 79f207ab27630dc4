from cugcn import plotting
from cugcn.experiments import filter_curves, report_from_predictions


def test_figures_are_written(tmp_path):
    paths = [
        plotting.plot_filter_curves(filter_curves([0.5, 1.0], [1, 3], resolution=11), tmp_path / "f.png"),
        plotting.plot_depth_sweep(
            [{"variant": v, "depth": d, "mean": 0.5, "std": 0.1} for v in ("a", "b") for d in (2, 4)],
            tmp_path / "d.png",
        ),
        plotting.plot_ablation([{"toggle": "full", "mean": 0.8, "std": 0.02}], tmp_path / "a.png"),
        plotting.plot_history(
            [{"epoch": e, "train_loss": 1.0, "val_loss": 1.1, "train_acc": 0.5, "val_acc": 0.4} for e in range(3)],
            tmp_path / "h.png",
        ),
        plotting.plot_confusion(report_from_predictions([0, 1, 2], [0, 2, 2], ("x", "y", "z")), tmp_path / "c.png"),
    ]
    for p in paths:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
