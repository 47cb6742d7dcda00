"""Stage implementations behind the CLI subcommands.

Artifacts live in the workdir under fixed names:

    scene.json                  scene description (generate)
    trajectories.csv            emitted GPS records (generate)
    rates.npy                   per-tile effective rates (generate)
    labels_<task>.temb (+json)  ground-truth label rasters (generate)
    counts.npy / has_data.npy   densified activity (embed)
    spectrograms.npy            (H, W, windows, bins) float64 (embed)
    norm_stats.npy              stacked per-column mean/std (embed)
    model.cae / loss_history.csv  trained autoencoder (embed)
    embeddings.temb             embedding raster, mask in last channel (embed)
    metrics.csv / summary.txt   comparison report (classify)
    scores_<kind>.csv           per-pixel class probabilities (classify)
    predicted_<kind>.temb       argmax label rasters (classify)
    pr_<kind>_<class>.csv, pr_curves.png  PR curves (classify)
    map.png                     RGB embedding map (map)

Every stage is cached by content hash (see cache.run_stage) and fully
deterministic for a fixed config and seed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import cae as cae_mod
from . import downstream, raster, spectral, synthgen
from .cache import run_stage
from .config import PipelineConfig, write_snapshot
from .errors import ConfigError, DataError
from .ingest import TimeWindow, aggregate, densify, stream_records
from .tiles import TileGrid, TileId

log = logging.getLogger("tempo.pipeline")

TASKS = synthgen.TASKS


def _label_paths(workdir: Path, task: str) -> list[Path]:
    base = workdir / f"labels_{task}.temb"
    return [base, Path(str(base) + ".classes.json")]


def _window_from(cfg: PipelineConfig) -> TimeWindow:
    win = cfg.generate.window
    return TimeWindow(win.t0, win.dt, win.n)


def _resolve_grid(cfg: PipelineConfig, workdir: Path) -> tuple[TileGrid, TimeWindow]:
    scene_path = workdir / "scene.json"
    if scene_path.exists():
        scene = synthgen.load_scene(scene_path)
        return scene.grid, scene.window
    g = cfg.ingest.grid
    if g is None:
        raise ConfigError(
            f"no {scene_path} and no ingest.grid in the config; "
            "run generate first or specify the grid explicitly"
        )
    grid = TileGrid(TileId(g["origin_x"], g["origin_y"], g["zoom"]), g["width"], g["height"])
    return grid, _window_from(cfg)


def _trajectories_path(cfg: PipelineConfig, workdir: Path) -> Path:
    if cfg.ingest.trajectories:
        return Path(cfg.ingest.trajectories)
    return workdir / f"trajectories.{cfg.generate.fmt}"


def _snapshot(cfg: PipelineConfig, workdir: Path) -> None:
    write_snapshot(cfg, workdir / "manifests" / "resolved_config.json")


# --- generate ---------------------------------------------------------------

def run_generate(cfg: PipelineConfig, force: bool = False) -> None:
    """Synthesize a scene: trajectories, label rasters, rates, manifest."""
    workdir = cfg.workdir_path
    workdir.mkdir(parents=True, exist_ok=True)
    existing = [p for p in workdir.iterdir() if p.name != "manifests"]
    if existing and not force:
        raise ConfigError(
            f"workdir {workdir} is not empty ({len(existing)} entries); "
            "pass --force to overwrite"
        )
    _snapshot(cfg, workdir)
    gen = cfg.generate
    grid = TileGrid(
        TileId(gen.origin_x, gen.origin_y, gen.zoom), gen.width, gen.height
    )
    window = _window_from(cfg)
    traj_path = workdir / f"trajectories.{gen.fmt}"
    outputs = [workdir / "scene.json", traj_path, workdir / "rates.npy"]
    for task in TASKS:
        outputs.extend(_label_paths(workdir, task))

    def build() -> None:
        archetypes = synthgen.default_archetypes()
        scene = synthgen.random_scene(
            grid, window, cfg.seed, weights=gen.weights,
            rate_sigma=gen.rate_sigma, archetypes=archetypes,
        )
        synthgen.save_scene(scene, workdir / "scene.json")
        counts = synthgen.generate_counts(scene, archetypes)
        n = synthgen.emit_records(counts, scene, traj_path, fmt=gen.fmt)
        log.info("emitted %d records for %dx%d tiles", n, grid.height, grid.width)
        np.save(workdir / "rates.npy", synthgen.effective_rates(scene, archetypes))
        for task in TASKS:
            downstream.save_labels(
                synthgen.label_raster(scene, task, archetypes),
                _label_paths(workdir, task)[0],
            )

    run_stage(
        workdir,
        "generate",
        params={
            "seed": cfg.seed,
            "zoom": gen.zoom,
            "origin": [gen.origin_x, gen.origin_y],
            "size": [gen.width, gen.height],
            "window": [window.t0, window.dt, window.n],
            "rate_sigma": gen.rate_sigma,
            "weights": gen.weights,
            "fmt": gen.fmt,
        },
        inputs=[],
        outputs=outputs,
        fn=build,
    )


# --- embed ------------------------------------------------------------------

def _chunked_rows(fn, n_rows: int, threads: int):
    """Apply fn(row_slice) over row chunks, optionally in a thread pool."""
    chunks = [slice(r, min(r + 8, n_rows)) for r in range(0, n_rows, 8)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def run_embed(cfg: PipelineConfig) -> None:
    """Trajectories -> activity -> spectrograms -> trained CAE -> raster."""
    workdir = cfg.workdir_path
    workdir.mkdir(parents=True, exist_ok=True)
    _snapshot(cfg, workdir)
    grid, window = _resolve_grid(cfg, workdir)
    traj = _trajectories_path(cfg, workdir)
    sp = cfg.spectral

    counts_path = workdir / "counts.npy"
    has_data_path = workdir / "has_data.npy"

    def do_aggregate() -> None:
        series_map = aggregate(
            stream_records(traj),
            window,
            modality=cfg.ingest.modality,
            zoom=grid.zoom,
            dedup_trajectories=cfg.ingest.dedup,
        )
        dense = densify(series_map, grid, window)
        log.info(
            "aggregated %d active tiles of %d", int(dense.has_data.sum()),
            grid.height * grid.width,
        )
        np.save(counts_path, dense.counts)
        np.save(has_data_path, dense.has_data)

    run_stage(
        workdir,
        "aggregate",
        params={
            "window": [window.t0, window.dt, window.n],
            "zoom": grid.zoom,
            "origin": [grid.origin.x, grid.origin.y],
            "size": [grid.width, grid.height],
            "modality": cfg.ingest.modality,
            "dedup": cfg.ingest.dedup,
        },
        inputs=[traj],
        outputs=[counts_path, has_data_path],
        fn=do_aggregate,
    )

    spectra_path = workdir / "spectrograms.npy"
    stats_path = workdir / "norm_stats.npy"

    def do_spectra() -> None:
        counts = np.load(counts_path)
        rows = _chunked_rows(
            lambda sl: spectral.spectrogram_stack(
                counts[sl], sp.window_len, sp.hop, sp.bins,
                remove_mean=sp.remove_mean, log_compress=sp.log_compress,
            ),
            counts.shape[0],
            cfg.threads,
        )
        stack = np.concatenate(rows, axis=0)
        stats = spectral.compute_norm_stats(stack, sp.window_len, sp.hop)
        np.save(spectra_path, stack)
        np.save(stats_path, np.stack([stats.mean, stats.std]))

    run_stage(
        workdir,
        "spectra",
        params={
            "window_len": sp.window_len, "hop": sp.hop, "bins": sp.bins,
            "remove_mean": sp.remove_mean, "log_compress": sp.log_compress,
        },
        inputs=[counts_path],
        outputs=[spectra_path, stats_path],
        fn=do_spectra,
    )

    model_path = workdir / "model.cae"
    history_path = workdir / "loss_history.csv"

    def do_train() -> None:
        flat = _load_flat_features(workdir, sp)
        data = flat.reshape(-1, flat.shape[-1])
        model = cae_mod.init_model(
            data.shape[1], cfg.cae.hidden_dims, cfg.cae.bottleneck_dim, seed=cfg.seed
        )
        train_cfg = cae_mod.TrainConfig(
            lam=cfg.cae.lam,
            learning_rate=cfg.cae.learning_rate,
            epochs=cfg.cae.epochs,
            batch_size=cfg.cae.batch_size,
            seed=cfg.seed,
            optimizer=cfg.cae.optimizer,
        )
        model, history = cae_mod.train(model, data, train_cfg)
        log.info("trained CAE: loss %.5f -> %.5f", history[0], history[-1])
        cae_mod.save_model(model, model_path)
        lines = ["epoch,loss"] + [
            f"{i + 1},{v!r}" for i, v in enumerate(history)
        ]
        history_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    run_stage(
        workdir,
        "cae",
        params={
            "hidden_dims": cfg.cae.hidden_dims,
            "bottleneck_dim": cfg.cae.bottleneck_dim,
            "lam": cfg.cae.lam,
            "learning_rate": cfg.cae.learning_rate,
            "epochs": cfg.cae.epochs,
            "batch_size": cfg.cae.batch_size,
            "optimizer": cfg.cae.optimizer,
            "seed": cfg.seed,
        },
        inputs=[spectra_path, stats_path],
        outputs=[model_path, history_path],
        fn=do_train,
    )

    emb_path = workdir / "embeddings.temb"

    def do_embed() -> None:
        flat = _load_flat_features(workdir, sp)
        h, w, dim = flat.shape
        model = cae_mod.load_model(model_path)
        mats = _chunked_rows(
            lambda sl: cae_mod.encode(model, flat[sl].reshape(-1, dim)),
            h,
            cfg.threads,
        )
        z = np.concatenate(mats, axis=0).reshape(h, w, model.bottleneck_dim)
        has_data = np.load(has_data_path)
        data = np.concatenate(
            [z, has_data[:, :, np.newaxis].astype(np.float64)], axis=2
        ).astype(np.float32)
        raster.save_raster(raster.EmbeddingRaster(grid, data), emb_path)

    run_stage(
        workdir,
        "embed",
        params={"bottleneck_dim": cfg.cae.bottleneck_dim},
        inputs=[model_path, spectra_path, stats_path, has_data_path],
        outputs=[emb_path],
        fn=do_embed,
    )


def _load_flat_features(workdir: Path, sp) -> np.ndarray:
    """(H, W, windows*bins) standardized spectrogram features."""
    stack = np.load(workdir / "spectrograms.npy")
    mean, std = np.load(workdir / "norm_stats.npy")
    stats = spectral.NormStats(mean, std, stack.shape[-2], sp.window_len, sp.hop)
    return spectral.flatten_stack(stack, stats)


# --- classify ---------------------------------------------------------------

def _build_features(cfg: PipelineConfig, workdir: Path) -> dict[str, np.ndarray]:
    emb = raster.load_raster(workdir / "embeddings.temb")
    mask = emb.mask.astype(np.float64)[:, :, np.newaxis]
    flat = _load_flat_features(workdir, cfg.spectral)
    counts = np.load(workdir / "counts.npy")
    totals = np.log1p(counts.sum(axis=2).astype(np.float64))[:, :, np.newaxis]
    return {
        "embedding": emb.data.astype(np.float64),
        "raw_dft": np.concatenate([flat, mask], axis=2),
        "activity_count": np.concatenate([totals, mask], axis=2),
    }


def run_classify(cfg: PipelineConfig) -> None:
    """Train the three feature kinds on one split and emit the comparison."""
    workdir = cfg.workdir_path
    _snapshot(cfg, workdir)
    task = cfg.classify.task
    label_path = _label_paths(workdir, task)[0]
    inputs = [
        workdir / "embeddings.temb",
        workdir / "spectrograms.npy",
        workdir / "norm_stats.npy",
        workdir / "counts.npy",
        *_label_paths(workdir, task),
    ]
    kinds = sorted(downstream.FEATURE_KINDS)
    outputs = [workdir / "metrics.csv", workdir / "summary.txt",
               workdir / "pr_curves.png"]
    labels_preview = downstream.load_labels(label_path)
    class_ids = sorted(
        int(c)
        for c in np.unique(labels_preview.labels)
        if c != downstream.IGNORE_LABEL
    )
    for kind in kinds:
        outputs.append(workdir / f"scores_{kind}.csv")
        outputs.append(workdir / f"predicted_{kind}.temb")
        outputs.append(Path(str(workdir / f"predicted_{kind}.temb") + ".classes.json"))
        for cid in class_ids:
            outputs.append(workdir / f"pr_{kind}_{cid}.csv")

    def do_classify() -> None:
        labels = downstream.load_labels(label_path)
        features = _build_features(cfg, workdir)
        clf_cfg = downstream.ClassifierConfig(
            hidden=cfg.classify.hidden,
            learning_rate=cfg.classify.learning_rate,
            epochs=cfg.classify.epochs,
            batch_size=cfg.classify.batch_size,
            seed=cfg.seed,
            optimizer=cfg.classify.optimizer,
        )
        report = downstream.evaluate_report(
            features,
            labels,
            clf_cfg,
            split_seed=cfg.seed,
            block_size=cfg.classify.block_size,
            test_fraction=cfg.classify.test_fraction,
        )
        report.to_csv(workdir / "metrics.csv")
        (workdir / "summary.txt").write_text(report.summary_text(), encoding="utf-8")
        usable = labels.labels != downstream.IGNORE_LABEL
        for kind in kinds:
            res = report.kinds[kind]
            _dump_scores(
                workdir / f"scores_{kind}.csv", res, labels, usable, report.test_mask
            )
            pred = np.array(res.classifier.classes, dtype=np.uint8)[
                res.scores.argmax(axis=2)
            ]
            pred[~usable] = downstream.IGNORE_LABEL
            downstream.save_labels(
                downstream.LabelRaster(labels.grid, pred, dict(labels.class_table)),
                workdir / f"predicted_{kind}.temb",
            )
            for cid, curve in res.curves.items():
                downstream.pr_curve_to_csv(curve, workdir / f"pr_{kind}_{cid}.csv")
        _plot_pr_curves(report, workdir / "pr_curves.png")
        log.info("wrote metrics for %d feature kinds", len(kinds))

    run_stage(
        workdir,
        "classify",
        params={
            "task": task,
            "block_size": cfg.classify.block_size,
            "test_fraction": cfg.classify.test_fraction,
            "hidden": cfg.classify.hidden,
            "learning_rate": cfg.classify.learning_rate,
            "epochs": cfg.classify.epochs,
            "batch_size": cfg.classify.batch_size,
            "optimizer": cfg.classify.optimizer,
            "seed": cfg.seed,
        },
        inputs=inputs,
        outputs=outputs,
        fn=do_classify,
    )


def _dump_scores(path: Path, res, labels, usable: np.ndarray, test_mask: np.ndarray) -> None:
    classes = res.classifier.classes
    header = "row,col,test,label," + ",".join(f"p_{c}" for c in classes)
    lines = [header]
    h, w = labels.labels.shape
    for r in range(h):
        for c in range(w):
            if not usable[r, c]:
                continue
            probs = ",".join(repr(float(v)) for v in res.scores[r, c])
            lines.append(
                f"{r},{c},{int(test_mask[r, c])},{int(labels.labels[r, c])},{probs}"
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _plot_pr_curves(report, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for kind in sorted(report.kinds):
        res = report.kinds[kind]
        for cid in sorted(res.curves):
            curve = res.curves[cid]
            name = report.class_table.get(cid, str(cid))
            ax.plot(curve.recall, curve.precision,
                    label=f"{kind}/{name} (AUC {curve.auc:.3f})")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# --- map --------------------------------------------------------------------

def run_map(cfg: PipelineConfig) -> None:
    """Fit the 3-D projection and render the RGB embedding map."""
    workdir = cfg.workdir_path
    _snapshot(cfg, workdir)
    emb_path = workdir / "embeddings.temb"
    map_path = workdir / "map.png"

    def do_map() -> None:
        emb = raster.load_raster(emb_path)
        proj = raster.fit_projection(emb)
        raster.render_rgb(emb, proj, map_path)

    run_stage(
        workdir,
        "map",
        params={},
        inputs=[emb_path],
        outputs=[map_path],
        fn=do_map,
    )


def run_all(cfg: PipelineConfig, force: bool = False) -> None:
    run_generate(cfg, force=force)
    run_embed(cfg)
    run_classify(cfg)
    run_map(cfg)
