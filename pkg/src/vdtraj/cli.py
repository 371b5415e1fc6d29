"""Command-line interface: generate, analyze, bench.

Reports are written as delimited files (CSV/JSON) with matplotlib figures
rendered alongside them.  Exit codes: 0 success, 2 input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import io
from .analysis import (
    compute_psf,
    density_compensation,
    density_compliance,
    psf_metrics,
)
from .attraction import field_workspace_bytes
from .config import ConfigError, RunConfig
from .core import (
    HardwareSpec,
    SamplingPattern,
    acceleration_factor,
    kspace_to_waveforms,
    normalized_limits,
)
from .density import TargetDensity, default_grid_n, discretize, DensityParams
from .io import FileFormatError
from .optimizer import DivergenceError, optimize
from .projection import ProjectionConfig, feasibility_residuals
from .repulsion import RepulsionConfig, eval_repulsion_direct, eval_repulsion_tree

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _set_threads(n: int | None):
    if n is not None:
        import numba

        numba.set_num_threads(max(1, n))


def _plot_trajectory(pattern: SamplingPattern, path: Path, max_shots: int = 16):
    fig, ax = plt.subplots(figsize=(6, 6))
    step = max(1, pattern.shots // max_shots)
    for s in range(0, pattern.shots, step):
        ax.plot(pattern.coords[s, :, 0], pattern.coords[s, :, 1], lw=0.6)
    ax.set_xlabel("kx (normalized)")
    ax.set_ylabel("ky (normalized)")
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_aspect("equal")
    ax.set_title(f"trajectory ({pattern.shots} shots, {pattern.samples_per_shot} samples)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_trace(trace, path: Path):
    fig, ax = plt.subplots(figsize=(7, 4))
    costs = [r.cost for r in trace.records]
    levels = [r.level for r in trace.records]
    ax.plot(costs, lw=1.0)
    for i in range(1, len(levels)):
        if levels[i] != levels[i - 1]:
            ax.axvline(i, color="gray", ls="--", lw=0.6)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("cost")
    ax.set_title("attraction-repulsion cost per iteration (levels dashed)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_generate(args) -> int:
    try:
        run = RunConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _set_threads(args.threads)
    out_dir = Path(args.out if args.out else run.out_dir)
    hw, cfg = run.hardware, run.optimizer

    if args.dry_run:
        grid_n = cfg.grid_n if cfg.grid_n is not None else default_grid_n(hw.matrix)
        p = cfg.n_c * cfg.n_s
        field_gb = field_workspace_bytes(grid_n, cfg.dims) / 1e9
        pair_evals = cfg.n_git * (cfg.n_decim + 1) * p**2
        print("dry run: configuration valid")
        print(f"  particles: {p} ({cfg.n_c} shots x {cfg.n_s} samples, {cfg.dims}D)")
        print(f"  acceleration factor: {acceleration_factor(cfg.n_c, hw.matrix):.2f}")
        print(f"  density grid: {2 * grid_n + 1}^{cfg.dims}, "
              f"field workspace ~{field_gb:.2f} GB")
        print(f"  direct-backend pair evaluations ~{pair_evals:.2e} "
              f"(tree backend scales near-linearly instead)")
        return EXIT_OK

    t0 = time.perf_counter()
    try:
        result = optimize(cfg, hw)
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MemoryError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    elapsed = time.perf_counter() - t0

    out_dir.mkdir(parents=True, exist_ok=True)
    traj_path = out_dir / "trajectory.spkt"
    io.write_spkt(traj_path, result.pattern, hw.k_max, hw.raster_dt)
    io.write_trajectory_csv(out_dir / "trajectory.csv", result.pattern)
    result.trace.write_csv(out_dir / "trace.csv")

    grads, slews, wf_report = kspace_to_waveforms(result.pattern, hw)
    limits = normalized_limits(hw)
    proj_cfg = ProjectionConfig(alpha=limits.alpha, beta=limits.beta,
                                raster_dt=hw.raster_dt)
    residuals = feasibility_residuals(result.pattern, proj_cfg)
    report = {
        "elapsed_seconds": elapsed,
        "waveforms": wf_report.as_dict(),
        "constraint_residuals": residuals,
        "alpha": limits.alpha,
        "beta": limits.beta,
        "acceleration_factor": acceleration_factor(cfg.n_c, hw.matrix),
        "final_cost": result.trace.records[-1].cost if result.trace.records else None,
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)

    _plot_trajectory(result.pattern, out_dir / "trajectory.png")
    if result.trace.records:
        _plot_trace(result.trace, out_dir / "trace.png")
    print(f"wrote {traj_path} ({result.pattern.shots} shots x "
          f"{result.pattern.samples_per_shot} samples) in {elapsed:.1f}s; "
          f"feasible={wf_report.feasible}")
    return EXIT_OK


def _load_traj(path) -> SamplingPattern:
    return io.load_trajectory(path)


def _parse_grid(raw: str | None, dims: int):
    if raw is None:
        return (64,) * dims if dims == 2 else (32,) * dims
    vals = [int(v) for v in raw.split(",")]
    if len(vals) == 1:
        return tuple(vals) * dims
    if len(vals) != dims:
        raise ValueError(f"grid needs 1 or {dims} comma-separated values")
    return tuple(vals)


def _analyze_psf(args, pattern: SamplingPattern, out_dir: Path) -> int:
    grid = _parse_grid(args.grid, pattern.dims)
    weights = density_compensation(pattern, grid, iters=args.dc_iters,
                                   allow_slow=args.allow_slow)
    psf = compute_psf(pattern, grid, weights, allow_slow=args.allow_slow)
    metrics = psf_metrics(psf)
    with open(out_dir / "psf_metrics.json", "w") as fh:
        json.dump(metrics.as_dict(), fh, indent=2)

    # Axis line cuts through the peak, in voxel units around the center.
    profiles = []
    axis_names = ["x", "y", "z"][: psf.dims]
    for ax in range(psf.dims):
        sl = list(psf.peak_index)
        sl[ax] = slice(None)
        profiles.append(psf.values[tuple(sl)])
    with open(out_dir / "psf_profiles.csv", "w") as fh:
        fh.write("offset," + ",".join(axis_names) + "\n")
        n = max(len(p) for p in profiles)
        for j in range(n):
            row = [str(j - grid[0] // 2)]
            for ax in range(psf.dims):
                row.append(f"{profiles[ax][j]:.9g}" if j < len(profiles[ax]) else "")
            fh.write(",".join(row) + "\n")

    fig, ax = plt.subplots(figsize=(7, 4))
    for name, prof in zip(axis_names, profiles):
        offs = np.arange(len(prof)) - psf.peak_index[axis_names.index(name)]
        ax.semilogy(offs, np.maximum(prof / psf.peak_value, 1e-12), label=name)
    ax.set_xlabel("offset from peak (voxels)")
    ax.set_ylabel("normalized |PSF|")
    ax.legend()
    ax.set_title(f"PSF line cuts (FWHM {', '.join(f'{f:.2f}' for f in metrics.fwhm)} vox, "
                 f"PSL {metrics.psl_db:.1f} dB, PNL {metrics.pnl_db:.1f} dB)")
    fig.tight_layout()
    fig.savefig(out_dir / "psf_profiles.png", dpi=150)
    plt.close(fig)

    mid = psf.values[(slice(None), slice(None)) + tuple(psf.peak_index[2:])]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(np.log10(np.maximum(mid / psf.peak_value, 1e-12)).T, origin="lower",
              cmap="viridis")
    ax.set_title("log10 |PSF|, central plane")
    fig.tight_layout()
    fig.savefig(out_dir / "psf_plane.png", dpi=150)
    plt.close(fig)

    print(json.dumps(metrics.as_dict()))
    return EXIT_OK


def _analyze_density(args, pattern: SamplingPattern, out_dir: Path) -> int:
    if args.density_file:
        rho = TargetDensity.load(args.density_file)
    else:
        grid_n = args.grid_n if args.grid_n else 64
        rho = discretize(DensityParams(args.cutoff, args.decay), grid_n, pattern.dims)
    l1, h_samples, h_rho = density_compliance(pattern, rho, bins=args.bins)
    report = {"l1_distance": l1, "bins_per_axis": args.bins,
              "samples": pattern.n_samples}
    with open(out_dir / "density_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    with open(out_dir / "density_hist.csv", "w") as fh:
        fh.write("bin,empirical,target\n")
        for i, (a, b) in enumerate(zip(h_samples.ravel(), h_rho.ravel())):
            fh.write(f"{i},{a:.9g},{b:.9g}\n")

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    if pattern.dims == 3:
        emp = h_samples.sum(axis=2)
        tgt = h_rho.sum(axis=2)
    else:
        emp, tgt = h_samples, h_rho
    vmax = max(emp.max(), tgt.max())
    axes[0].imshow(emp.T, origin="lower", vmin=0, vmax=vmax)
    axes[0].set_title("empirical")
    axes[1].imshow(tgt.T, origin="lower", vmin=0, vmax=vmax)
    axes[1].set_title("target")
    fig.suptitle(f"binned density, L1 distance = {l1:.4f}")
    fig.tight_layout()
    fig.savefig(out_dir / "density_hist.png", dpi=150)
    plt.close(fig)

    print(json.dumps(report))
    return EXIT_OK


def _waveform_hardware(args, header) -> HardwareSpec:
    if args.config:
        return RunConfig.load(args.config).hardware
    raster = header.raster_dt if header is not None else args.raster_dt
    k_max = header.k_max if header is not None else (250.0,)
    dims = len(k_max)
    # Matrix/fov only set the k_max scaling for export; recover a consistent
    # pair from the stored per-axis k_max.
    fov = tuple(0.5 * 256 / km for km in k_max)
    return HardwareSpec(g_max=args.g_max, s_max=args.s_max, gamma=args.gamma,
                        raster_dt=raster, dwell_dt=raster, fov=fov,
                        matrix=(256,) * dims, dims=dims)


def _analyze_waveforms(args, traj_path, out_dir: Path) -> int:
    header = None
    with open(traj_path, "rb") as fh:
        if fh.read(4) == io.SPKT_MAGIC:
            _, header = io.read_spkt(traj_path)
    pattern = _load_traj(traj_path)
    hw = _waveform_hardware(args, header)
    grads, slews, report = kspace_to_waveforms(pattern, hw)

    with open(out_dir / "waveform_report.json", "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
    grad_mag = np.linalg.norm(grads, axis=2)
    slew_mag = np.linalg.norm(slews, axis=2)
    with open(out_dir / "waveforms.csv", "w") as fh:
        fh.write("shot,sample,grad_T_per_m,slew_T_per_m_per_s\n")
        for s in range(grads.shape[0]):
            for n in range(grads.shape[1]):
                slew = f"{slew_mag[s, n]:.9g}" if n < slews.shape[1] else ""
                fh.write(f"{s},{n},{grad_mag[s, n]:.9g},{slew}\n")

    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    t_ms = np.arange(grad_mag.shape[1]) * hw.raster_dt * 1e3
    shot = 0
    axes[0].plot(t_ms, grad_mag[shot] * 1e3, lw=0.8)
    axes[0].axhline(hw.g_max * 1e3, color="k", ls=":")
    axes[0].set_ylabel("|G| (mT/m)")
    axes[1].plot(t_ms[:-1], slew_mag[shot], lw=0.8)
    axes[1].axhline(hw.s_max, color="k", ls=":")
    axes[1].set_ylabel("|slew| (T/m/s)")
    axes[1].set_xlabel("time (ms)")
    fig.suptitle(f"shot 0 waveforms (feasible={report.feasible})")
    fig.tight_layout()
    fig.savefig(out_dir / "waveforms.png", dpi=150)
    plt.close(fig)

    print(json.dumps(report.as_dict()))
    return EXIT_OK


def cmd_analyze(args) -> int:
    _set_threads(args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.mode == "waveforms":
            return _analyze_waveforms(args, args.traj, out_dir)
        pattern = _load_traj(args.traj)
        if args.mode == "psf":
            return _analyze_psf(args, pattern, out_dir)
        return _analyze_density(args, pattern, out_dir)
    except (FileFormatError, ConfigError, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def cmd_bench(args) -> int:
    _set_threads(args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    cfg = RepulsionConfig(backend="tree", tree_precision=args.precision)

    # Warm the JIT so timings measure the kernels, not compilation.
    warm = rng.uniform(-1, 1, (max(cfg.leaf_size + 1, 512), args.dims))
    eval_repulsion_tree(warm, cfg)
    eval_repulsion_direct(warm[:256], cfg.kernel_eps)

    rows = []
    for log2p in range(args.min_log2_p, args.max_log2_p + 1):
        p = 2**log2p
        pts = rng.uniform(-1.0, 1.0, (p, args.dims))
        c_dir = None
        if log2p <= args.direct_cap_log2:
            t0 = time.perf_counter()
            c_dir, g_dir = eval_repulsion_direct(pts, cfg.kernel_eps)
            t_dir = (time.perf_counter() - t0) * 1e3
            rows.append((p, "direct", t_dir, ""))
        t0 = time.perf_counter()
        c_tree, g_tree = eval_repulsion_tree(pts, cfg)
        t_tree = (time.perf_counter() - t0) * 1e3
        if c_dir is not None:
            rel = abs(c_tree - c_dir) / abs(c_dir)
            rows.append((p, "tree", t_tree, f"{rel:.3e}"))
        else:
            rows.append((p, "tree", t_tree, ""))
        print(f"p=2^{log2p}: tree {t_tree:.1f} ms"
              + (f", direct {t_dir:.1f} ms" if c_dir is not None else ""))

    csv_path = out_dir / "bench.csv"
    with open(csv_path, "w") as fh:
        fh.write("p,backend,wall_ms,rel_err_vs_direct\n")
        for p, backend, ms, rel in rows:
            fh.write(f"{p},{backend},{ms:.3f},{rel}\n")

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for backend, marker in (("direct", "s"), ("tree", "o")):
        pts_b = [(p, ms) for p, b, ms, _ in rows if b == backend]
        if pts_b:
            ax.loglog(*zip(*pts_b), marker=marker, label=backend)
    ax.set_xlabel("particles p")
    ax.set_ylabel("wall time (ms)")
    ax.legend()
    ax.set_title(f"repulsion evaluation time ({args.dims}D, precision {args.precision:g})")
    fig.tight_layout()
    fig.savefig(out_dir / "bench.png", dpi=150)
    plt.close(fig)
    print(f"wrote {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vdtraj",
        description="variable-density k-space trajectory design and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="optimize a trajectory from a config file")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", default=None, help="output directory")
    gen.add_argument("--dry-run", action="store_true",
                     help="validate and print resource estimates without running")
    gen.add_argument("--threads", type=int, default=None)
    gen.set_defaults(func=cmd_generate)

    ana = sub.add_parser("analyze", help="analyze a trajectory file")
    ana.add_argument("mode", choices=["psf", "density", "waveforms"])
    ana.add_argument("--traj", required=True, help="SPKT or CSV trajectory")
    ana.add_argument("--out", default=".", help="report directory")
    ana.add_argument("--grid", default=None, help="PSF grid size (int or comma list)")
    ana.add_argument("--dc-iters", type=int, default=10,
                     help="density-compensation iterations")
    ana.add_argument("--allow-slow", action="store_true",
                     help="permit direct DFTs beyond the size budget")
    ana.add_argument("--bins", type=int, default=8, help="density histogram bins")
    ana.add_argument("--cutoff", type=float, default=0.25)
    ana.add_argument("--decay", type=float, default=2.0)
    ana.add_argument("--grid-n", type=int, default=None)
    ana.add_argument("--density-file", default=None, help="SPKD density grid")
    ana.add_argument("--config", default=None,
                     help="run config supplying hardware for waveform export")
    ana.add_argument("--g-max", type=float, default=0.04)
    ana.add_argument("--s-max", type=float, default=180.0)
    ana.add_argument("--gamma", type=float, default=42.576e6)
    ana.add_argument("--raster-dt", type=float, default=1e-5)
    ana.add_argument("--threads", type=int, default=None)
    ana.set_defaults(func=cmd_analyze)

    ben = sub.add_parser("bench", help="repulsion backend benchmark")
    ben.add_argument("--max-log2-p", type=int, default=16)
    ben.add_argument("--min-log2-p", type=int, default=10)
    ben.add_argument("--dims", type=int, default=3, choices=(2, 3))
    ben.add_argument("--precision", type=float, default=1e-4)
    ben.add_argument("--direct-cap-log2", type=int, default=14,
                     help="largest log2(p) for the direct reference column")
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--out", default=".")
    ben.add_argument("--threads", type=int, default=None)
    ben.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
