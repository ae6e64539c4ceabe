"""Command-line interface: ``ckmfield <command> [options]``.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical
abort, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import channel, dataio, metrics, wirare
from .errors import ConfigError, DimensionError, DomainError, FormatError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _seed(value):
    if value is not None:
        return int(value)
    env = os.environ.get("F4CKM_SEED")
    return int(env) if env not in (None, "") else 0


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    # a resolved-config file written by a previous run replays as its config block
    if set(cfg) == {"command", "config"} and isinstance(cfg["config"], dict):
        cfg = cfg["config"]
    return cfg


def _merge(defaults, config, flags):
    out = dict(defaults)
    out.update(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _write_resolved(path, command, resolved):
    with open(path, "w") as fh:
        json.dump({"command": command, "config": resolved}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_esnr(text):
    if text is None:
        return [None]
    try:
        vals = [None if v.strip().lower() == "off" else float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        vals = []
    if not vals:
        raise ConfigError(f"--esnr must be 'off' or a comma-separated list of dB values, got {text!r}")
    return vals


# gen-data ------------------------------------------------------------------------

def cmd_gen_data(args):
    conf = _load_config(args.config)
    flags = {"n_samples": args.samples, "reflection": args.reflection, "max_order": args.max_order}
    resolved = _merge({}, conf, flags)
    resolved["seed"] = _seed(args.seed if args.seed is not None else conf.get("seed"))
    spec = channel.SceneSpec.from_dict(resolved)
    samples = channel.generate_dataset(spec)
    meta = spec.to_dict()
    ds = dataio.from_samples(samples, spec.grid, meta)
    dataio.write_dataset(args.out, ds)
    _write_resolved(args.out + ".run.json", "gen-data", meta)
    print(f"wrote {args.out}: N_s={ds.dims[0]} N_c={ds.dims[1]} N_u={ds.dims[2]} N_b={ds.dims[3]}")
    return EXIT_OK


# train ---------------------------------------------------------------------------

def _train_flags(args):
    return {"epochs": args.epochs, "lr": args.lr, "batch": args.batch, "rays": args.rays,
            "radiators": args.radiators, "range": args.range, "hidden": args.hidden, "depth": args.depth,
            "shaping_width": args.shaping_width, "precision": args.precision}


def cmd_train(args):
    from .training import TrainConfig, Trainer

    ds = dataio.read_dataset(args.data)
    train_ds, val_ds = ds.split()
    os.makedirs(args.out, exist_ok=True)
    conf = _load_config(args.config)
    if args.resume:
        ckpt = os.path.join(args.out, "last.ckpt")
        trainer = Trainer.resume(train_ds, val_ds, ckpt, epochs=args.epochs)
        resolved = trainer.cfg.to_dict()
    else:
        resolved = _merge(TrainConfig().to_dict(), conf, _train_flags(args))
        resolved["seed"] = _seed(args.seed if args.seed is not None else conf.get("seed"))
        trainer = Trainer(train_ds, val_ds, TrainConfig.from_dict(resolved))
    resolved = dict(resolved, data=os.path.abspath(args.data), threads=args.threads)
    _write_resolved(os.path.join(args.out, "resolved_config.json"), "train", resolved)

    def log(row):
        if not args.quiet:
            print("epoch {epoch:d} train_nmse {train_nmse:.6g} val_nmse {val_nmse:.6g} "
                  "val_psnr {val_psnr_median:.3f} dB lr {lr:.3g} ({wall_time:.1f}s)".format(**row), flush=True)

    trainer.run(out_dir=args.out, log=log)
    return EXIT_OK


# eval ----------------------------------------------------------------------------

def _check_compat(model, ds):
    cfg = model.cfg
    dims = ds.dims[1:]
    if dims != (cfg.n_sub, cfg.n_rx, cfg.n_tx):
        raise DimensionError(f"dataset dims (N_c, N_u, N_b) = {dims} do not match checkpoint "
                             f"{(cfg.n_sub, cfg.n_rx, cfg.n_tx)}")
    if not np.allclose(ds.downlink_frequencies(), model.downlink_freqs, rtol=0, atol=1.0):
        raise DimensionError("dataset downlink frequencies differ from the checkpoint's")


def evaluate_model(model, ds, esnr_list, gamma_db=10.0, seed=0):
    """One EvalReport per ESNR point (``None`` = clean uplink)."""
    reports = []
    for esnr in esnr_list:
        up = ds.uplink if esnr is None else metrics.inject_esnr(ds.uplink, esnr, seed).astype(np.complex64)
        pred = model.predict(up)
        reports.append(metrics.evaluate(pred, ds.downlink, gamma_db, True, seed,
                                        meta={"esnr_db": "off" if esnr is None else esnr}))
    return reports


def cmd_eval(args):
    from .model import CsiPredictor

    ds = dataio.read_dataset(args.data)
    if args.split == "test":
        ds = ds.split()[1]
    model, _ = CsiPredictor.load(args.ckpt)
    _check_compat(model, ds)
    esnr = _parse_esnr(args.esnr)
    seed = _seed(args.seed)
    os.makedirs(args.out, exist_ok=True)
    resolved = {"data": os.path.abspath(args.data), "ckpt": os.path.abspath(args.ckpt), "split": args.split,
                "esnr": ["off" if e is None else e for e in esnr], "gamma_db": args.gamma_db, "seed": seed}
    _write_resolved(os.path.join(args.out, "resolved_config.json"), "eval", resolved)
    for e, rep in zip(esnr, evaluate_model(model, ds, esnr, args.gamma_db, seed)):
        tag = "off" if e is None else f"{e:g}dB"
        rep.write_csv(os.path.join(args.out, f"report_esnr_{tag}.csv"))
        rep.write_json(os.path.join(args.out, f"report_esnr_{tag}.json"))
        s = rep.summary()
        print(f"esnr {tag}: median PSNR {s['psnr_db'].get('median', math.inf):.3f} dB, "
              f"median SGCS {s['sgcs']['median']:.4f}, "
              f"median SE {s['spectral_efficiency']['median']:.4f} bps/Hz")
    return EXIT_OK


# heatmap -------------------------------------------------------------------------

def heatmap_grid(room, height, spacing):
    """Grid point coordinates: ``floor(L / spacing)`` cell centres per horizontal axis."""
    if not 0 < height < room[2]:
        raise ConfigError(f"height {height} m lies outside the room (0, {room[2]})")
    if not spacing > 0:
        raise ConfigError("grid spacing must be positive")
    nx = int(math.floor(room[0] / spacing))
    ny = int(math.floor(room[1] / spacing))
    if nx < 1 or ny < 1:
        raise ConfigError(f"spacing {spacing} m leaves no grid points in a {room[0]} x {room[1]} m room")
    return (np.arange(nx) + 0.5) * spacing, (np.arange(ny) + 0.5) * spacing


def gain_maps(spec, height, spacing, model=None):
    """Ground-truth (and optionally predicted) channel-gain maps in dB, shape (ny, nx)."""
    xs, ys = heatmap_grid(spec.room, height, spacing)
    truth = np.empty((ys.size, xs.size))
    pred = np.empty_like(truth) if model is not None else None
    for i, y in enumerate(ys):
        ups, dns = [], []
        for x in xs:
            up, dn, _ = channel.channel_at(spec, (x, y, height))
            ups.append(up.grid)
            dns.append(dn.grid)
        truth[i] = 10 * np.log10((np.abs(np.stack(dns)) ** 2).mean(axis=(1, 2, 3)))
        if model is not None:
            p = model.predict(np.stack(ups).astype(np.complex64))
            pred[i] = 10 * np.log10((np.abs(p) ** 2).mean(axis=(1, 2, 3)) + 1e-30)
    return xs, ys, truth, pred


def cmd_heatmap(args):
    with open(args.scene) as fh:
        scene = json.load(fh)
    if "config" in scene and "room" not in scene:
        scene = scene["config"]
    spec = channel.SceneSpec.from_dict(scene)
    model = None
    if args.ckpt:
        from .model import CsiPredictor

        model, _ = CsiPredictor.load(args.ckpt)
    spacing = args.spacing if args.spacing is not None else channel.SPEED_OF_LIGHT / spec.grid.downlink_center
    xs, ys, truth, pred = gain_maps(spec, args.height, spacing, model)
    os.makedirs(args.out, exist_ok=True)
    maps = {"truth": truth} if pred is None else {"truth": truth, "pred": pred}
    lo = min(float(m.min()) for m in maps.values())
    hi = max(float(m.max()) for m in maps.values())
    for name, m in maps.items():
        metrics.write_grid_csv(os.path.join(args.out, f"gain_{name}.csv"), m, xs, ys)
        metrics.write_pgm16(os.path.join(args.out, f"gain_{name}.pgm"), m, lo, hi)
    resolved = {"scene": os.path.abspath(args.scene), "ckpt": args.ckpt and os.path.abspath(args.ckpt),
                "height": args.height, "spacing": spacing, "grid": [int(ys.size), int(xs.size)],
                "pgm_range_db": [lo, hi]}
    _write_resolved(os.path.join(args.out, "resolved_config.json"), "heatmap", resolved)
    print(f"heatmap grid {ys.size} x {xs.size} at height {args.height} m, spacing {spacing:.4f} m")
    return EXIT_OK


# gradcheck / bench -----------------------------------------------------------------

def cmd_gradcheck(args):
    from .diagnostics import run_gradchecks

    results = run_gradchecks(seed=_seed(args.seed), max_entries=args.max_entries)
    ok = True
    for name, rep in results:
        ok &= rep.passed
        print(f"{name:<28s} max_rel_err={rep.max_error:.3e} tol={rep.tolerance:g} {'PASS' if rep.passed else 'FAIL'}")
        if args.verbose:
            for line in rep.lines():
                print("    " + line)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench(args):
    from .diagnostics import bench_presets

    seed = _seed(args.seed)
    rows = bench_presets(args.presets.split(","), repeat=args.repeat, seed=seed)
    print(f"{'model':<10s} {'latency_ms':>12s} {'GFLOPs':>10s} {'params_M':>10s}")
    for r in rows:
        print(f"{r['model']:<10s} {r['latency_ms']:>12.1f} {r['gflops']:>10.3f} {r['params_m']:>10.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_resolved(args.out + ".run.json", "bench",
                        {"presets": args.presets, "repeat": args.repeat, "seed": seed})
    return EXIT_OK


# replay ----------------------------------------------------------------------------

def replay_argv(record, path, out):
    """Rebuild the command line of a run from its resolved-config record."""
    command, conf = record.get("command"), record.get("config")
    if not isinstance(conf, dict):
        raise ConfigError(f"{path}: not a resolved-config file")
    if command == "gen-data":
        return ["gen-data", "--config", str(path), "--out", out]
    if command == "train":
        head = ["--threads", str(conf["threads"])] if conf.get("threads") else []
        return head + ["train", "--data", conf["data"], "--config", str(path), "--out", out, "--quiet"]
    if command == "eval":
        esnr = ",".join("off" if e == "off" else repr(float(e)) for e in conf["esnr"])
        return ["eval", "--data", conf["data"], "--ckpt", conf["ckpt"], "--out", out, "--split", conf["split"],
                "--esnr", esnr, "--gamma-db", repr(conf["gamma_db"]), "--seed", str(conf["seed"])]
    if command == "heatmap":
        argv = ["heatmap", "--scene", conf["scene"], "--height", repr(conf["height"]),
                "--spacing", repr(conf["spacing"]), "--out", out]
        return argv + (["--ckpt", conf["ckpt"]] if conf.get("ckpt") else [])
    if command == "bench":
        return ["bench", "--presets", conf["presets"], "--repeat", str(conf["repeat"]),
                "--seed", str(conf["seed"]), "--out", out]
    raise ConfigError(f"{path}: cannot replay command {command!r}")


def cmd_replay(args):
    with open(args.file) as fh:
        record = json.load(fh)
    if not isinstance(record, dict):
        raise ConfigError(f"{args.file}: not a resolved-config file")
    try:
        argv = replay_argv(record, args.file, args.out)
    except KeyError as exc:
        raise ConfigError(f"{args.file}: resolved config lacks {exc}") from None
    print("replaying: ckmfield " + " ".join(argv))
    return main(argv)


# entry point -----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ckmfield", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap (1 = reproducible mode)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesise an image-method dataset")
    g.add_argument("--config", help="JSON scene description")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--samples", type=int)
    g.add_argument("--reflection", type=float)
    g.add_argument("--max-order", type=int, dest="max_order")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a predictor")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--rays", type=int)
    t.add_argument("--radiators", type=int)
    t.add_argument("--range", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--shaping-width", type=int, dest="shaping_width")
    t.add_argument("--precision", choices=("single", "double"))
    t.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--esnr", default="off", help="'off' or comma-separated dB list, e.g. 6,12,18")
    e.add_argument("--out", required=True)
    e.add_argument("--split", choices=("test", "all"), default="test")
    e.add_argument("--gamma-db", type=float, default=10.0, dest="gamma_db")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("heatmap", help="channel-gain maps on a horizontal grid")
    h.add_argument("--ckpt")
    h.add_argument("--scene", required=True, help="dataset sidecar or scene JSON")
    h.add_argument("--height", type=float, default=1.2)
    h.add_argument("--spacing", type=float, help="grid spacing in m (default: one downlink wavelength)")
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_heatmap)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--seed", type=int)
    gc.add_argument("--max-entries", type=int, default=24, dest="max_entries")
    gc.add_argument("--verbose", action="store_true")
    gc.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="latency / FLOPs / parameter table")
    b.add_argument("--presets", default="full,lite")
    b.add_argument("--repeat", type=int, default=1)
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("replay", help="re-run a command from its resolved-config file")
    r.add_argument("file")
    r.add_argument("--out", required=True, help="output path of the replayed run")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (ConfigError, DimensionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON config: {exc}", file=sys.stderr)
        return EXIT_CONFIG



if __name__ == "__main__":
    sys.exit(main())
