"""``polcam`` command line: simulate, reconstruct, sweep, stats, hdr, convert.

Exit codes: 0 success, 2 configuration error, 3 file/IO error, 4 domain error.
Every command writes ``manifest.json`` (merged config, its hash, seed,
versions, inputs and outputs) into its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys

import numpy as np

from . import __version__
from .errors import FileFormatError, MissingInputError, PolcamError
from .evio.binary import (EventFileHeader, FrameFileHeader, EventReader, EventWriter, PolEventWriter, iter_events,
                          read_events, read_frames, read_polevents, sniff, write_frames)
from .evio.config import RunConfig, describe_keys, keys_for
from .evio.csvio import export_csv, export_events_csv, grid_samples, polevent_samples

log = logging.getLogger("polcam")

COMMANDS = ("simulate", "reconstruct", "sweep", "stats", "hdr", "convert")
_HELP = {
    "simulate": "simulate DVS events (and APS frames) for a stimulus",
    "reconstruct": "reconstruct Stokes / AoP / DoLP from event and frame files",
    "sweep": "accuracy versus rotation speed for each method",
    "stats": "event rate and inter-event-interval histogram of an event file",
    "hdr": "HDR fan comparison of sector AoP recoverability",
    "convert": "convert an event or polarization-event file to CSV",
}


# -- helpers ---------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import numba

    return {"polcam": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, command: str, cfg: RunConfig | None, argv, inputs=(), outputs=(), extra=None) -> str:
    m = {
        "command": command,
        "argv": list(argv),
        "config": cfg.as_dict() if cfg else None,
        "config_hash": cfg.hash() if cfg else None,
        "seed": cfg["run.seed"] if cfg else None,
        "versions": _versions(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(os.path.basename(str(p)) for p in outputs),
    }
    if extra:
        m.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(m, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    return path


def _json_default(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    raise TypeError(type(v))


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    ov = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        ov.append(f"run.seed={args.seed}")
    if getattr(args, "jobs", None) is not None:
        ov.append(f"run.jobs={args.jobs}")
    if getattr(args, "theta", None) is not None:
        ov += [f"recon.theta_on={args.theta}", f"recon.theta_off={args.theta}"]
    return cfg.with_overrides(ov)


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# -- commands --------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig, argv) -> int:
    from .sensorsim.aps import simulate_aps
    from .sensorsim.dvs import DvsSensor

    out = _out_dir(args)
    g = cfg.geometry()
    stim = cfg.stimulus(g)
    t0 = cfg["simulate.t0_us"]
    t1 = t0 + cfg["simulate.duration_s"] * 1e6
    region = cfg["simulate.region"]
    if region is not None:
        region = tuple(region)
    er = cfg["optics.extinction_ratio"]
    events = DvsSensor(g, cfg.dvs_params()).simulate(stim, er, t0, t1, region=region, jobs=cfg["run.jobs"])
    outputs = []
    ev_path = os.path.join(out, "events.pdevt")
    with EventWriter(ev_path, EventFileHeader.for_geometry(g)) as w:
        w.write(events)
    outputs.append(ev_path)
    n_frames = 0
    if cfg["simulate.frames"]:
        aps = cfg.aps_params()
        frames = simulate_aps(stim, g, aps, er, t0, t1, region=region)
        fr_path = os.path.join(out, "frames.pdfrm")
        write_frames(fr_path, FrameFileHeader(g.width, g.height, g.mosaic_code, aps.adc_bits, 0, aps.dark_offset_dn),
                     frames)
        outputs.append(fr_path)
        n_frames = len(frames)
    write_manifest(out, "simulate", cfg, argv, outputs=outputs, extra={"n_events": len(events), "n_frames": n_frames})
    log.info("wrote %d events and %d frames to %s", len(events), n_frames, out)
    print(f"events: {len(events)}  frames: {n_frames}  -> {out}")
    return 0


def _geometry_from(header):
    from .sensorsim.geometry import SensorGeometry

    return SensorGeometry(header.width, header.height, header.mosaic_code)


def _output_times(t_first: float, t_last: float, rate_hz: float) -> np.ndarray:
    step = 1e6 / rate_hz
    return np.arange(math.ceil(t_first / step), math.floor(t_last / step) + 1) * step


def _roi_subpixels(g, roi):
    X0, Y0, X1, Y1 = roi or (0, 0, g.macro_width, g.macro_height)
    if not (0 <= X0 < X1 <= g.macro_width and 0 <= Y0 < Y1 <= g.macro_height):
        from .errors import ConfigError

        raise ConfigError(f"recon.roi {roi} outside the {g.macro_width}x{g.macro_height} macropixel grid")
    sub = (2 * X0, 2 * Y0, 2 * X1, 2 * Y1)
    ys, xs = np.mgrid[sub[1] : sub[3], sub[0] : sub[2]]
    return (X0, Y0, X1, Y1), (ys * g.width + xs).ravel(), (sub[3] - sub[1], sub[2] - sub[0])


def cmd_reconstruct(args, cfg: RunConfig, argv) -> int:
    from .recon.cf import ComplementaryFilter
    from .recon.events import EventsFilter, polevent_records
    from .recon.frames import StokesGrid, channel_planes, frames_reconstruct

    method = args.method
    if method in ("events", "cf") and not args.events:
        raise MissingInputError(f"method '{method}' needs an event stream (--events); none was given")
    if method in ("frames", "cf") and not args.frames:
        raise MissingInputError(f"method '{method}' needs APS frames (--frames); none was given")
    if args.events and sniff(args.events) != "events":
        raise MissingInputError(f"{args.events} holds no event stream (method '{method}' needs DVS events)")
    out = _out_dir(args)
    inputs = [p for p in (args.events, args.frames) if p]
    fheader, frames = read_frames(args.frames) if args.frames else (None, [])
    eheader = EventReader(args.events).header if args.events else None
    g = _geometry_from(eheader or fheader)
    roi, idx, shape = _roi_subpixels(g, cfg["recon.roi"])
    X0, Y0, X1, Y1 = roi
    on, off = cfg.recon_thresholds()
    csv_path = os.path.join(out, f"stokes_{method}.csv")
    outputs = [csv_path]

    def sub_grid(values):
        block = values.reshape(shape)
        full = np.zeros((g.height, g.width))
        full[2 * Y0 : 2 * Y1, 2 * X0 : 2 * X1] = block
        return channel_planes(full, g)[Y0:Y1, X0:X1]

    def relabel(rows):
        for r in rows:
            r["X"] += X0
            r["Y"] += Y0
            yield r

    if method == "frames":
        grids = []
        for fr in frames:
            sg = frames_reconstruct(fr, g, fheader.dark_offset_dn)
            grids.append(StokesGrid(sg.t_us, sg.s0[Y0:Y1, X0:X1], sg.s1[Y0:Y1, X0:X1], sg.s2[Y0:Y1, X0:X1],
                                    sg.saturated[Y0:Y1, X0:X1], "frames"))
        n = export_csv(relabel(r for sg in grids for r in grid_samples(sg)), csv_path)
    elif method == "events":
        filt = EventsFilter(g, cfg["recon.events_f3db_hz"], on, off, cfg["recon.neighbor_radius"])
        reader = EventReader(args.events)
        chunks = list(reader) if reader.count else []
        if not chunks:
            raise MissingInputError(f"{args.events} contains no events")
        t_first = int(chunks[0]["t"][0])
        t_last = int(chunks[-1]["t"][-1])
        times = _output_times(t_first, t_last, cfg["recon.output_hz"])
        pol_writer = PolEventWriter(os.path.join(out, "polevents.pdpol"), eheader) if args.polevents else None
        rows = []
        pending = times
        for ch in chunks:
            samp, aop = filt.process(ch, pending, idx, polarization=pol_writer is not None)
            rows.append(samp)
            pending = filt.pending_times
            if pol_writer is not None:
                pol_writer.write(polevent_records(ch, aop))
        rows.append(filt.flush())
        samples = np.concatenate([r for r in rows if len(r)]) if any(len(r) for r in rows) else np.zeros((0, len(idx)))
        if pol_writer is not None:
            pol_writer.close()
            outputs.append(pol_writer.path)

        def event_rows():
            for t, vals in zip(times, samples):
                d = sub_grid(vals)
                undefined = ~np.any(d != 0, axis=-1)
                aop = 0.5 * np.arctan2(d[..., 1] - d[..., 3], d[..., 0] - d[..., 2])
                for Y in range(d.shape[0]):
                    for X in range(d.shape[1]):
                        yield {"t_us": t, "X": X + X0, "Y": Y + Y0, "method": "events",
                               "aop": None if undefined[Y, X] else float(aop[Y, X])}

        n = export_csv(event_rows(), csv_path)
    else:
        _, events = read_events(args.events)
        cf = ComplementaryFilter(g, cfg.cf_params(), fheader.adc_bits, fheader.dark_offset_dn)
        t_first = min(int(events["t"][0]) if len(events) else math.inf, frames[0].t_end_us if frames else math.inf)
        t_last = max(int(events["t"][-1]) if len(events) else -1, frames[-1].t_end_us if frames else -1)
        times = _output_times(t_first, t_last, cfg["recon.output_hz"])
        # the filter has no output before its first frame
        times = times[times >= frames[0].t_end_us] if frames else times[:0]
        lv = cf.run(events, frames, times, idx)

        def cf_rows():
            for t, vals in zip(times, lv):
                i = np.exp(sub_grid(vals))
                sg = StokesGrid(t, i[..., 0] + i[..., 2], i[..., 0] - i[..., 2], i[..., 1] - i[..., 3], None, "cf")
                yield from relabel(grid_samples(sg))

        n = export_csv(cf_rows(), csv_path)
        if cf.state.dropped_events:
            log.info("dropped %d events that arrived before the first frame", cf.state.dropped_events)
    write_manifest(out, "reconstruct", cfg, argv, inputs=inputs, outputs=outputs,
                   extra={"method": method, "rows": n})
    print(f"{method}: {n} rows -> {csv_path}")
    return 0


def cmd_sweep(args, cfg: RunConfig, argv) -> int:
    from .evalbench.sweep import run_sweep

    out = _out_dir(args)
    spec = cfg.sweep_spec()
    res = run_sweep(spec)
    csv_path = os.path.join(out, "sweep.csv")
    json_path = os.path.join(out, "sweep.json")
    res.to_csv(csv_path)
    with open(json_path, "w") as f:
        f.write(res.to_json() + "\n")
    print(f"{'rpm':>7} {'method':>7} {'aop_mae':>8} {'dolp_mae':>9} {'rate/px':>9}")
    for r in res.rows:
        dm = "" if r.dolp_mae is None else f"{r.dolp_mae:.4f}"
        print(f"{r.rpm:7.0f} {r.method:>7} {r.aop_mae_deg:8.3f} {dm:>9} {r.event_rate_hz_per_pixel:9.1f}")
    write_manifest(out, "sweep", cfg, argv, outputs=[csv_path, json_path])
    return 0


def cmd_stats(args, cfg: RunConfig, argv) -> int:
    from .evalbench.stats import event_statistics
    from .sensorsim.geometry import SensorGeometry

    out = _out_dir(args)
    header, events = read_events(args.events)
    roi = cfg["stats.roi"]
    if args.roi:
        roi = list(args.roi)
    if roi is None:
        roi = SensorGeometry(header.width, header.height, header.mosaic_code).centered_roi(12)
    st = event_statistics(events, tuple(roi), cfg["stats.bins"], cfg["stats.lo_us"], cfg["stats.hi_us"],
                          rate_bin_us=cfg["stats.rate_bin_us"])
    h_path = os.path.join(out, "interevent_histogram.csv")
    r_path = os.path.join(out, "rate_vs_time.csv")
    with open(h_path, "w") as f:
        f.write("lo_us,hi_us,count\n")
        for lo, hi, c in st.to_rows():
            f.write(f"{lo!r},{hi!r},{c}\n")
    with open(r_path, "w") as f:
        f.write("t_us,rate_hz_per_pixel\n")
        for t, r in zip(st.rate_t_us, st.rate_hz_per_pixel):
            f.write(f"{float(t)!r},{float(r)!r}\n")
    summary = {"mode_us": st.mode_us, "mean_rate_hz_per_pixel": st.mean_rate_hz_per_pixel,
               "n_intervals": st.n_intervals, "n_pixels": st.n_pixels, "roi": list(roi)}
    print(json.dumps(summary, default=_json_default))
    write_manifest(out, "stats", cfg, argv, inputs=[args.events], outputs=[h_path, r_path], extra={"summary": summary})
    return 0


def cmd_hdr(args, cfg: RunConfig, argv) -> int:
    from .evalbench.hdr import GROUPS, hdr_comparison

    out = _out_dir(args)
    rep = hdr_comparison(cfg.hdr_spec())
    path = os.path.join(out, "hdr_sectors.csv")
    with open(path, "w") as f:
        f.write("method,sector,group,aop_mae_deg,masked_fraction,n_samples,recoverable\n")
        for m, k, grp, mae, mf, n, ok in rep.as_rows():
            f.write(f"{m},{k},{grp},{'' if math.isnan(mae) else repr(mae)},{mf!r},{n},{str(ok).lower()}\n")
    summary = {m: {g: rep.group_recoverable(m, g) for g in GROUPS} for m in rep.methods}
    for m, v in summary.items():
        print(f"{m:>10}: " + "  ".join(f"{g}={'ok' if ok else 'FAIL'}" for g, ok in v.items()))
    write_manifest(out, "hdr", cfg, argv, outputs=[path],
                   extra={"recoverable": summary, "full_scales": list(rep.full_scales)})
    return 0


def cmd_convert(args, cfg: RunConfig, argv) -> int:
    kind = sniff(args.input)
    out = _out_dir(args)
    base = os.path.splitext(os.path.basename(args.input))[0]
    path = os.path.join(out, f"{base}.csv")
    if kind == "events":
        n = export_events_csv(iter_events(args.input), path)
    elif kind == "polevents":
        _, rec = read_polevents(args.input)
        n = export_csv(polevent_samples(rec), path)
    else:
        raise FileFormatError(f"{args.input}: convert reads event and polarization-event files, not {kind}")
    write_manifest(out, "convert", cfg, argv, inputs=[args.input], outputs=[path], extra={"rows": n})
    print(f"{n} rows -> {path}")
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polcam", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"polcam {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        keys = keys_for(name)
        epilog = ("config keys read:\n" + describe_keys(keys)) if keys else "config keys read: none"
        sp = sub.add_parser(name, help=_HELP[name], description=_HELP[name], epilog=epilog,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="config file (section.key = JSON value lines)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key; repeatable")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        if name in ("simulate", "sweep", "hdr"):
            sp.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
            sp.add_argument("--jobs", type=int, help="worker threads (shorthand for --set run.jobs=N)")
        if name == "reconstruct":
            sp.add_argument("--method", required=True, choices=("frames", "events", "cf"))
            sp.add_argument("--events", help="event file (.pdevt)")
            sp.add_argument("--frames", help="frame file (.pdfrm)")
            sp.add_argument("--theta", type=float, help="reconstructor threshold for ON and OFF")
            sp.add_argument("--polevents", action="store_true", help="events method: also write polevents.pdpol")
        if name == "stats":
            sp.add_argument("--events", required=True, help="event file (.pdevt)")
            sp.add_argument("--roi", type=int, nargs=4, metavar=("X0", "Y0", "X1", "Y1"), help="subpixel box")
        if name == "convert":
            sp.add_argument("input", help="event or polarization-event file")
    return p


_DISPATCH = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "sweep": cmd_sweep, "stats": cmd_stats,
             "hdr": cmd_hdr, "convert": cmd_convert}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args)
        return _DISPATCH[args.command](args, cfg, argv)
    except PolcamError as e:
        print(f"polcam {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"polcam {args.command}: error: {e}", file=sys.stderr)
        return FileFormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
