"""Plain-text run configuration.

One assignment per line, ``section.key = value``, where ``value`` is a JSON
literal (``0.14``, ``"qwp"``, ``true``, ``null``, ``[30, 60]``). A line
``[section]`` sets a prefix for the bare keys that follow. ``#`` starts a
comment outside of a value. Unknown keys are rejected and every key has a
typed, documented default. The canonical text lists every key in sorted
order; its SHA-256 is the config hash recorded in run manifests.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class Key:
    type: str  # int | float | bool | str | floats | ints
    default: object
    doc: str
    nullable: bool = False
    choices: tuple | None = None
    length: int | None = None  # fixed list length


DEFAULT_RPMS = [30.0, 60.0, 100.0, 200.0, 500.0, 1000.0]

SCHEMA: dict[str, Key] = {
    "run.seed": Key("int", 0, "seed for threshold mismatch and leak noise"),
    "run.jobs": Key("int", 1, "worker threads for event generation"),
    "geometry.width": Key("int", 346, "sensor width in subpixels (even)"),
    "geometry.height": Key("int", 260, "sensor height in subpixels (even)"),
    "geometry.mosaic_code": Key("int", 0, "2x2 polarizer mosaic id", choices=(0, 1, 2, 3)),
    "stimulus.kind": Key("str", "rotating", "stimulus type", choices=("rotating", "qwp", "hdr_fan")),
    "stimulus.rpm": Key("float", 30.0, "mechanical rotation speed"),
    "stimulus.disc_fraction": Key("float", 1.0 / 3.0, "fraction of the frame covered by the stimulus disc"),
    "stimulus.base_flux": Key("float", 1.0, "flux inside the disc (rotating, qwp)"),
    "stimulus.background_flux": Key("float", 0.5, "unpolarized flux outside the disc (rotating, qwp)"),
    "stimulus.dolp": Key("float", 1.0, "DoLP inside the disc (rotating)"),
    "stimulus.phase": Key("float", 0.0, "polarizer angle at t = 0, radians"),
    "stimulus.qwp_axis_angle": Key("float", 0.0, "quarter-wave plate fast axis, radians (qwp)"),
    "stimulus.bright_flux": Key("float", 2000.0, "flux on the bright half (hdr_fan)"),
    "stimulus.dark_flux": Key("float", 1.0, "flux on the dark half (hdr_fan)"),
    "stimulus.sector_count": Key("int", 6, "number of fan sectors (hdr_fan)"),
    "stimulus.sector_aop_step_deg": Key("float", 30.0, "AoP step between fan sectors, degrees (hdr_fan)"),
    "optics.extinction_ratio": Key("float", 40.0, "micro-polarizer extinction ratio (Infinity for ideal)"),
    "simulate.t0_us": Key("float", 0.0, "simulation start"),
    "simulate.duration_s": Key("float", 1.0, "simulated time span"),
    "simulate.region": Key("ints", None, "subpixel box [x0, y0, x1, y1] to simulate, null for the full sensor",
                           nullable=True, length=4),
    "simulate.frames": Key("bool", True, "also write the APS frame file"),
    "dvs.theta_on": Key("float", 0.14, "ON contrast threshold (log units)"),
    "dvs.theta_off": Key("float", 0.14, "OFF contrast threshold (log units)"),
    "dvs.threshold_sigma": Key("float", 0.035, "log-normal per-pixel threshold mismatch"),
    "dvs.leak_rate_hz": Key("float", 0.7, "ON leak event rate per pixel"),
    "dvs.refractory_us": Key("int", 100, "per-pixel refractory period"),
    "dvs.photoreceptor_cutoff_hz": Key("float", None, "first-order photoreceptor cutoff, null = off",
                                       nullable=True),
    "aps.frame_rate_hz": Key("float", 20.0, "frame rate"),
    "aps.exposure_us": Key("float", 20000.0, "exposure time"),
    "aps.adc_bits": Key("int", 10, "ADC resolution"),
    "aps.full_scale_flux": Key("float", 1.7, "flux giving the top ADC code at the reference exposure"),
    "aps.dark_offset_dn": Key("int", 0, "dark offset added to every sample"),
    "aps.reference_exposure_us": Key("float", 20000.0, "exposure at which full_scale_flux is defined"),
    "recon.theta_on": Key("float", None, "reconstructor ON threshold, null = dvs.theta_on", nullable=True),
    "recon.theta_off": Key("float", None, "reconstructor OFF threshold, null = dvs.theta_off", nullable=True),
    "recon.events_f3db_hz": Key("float", 0.5, "events-method highpass corner"),
    "recon.neighbor_radius": Key("int", 1, "events-method same-angle neighbour radius (macropixels)"),
    "recon.cf_f3db_hz": Key("float", 1.6, "complementary-filter crossover"),
    "recon.cf_lambda": Key("float", 0.1, "minimum APS weight near the exposure limits"),
    "recon.cf_limits_dn": Key("floats", [10.0, 200.0], "APS exposure limits on the limit_bits scale", length=2),
    "recon.cf_limit_bits": Key("int", 8, "bit depth the CF limits refer to"),
    "recon.cf_adaptive": Key("bool", True, "enable the adaptive APS weight"),
    "recon.output_hz": Key("float", 20.0, "Stokes CSV output rate for events and cf"),
    "recon.roi": Key("ints", None, "macropixel box [X0, Y0, X1, Y1] written to CSV, null = all",
                     nullable=True, length=4),
    "sweep.stimulus": Key("str", "rotating", "sweep stimulus", choices=("rotating", "qwp")),
    "sweep.rpm_list": Key("floats", DEFAULT_RPMS, "rotation speeds"),
    "sweep.methods": Key("strs", ["frames", "events", "cf"], "methods to evaluate"),
    "sweep.roi_size": Key("int", 12, "ROI side in subpixels, centred"),
    "sweep.duration_s": Key("float", 3.0, "simulated time per speed"),
    "sweep.grid_hz": Key("float", 1000.0, "evaluation grid rate"),
    "sweep.discard_s": Key("float", None, "initial span excluded from the MAE, null = two events time constants",
                           nullable=True),
    "sweep.align": Key("bool", True, "remove a constant AoP offset per method before scoring"),
    "sweep.frames_readout": Key("str", "hold", "frames value between frames", choices=("hold", "interp")),
    "sweep.ideal_sensor": Key("bool", True, "zero mismatch and leak for the sweep"),
    "stats.roi": Key("ints", None, "subpixel box [x0, y0, x1, y1], null = centred 12x12", nullable=True, length=4),
    "stats.bins": Key("int", 50, "histogram bins"),
    "stats.lo_us": Key("float", 10.0, "lowest histogram edge"),
    "stats.hi_us": Key("float", 1e7, "highest histogram edge"),
    "stats.rate_bin_us": Key("float", 10000.0, "rate-vs-time bin width"),
    "hdr.width": Key("int", 96, "sensor width for the fan run"),
    "hdr.height": Key("int", 72, "sensor height for the fan run"),
    "hdr.disc_fraction": Key("float", 0.5, "fan disc area fraction"),
    "hdr.rpm": Key("float", 200.0, "fan speed"),
    "hdr.ratio": Key("float", 2000.0, "bright / dark illumination ratio"),
    "hdr.dark_flux": Key("float", 1.0, "dark-half flux"),
    "hdr.duration_s": Key("float", 2.0, "simulated time"),
    "hdr.discard_s": Key("float", 1.0, "initial span excluded from scoring"),
    "hdr.frames_full_scale": Key("floats", None, "frame full-scale fluxes to try, null = dark- and bright-exposed",
                                 nullable=True),
    "hdr.dolp_mask": Key("float", 0.1, "samples below this DoLP are masked"),
    "hdr.mae_limit_deg": Key("float", 15.0, "recoverability MAE limit"),
    "hdr.max_masked_fraction": Key("float", 0.5, "recoverability masked-fraction limit"),
}

# config sections each subcommand reads
COMMAND_SECTIONS = {
    "simulate": ("run", "geometry", "stimulus", "optics", "simulate", "dvs", "aps"),
    "reconstruct": ("dvs", "recon"),
    "sweep": ("run", "geometry", "stimulus", "optics", "dvs", "aps", "recon", "sweep"),
    "stats": ("stats",),
    "hdr": ("run", "optics", "dvs", "aps", "recon", "hdr"),
    "convert": (),
}


def keys_for(command: str) -> list[str]:
    secs = COMMAND_SECTIONS[command]
    return [k for k in SCHEMA if k.split(".", 1)[0] in secs]


def _check(key: str, value):
    spec = SCHEMA[key]
    if value is None:
        if spec.nullable:
            return None
        raise ConfigError(f"{key} may not be null")

    def scalar(t, v):
        if t == "bool":
            if not isinstance(v, bool):
                raise ConfigError(f"{key} expects true/false, got {v!r}")
            return v
        if isinstance(v, bool):
            raise ConfigError(f"{key} expects a {t}, got {v!r}")
        if t == "int":
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            if not isinstance(v, int):
                raise ConfigError(f"{key} expects an integer, got {v!r}")
            return v
        if t == "float":
            if not isinstance(v, (int, float)):
                raise ConfigError(f"{key} expects a number, got {v!r}")
            v = float(v)
            if math.isnan(v):
                raise ConfigError(f"{key} may not be NaN")
            return v
        if not isinstance(v, str):
            raise ConfigError(f"{key} expects a string, got {v!r}")
        return v

    if spec.type in ("floats", "ints", "strs"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        item = {"floats": "float", "ints": "int", "strs": "str"}[spec.type]
        out = [scalar(item, v) for v in value]
        if spec.length is not None and len(out) != spec.length:
            raise ConfigError(f"{key} expects {spec.length} values, got {len(out)}")
        return out
    v = scalar(spec.type, value)
    if spec.choices is not None and v not in spec.choices:
        raise ConfigError(f"{key} must be one of {list(spec.choices)}, got {v!r}")
    return v


def _split_value(text: str, where: str):
    text = text.strip()
    if not text:
        raise ConfigError(f"{where}: missing value")
    try:
        v, end = json.JSONDecoder().raw_decode(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{where}: value is not a JSON literal ({e.msg})") from None
    rest = text[end:].strip()
    if rest and not rest.startswith("#"):
        raise ConfigError(f"{where}: unexpected text after value: {rest!r}")
    return v


class RunConfig:
    """Validated mapping from dotted keys to values; unspecified keys hold their defaults."""

    def __init__(self, values: dict | None = None):
        self._v = {k: s.default for k, s in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    # access
    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        v = self._v[key]
        return list(v) if isinstance(v, list) else v

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self._v[key] = _check(key, value)

    def as_dict(self) -> dict:
        return {k: self[k] for k in sorted(self._v)}

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.as_dict() == other.as_dict()

    # text form
    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        seen = {}
        prefix = ""
        for n, line in enumerate(text.splitlines(), 1):
            s = line.strip()
            where = f"{source}:{n}"
            if not s or s.startswith("#"):
                continue
            if s.startswith("["):
                close = s.find("]")
                if close < 0 or (s[close + 1 :].strip() and not s[close + 1 :].strip().startswith("#")):
                    raise ConfigError(f"{where}: malformed section header")
                prefix = s[1:close].strip()
                continue
            if "=" not in s:
                raise ConfigError(f"{where}: expected 'key = value'")
            k, v = s.split("=", 1)
            k = k.strip()
            if prefix and "." not in k:
                k = f"{prefix}.{k}"
            if k not in SCHEMA:
                raise ConfigError(f"{where}: unknown config key {k!r}")
            if k in seen:
                raise ConfigError(f"{where}: {k} already set on line {seen[k]}")
            seen[k] = n
            cfg.set(k, _split_value(v, where))
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                return cls.parse(f.read(), str(path))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None

    def to_text(self, docs: bool = False) -> str:
        lines = []
        for k in sorted(self._v):
            if docs:
                lines.append(f"# {SCHEMA[k].doc}")
            lines.append(f"{k} = {json.dumps(self._v[k])}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``key=value`` strings in order (last writer wins). Bare words are taken as strings."""
        out = RunConfig(self.as_dict())
        for o in overrides or ():
            if "=" not in o:
                raise ConfigError(f"override {o!r} is not key=value")
            k, v = o.split("=", 1)
            k = k.strip()
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r} in override")
            try:
                val = json.loads(v)
            except json.JSONDecodeError:
                val = v.strip()
            out.set(k, val)
        return out

    # object builders
    def geometry(self):
        from ..sensorsim.geometry import SensorGeometry

        return SensorGeometry(self["geometry.width"], self["geometry.height"], self["geometry.mosaic_code"])

    def dvs_params(self, ideal: bool = False):
        from ..sensorsim.dvs import DvsPixelParams

        kw = dict(theta_on=self["dvs.theta_on"], theta_off=self["dvs.theta_off"],
                  threshold_sigma=self["dvs.threshold_sigma"], leak_rate_hz=self["dvs.leak_rate_hz"],
                  refractory_us=self["dvs.refractory_us"], photoreceptor_cutoff_hz=self["dvs.photoreceptor_cutoff_hz"],
                  rng_seed=self["run.seed"])
        if ideal:
            kw.update(threshold_sigma=0.0, leak_rate_hz=0.0)
        return DvsPixelParams(**kw)

    def aps_params(self):
        from ..sensorsim.aps import ApsParams

        return ApsParams(self["aps.frame_rate_hz"], self["aps.exposure_us"], self["aps.adc_bits"],
                         self["aps.full_scale_flux"], self["aps.dark_offset_dn"], self["aps.reference_exposure_us"])

    def stimulus(self, geom=None):
        from ..sensorsim.stimulus import HdrFan, PolarizerPlusQwp, RotatingPolarizer

        g = geom or self.geometry()
        common = dict(frame_width=g.width, frame_height=g.height, disc_fraction=self["stimulus.disc_fraction"])
        kind = self["stimulus.kind"]
        if kind == "rotating":
            return RotatingPolarizer(**common, rpm=self["stimulus.rpm"], base_flux=self["stimulus.base_flux"],
                                     background_flux=self["stimulus.background_flux"], dolp=self["stimulus.dolp"],
                                     phase=self["stimulus.phase"])
        if kind == "qwp":
            return PolarizerPlusQwp(**common, rpm=self["stimulus.rpm"], qwp_axis_angle=self["stimulus.qwp_axis_angle"],
                                    base_flux=self["stimulus.base_flux"],
                                    background_flux=self["stimulus.background_flux"], phase=self["stimulus.phase"])
        return HdrFan(**common, rpm=self["stimulus.rpm"], sector_count=self["stimulus.sector_count"],
                      sector_aop_step=math.radians(self["stimulus.sector_aop_step_deg"]),
                      bright_flux=self["stimulus.bright_flux"], dark_flux=self["stimulus.dark_flux"],
                      phase=self["stimulus.phase"])

    def recon_thresholds(self):
        on = self["recon.theta_on"]
        off = self["recon.theta_off"]
        return (self["dvs.theta_on"] if on is None else on, self["dvs.theta_off"] if off is None else off)

    def cf_params(self):
        from ..recon.cf import CfParams

        on, off = self.recon_thresholds()
        return CfParams(self["recon.cf_f3db_hz"], on, off, self["recon.cf_lambda"], tuple(self["recon.cf_limits_dn"]),
                        self["recon.cf_limit_bits"], self["recon.cf_adaptive"])

    def sweep_spec(self):
        from ..evalbench.sweep import SweepSpec

        on, off = self.recon_thresholds()
        dvs = self.dvs_params(ideal=self["sweep.ideal_sensor"])
        cf = self.cf_params()
        return SweepSpec(rpm_list=tuple(self["sweep.rpm_list"]), stimulus=self["sweep.stimulus"],
                         methods=tuple(self["sweep.methods"]), geometry=self.geometry(), dvs=dvs,
                         aps=self.aps_params(), extinction_ratio=self["optics.extinction_ratio"],
                         roi_size=self["sweep.roi_size"], duration_s=self["sweep.duration_s"],
                         grid_hz=self["sweep.grid_hz"], events_f3db_hz=self["recon.events_f3db_hz"],
                         neighbor_radius=self["recon.neighbor_radius"], cf=cf,
                         base_flux=self["stimulus.base_flux"], background_flux=self["stimulus.background_flux"],
                         qwp_axis_angle=self["stimulus.qwp_axis_angle"], dolp=self["stimulus.dolp"],
                         discard_s=self["sweep.discard_s"], align=self["sweep.align"],
                         frames_readout=self["sweep.frames_readout"], jobs=self["run.jobs"],
                         recon_thresholds=(on, off))

    def hdr_spec(self):
        from ..evalbench.hdr import HdrSpec

        fs = self["hdr.frames_full_scale"]
        return HdrSpec(width=self["hdr.width"], height=self["hdr.height"], disc_fraction=self["hdr.disc_fraction"],
                       rpm=self["hdr.rpm"], ratio=self["hdr.ratio"], dark_flux=self["hdr.dark_flux"],
                       extinction_ratio=self["optics.extinction_ratio"], duration_s=self["hdr.duration_s"],
                       discard_s=self["hdr.discard_s"], dvs=self.dvs_params(ideal=True), aps=self.aps_params(),
                       frames_full_scale=tuple(fs) if fs else None, events_f3db_hz=self["recon.events_f3db_hz"],
                       neighbor_radius=self["recon.neighbor_radius"], cf=self.cf_params(),
                       recon_thresholds=self.recon_thresholds(), dolp_mask=self["hdr.dolp_mask"], mae_limit_deg=self["hdr.mae_limit_deg"],
                       max_masked_fraction=self["hdr.max_masked_fraction"], jobs=self["run.jobs"])


def describe_keys(keys) -> str:
    """Help text listing keys with type, default and doc."""
    rows = []
    for k in keys:
        s = SCHEMA[k]
        rows.append(f"  {k} ({s.type}, default {json.dumps(s.default)}): {s.doc}")
    return "\n".join(rows)


__all__ = ["COMMAND_SECTIONS", "Key", "RunConfig", "SCHEMA", "describe_keys", "keys_for"]
