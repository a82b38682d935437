"""Analytical cost model of a tiled in-memory-computing accelerator.

Weight matrices are bit-sliced across fixed-size crossbars (one slice per
device-precision group of weight bits); crossbars group into processing
elements and tiles.  Energy per timestep is the sum of a fixed term per
allocated crossbar (switching, shift-add, accumulation, local buffering), an
activity term proportional to the spikes presented to each layer, and a flat
per-timestep control term.  Latency is strictly linear in timesteps:
timesteps are processed sequentially without pipelining.

All energies are in normalized units: the default coefficients are
calibrated (see `calibrate_energy_coefficients` and data/reference_trace.json)
so that one timestep of the bundled reference workload costs 1.0, the
8-timestep/1-timestep energy ratio is 4.9, and the component shares at four
timesteps are 45% digital peripherals, 25% crossbar+ADC, 30%
buffers/interconnect.  The entropy-exit module adds 2e-5 of a one-timestep
inference energy per invocation and no latency.
"""

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ArchConfig:
    """Accelerator parameters; geometry defaults follow the reference design.

    The energy coefficients are in normalized units per event (see module
    docstring); every value can be overridden from the hardware section of a
    run configuration.
    """

    crossbar_size: int = 64
    crossbars_per_tile: int = 64
    crossbars_per_pe: int = 8
    device_bits: int = 4
    weight_bits: int = 8
    sigma_over_mu: float = 0.20
    r_on_kohm: float = 20.0
    r_off_over_r_on: float = 10.0
    v_dd: float = 0.9
    v_read: float = 0.1
    global_buffer_kb: float = 20.0
    tile_buffer_kb: float = 10.0
    pe_buffer_kb: float = 5.0
    sigma_lut_kb: float = 3.0
    entropy_lut_kb: float = 3.0
    technology: str = "32nm CMOS"
    adc_mux_ratio: int = 8  # columns per ADC; a sharing/area design point
    # Energy coefficients (normalized units), frozen from
    # calibrate_energy_coefficients() on the bundled reference trace:
    e_mac: float = 1.4225149475838339e-08
    e_adc: float = 7.112574737919169e-07
    e_crossbar_digital: float = 2.976925708891303e-05
    e_crossbar_buffer: float = 1.9846171392777032e-05
    e_step_digital: float = 0.09175735585005537
    e_step_buffer: float = 0.06117157056722247
    sigma_e_ratio: float = 2e-5
    latency_per_timestep: float = 1.0

    def __post_init__(self):
        if self.device_bits < 1 or self.weight_bits < 1:
            raise ConfigError("device_bits and weight_bits must be positive")
        if self.weight_bits % self.device_bits:
            raise ConfigError(
                f"weight_bits ({self.weight_bits}) must be divisible by "
                f"device_bits ({self.device_bits})"
            )
        for name in (
            "crossbar_size", "crossbars_per_tile", "crossbars_per_pe",
            "adc_mux_ratio",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in (
            "r_on_kohm", "r_off_over_r_on", "v_dd", "v_read",
            "global_buffer_kb", "tile_buffer_kb", "pe_buffer_kb",
            "sigma_lut_kb", "entropy_lut_kb", "latency_per_timestep",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma_over_mu < 0 or self.sigma_e_ratio < 0:
            raise ConfigError("sigma_over_mu and sigma_e_ratio must be >= 0")

    @property
    def bit_slices(self):
        return self.weight_bits // self.device_bits


@dataclass(frozen=True)
class LayerMap:
    """Crossbar allocation of one weighted layer."""

    index: int
    kind: str
    fan_in: int
    fan_out: int
    bit_slices: int
    rows_needed: int
    cols_needed: int
    row_blocks: int
    col_blocks: int
    crossbar_count: int
    pe_count: int
    tile_count: int


@dataclass(frozen=True)
class LayerMapping:
    """Per-layer crossbar allocation for a whole network."""

    layers: tuple

    @property
    def total_crossbars(self):
        return sum(l.crossbar_count for l in self.layers)

    @property
    def total_tiles(self):
        return sum(l.tile_count for l in self.layers)


def map_layer(index, kind, fan_in, fan_out, arch):
    """Bit-slice one weight matrix onto fixed-size crossbars."""
    if fan_in < 1 or fan_out < 1:
        raise ShapeError(
            f"layer {index} has zero-size weight matrix ({fan_in} x {fan_out})"
        )
    slices = arch.bit_slices
    cols_needed = fan_out * slices
    row_blocks = math.ceil(fan_in / arch.crossbar_size)
    col_blocks = math.ceil(cols_needed / arch.crossbar_size)
    crossbars = row_blocks * col_blocks
    return LayerMap(
        index=index,
        kind=kind,
        fan_in=fan_in,
        fan_out=fan_out,
        bit_slices=slices,
        rows_needed=fan_in,
        cols_needed=cols_needed,
        row_blocks=row_blocks,
        col_blocks=col_blocks,
        crossbar_count=crossbars,
        pe_count=math.ceil(crossbars / arch.crossbars_per_pe),
        tile_count=math.ceil(crossbars / arch.crossbars_per_tile),
    )


def map_network(spec, arch):
    """Allocate crossbars for every conv / fc / classifier layer of a network.

    Convolutions map im2col style: fan_in = C_in * k_h * k_w, fan_out = C_out.
    """
    entries = []
    for i, (layer, (in_shape, out_shape)) in enumerate(
        zip(spec.layers, spec.layer_shapes())
    ):
        if layer.kind == "conv":
            fan_in = in_shape[0] * layer.kernel * layer.kernel
            entries.append(map_layer(i, "conv", fan_in, layer.out_channels, arch))
        elif layer.kind in ("fc", "classifier"):
            fan_in = int(np.prod(in_shape))
            fan_out = int(np.prod(out_shape))
            entries.append(map_layer(i, layer.kind, fan_in, fan_out, arch))
    return LayerMapping(layers=tuple(entries))


def _per_layer_coefficients(mapping, arch):
    """Fixed energy per crossbar and activity coefficient for each layer.

    The activity term is linear in presented spikes: each spike drives one
    row across the layer's active columns (e_mac per column) and contributes
    a proportional share of the column conversions (e_adc per crossbar_size
    rows, i.e. converters duty-cycle with row occupancy).
    """
    xbars = np.array([l.crossbar_count for l in mapping.layers], dtype=np.float64)
    cols = np.array([l.cols_needed for l in mapping.layers], dtype=np.float64)
    fixed_digital = arch.e_crossbar_digital * xbars
    fixed_buffer = arch.e_crossbar_buffer * xbars
    act_mac = arch.e_mac * cols
    act_adc = arch.e_adc * cols / arch.crossbar_size
    return fixed_digital, fixed_buffer, act_mac, act_adc


def energy_per_timestep(mapping, activity, arch):
    """Energy of one timestep given per-layer presented-spike counts.

    Returns (total, components) where components splits the total into
    crossbar_adc / digital / buffer_interconnect.
    """
    activity = np.asarray(activity, dtype=np.float64)
    if activity.shape != (len(mapping.layers),):
        raise ValueError(
            f"activity has {activity.shape} entries, mapping has "
            f"{len(mapping.layers)} layers"
        )
    fixed_digital, fixed_buffer, act_mac, act_adc = _per_layer_coefficients(
        mapping, arch
    )
    crossbar_adc = float(((act_mac + act_adc) * activity).sum())
    digital = float(fixed_digital.sum() + arch.e_step_digital)
    buffer_ic = float(fixed_buffer.sum() + arch.e_step_buffer)
    total = crossbar_adc + digital + buffer_ic
    return total, {
        "crossbar_adc": crossbar_adc,
        "digital": digital,
        "buffer_interconnect": buffer_ic,
    }


def energy_matrix(activity, mapping, arch):
    """Vectorized per-timestep energies for activity of shape (..., T, L)."""
    activity = np.asarray(activity, dtype=np.float64)
    fixed_digital, fixed_buffer, act_mac, act_adc = _per_layer_coefficients(
        mapping, arch
    )
    fixed = fixed_digital.sum() + fixed_buffer.sum() + arch.e_step_digital + arch.e_step_buffer
    return (activity * (act_mac + act_adc)).sum(axis=-1) + fixed


def component_energy_matrix(activity, mapping, arch):
    """Per-component energies for activity of shape (..., T, L).

    Returns {"crossbar_adc": (..., T), "digital": (..., T),
    "buffer_interconnect": (..., T)}; summing the three reproduces
    energy_matrix exactly.
    """
    activity = np.asarray(activity, dtype=np.float64)
    fixed_digital, fixed_buffer, act_mac, act_adc = _per_layer_coefficients(
        mapping, arch
    )
    shape = activity.shape[:-1]
    return {
        "crossbar_adc": (activity * (act_mac + act_adc)).sum(axis=-1),
        "digital": np.full(shape, fixed_digital.sum() + arch.e_step_digital),
        "buffer_interconnect": np.full(shape, fixed_buffer.sum() + arch.e_step_buffer),
    }


def latency(t_used, arch):
    """Sequential, unpipelined timesteps: strictly linear latency."""
    if t_used < 1:
        raise ValueError(f"t_used must be >= 1, got {t_used}")
    return t_used * arch.latency_per_timestep


def sigma_e_energy(e_one_timestep, invocations, ratio=2e-5):
    """Energy of the softmax-entropy exit module.

    One invocation per executed timestep; each costs `ratio` of a
    one-timestep inference energy.  Accepts scalars or aligned arrays.
    """
    if np.any(np.asarray(invocations) < 0):
        raise ValueError(f"invocations must be >= 0, got {invocations}")
    return invocations * ratio * e_one_timestep


def edp(energy, latency_value):
    """Energy-delay product."""
    return energy * latency_value


@dataclass(frozen=True)
class CostReport:
    """Aggregate cost of one inference (or of a dataset-mean inference)."""

    total_energy: float
    total_latency: float
    edp: float
    per_timestep_energy: tuple
    components: dict
    timesteps_used: float

    def normalized_to(self, baseline):
        """Every field divided by the matching baseline field."""
        return CostReport(
            total_energy=self.total_energy / baseline.total_energy,
            total_latency=self.total_latency / baseline.total_latency,
            edp=self.edp / baseline.edp,
            per_timestep_energy=tuple(
                a / b
                for a, b in zip(self.per_timestep_energy, baseline.per_timestep_energy)
            ),
            components={
                k: (self.components[k] / baseline.components[k]
                    if baseline.components[k] else 0.0)
                for k in self.components
            },
            timesteps_used=self.timesteps_used / baseline.timesteps_used,
        )


def cost_of_inference(step_activities, mapping, arch, sigma_e_invocations=None):
    """Sum per-timestep energies, add exit-module overhead, compute EDP.

    step_activities: iterable of per-layer spike counts, one row per executed
    timestep.  sigma_e_invocations defaults to one per executed timestep
    (dynamic inference); pass 0 for a static run without the exit module.
    """
    rows = list(step_activities)
    if not rows:
        raise ValueError("cost_of_inference requires at least one timestep of activity")
    t_used = len(rows)
    if sigma_e_invocations is None:
        sigma_e_invocations = t_used
    energies = []
    comps = {"crossbar_adc": 0.0, "digital": 0.0, "buffer_interconnect": 0.0}
    for row in rows:
        e, c = energy_per_timestep(mapping, row, arch)
        energies.append(e)
        for k in comps:
            comps[k] += c[k]
    overhead = sigma_e_energy(energies[0], sigma_e_invocations, arch.sigma_e_ratio)
    comps["sigma_e"] = overhead
    total = float(sum(energies) + overhead)
    lat = latency(t_used, arch)
    return CostReport(
        total_energy=total,
        total_latency=lat,
        edp=edp(total, lat),
        per_timestep_energy=tuple(energies),
        components=comps,
        timesteps_used=t_used,
    )


def dataset_cost_fn(mapping, arch, dynamic=True):
    """Build a cost callback for threshold sweeps.

    Returns f(chosen_t, activity) -> (mean energy, mean latency, their
    product) where activity has shape (N, T, L) and chosen_t is (N,).
    Dataset-level EDP follows the mean-energy x mean-latency convention.
    """

    def cost(chosen_t, activity):
        e_steps = energy_matrix(activity, mapping, arch)  # (N, T)
        t_idx = np.arange(1, e_steps.shape[1] + 1)
        mask = t_idx[None, :] <= np.asarray(chosen_t)[:, None]
        energies = (e_steps * mask).sum(axis=1)
        if dynamic:
            energies = energies + sigma_e_energy(
                e_steps[:, 0], np.asarray(chosen_t), arch.sigma_e_ratio
            )
        lats = np.asarray(chosen_t) * arch.latency_per_timestep
        mean_e = float(energies.mean())
        mean_l = float(lats.mean())
        return mean_e, mean_l, edp(mean_e, mean_l)

    return cost


def apply_device_variation(weights, sigma_over_mu, seed):
    """Multiplicative conductance noise: w' = w * (1 + eps), eps ~ N(0, sigma/mu).

    `weights` may be a single array or a list of arrays; the same seed always
    produces the same perturbation.
    """
    if sigma_over_mu < 0:
        raise ValueError(f"sigma_over_mu must be >= 0, got {sigma_over_mu}")
    rng = np.random.default_rng(seed)
    single = isinstance(weights, np.ndarray)
    arrays = [weights] if single else list(weights)
    out = []
    for w in arrays:
        if sigma_over_mu == 0.0:
            out.append(w.copy())
        else:
            eps = rng.normal(0.0, sigma_over_mu, size=w.shape)
            out.append((w * (1.0 + eps)).astype(w.dtype))
    return out[0] if single else out


def perturbed_instance(net, sigma_over_mu, seed):
    """Clone an instance with device-variation noise on its mapped weights.

    Only crossbar-resident weight matrices are perturbed; biases and
    normalization parameters live in digital logic and stay exact.
    """
    clone = net.clone_state()
    clone.params = []
    rng_seed = seed
    for i, p in enumerate(net.params):
        if isinstance(p, dict):
            entry = dict(p)
            entry["w"] = apply_device_variation(p["w"], sigma_over_mu, rng_seed + i)
            clone.params.append(entry)
        else:
            clone.params.append(p)
    return clone


# ---------------------------------------------------------------------------
# Calibration against the bundled reference workload.
# ---------------------------------------------------------------------------

def load_reference_trace():
    """Reference workload: layer geometry plus dataset-mean spike counts.

    The trace describes a deep feedforward stack (VGG-like fan-in/fan-outs)
    with the dense analog drive of the first layer repeated every timestep
    and spiking activity that is strongest at the first timestep and decays
    as membranes settle.
    """
    with resources.files("dtsnn.data").joinpath("reference_trace.json").open() as fh:
        raw = json.load(fh)
    return raw


def reference_mapping(trace, arch):
    entries = [
        map_layer(i, l["kind"], l["fan_in"], l["fan_out"], arch)
        for i, l in enumerate(trace["layers"])
    ]
    return LayerMapping(layers=tuple(entries))


def calibrate_energy_coefficients(
    trace,
    arch,
    energy8_ratio=4.9,
    digital_share=0.45,
    buffer_share=0.30,
    share_at_t=4,
    adc_per_mac=50.0,
    per_crossbar_fraction=0.7,
):
    """Solve the energy coefficients against the published anchor points.

    Anchors: energy(8)/energy(1) == energy8_ratio on the reference trace;
    component shares at `share_at_t` timesteps equal digital_share and
    buffer_share (crossbar+ADC takes the remainder); one reference timestep
    costs 1.0.  The fixed digital/buffer budgets are split between a
    per-crossbar term and a flat per-timestep term by per_crossbar_fraction.
    """
    mapping = reference_mapping(trace, arch)
    spikes = np.asarray(trace["spikes"], dtype=np.float64)  # (8, L)
    if spikes.shape[0] < 8:
        raise ConfigError("reference trace must cover 8 timesteps")
    cols = np.array([l.cols_needed for l in mapping.layers], dtype=np.float64)
    act_coeff = cols * (1.0 + adc_per_mac / arch.crossbar_size)  # e_mac = 1 unit
    u = (spikes * act_coeff).sum(axis=1)
    fixed_total = (energy8_ratio * u[0] - u[:8].sum()) / (8.0 - energy8_ratio)
    if fixed_total <= 0:
        raise ConfigError(
            "reference trace is incompatible with the energy-ratio anchor "
            "(activity does not decay enough)"
        )
    total_at_share_t = share_at_t * fixed_total + u[:share_at_t].sum()
    fixed_digital = digital_share * total_at_share_t / share_at_t
    fixed_buffer = fixed_total - fixed_digital
    if fixed_buffer <= 0:
        raise ConfigError("component-share anchors leave no buffer budget")
    total_xbars = mapping.total_crossbars
    scale = 1.0 / (fixed_total + u[0])  # one reference timestep == 1.0
    return {
        "e_mac": scale,
        "e_adc": adc_per_mac * scale,
        "e_crossbar_digital": per_crossbar_fraction * fixed_digital / total_xbars * scale,
        "e_step_digital": (1 - per_crossbar_fraction) * fixed_digital * scale,
        "e_crossbar_buffer": per_crossbar_fraction * fixed_buffer / total_xbars * scale,
        "e_step_buffer": (1 - per_crossbar_fraction) * fixed_buffer * scale,
    }


def calibrated_arch(overrides=None, **kwargs):
    """ArchConfig with energy coefficients recalibrated from the bundled trace."""
    base = ArchConfig(**kwargs)
    coeffs = calibrate_energy_coefficients(load_reference_trace(), base)
    if overrides:
        coeffs.update(overrides)
    return replace(base, **coeffs)
