import math
from dataclasses import replace

import numpy as np
import pytest

from bedexit.data import ground_truth_exits
from bedexit.sim import RfChannelParams, Scenario, SensorModel, generate_cohort, simulate_patient
from bedexit.sim.pose import PoseSeries, pose_trajectory
from bedexit.sim.reads import poisson_times, read_process
from bedexit.sim.rf import channel_at, phase_model, rssi_model_db, synth_phase, synth_rssi, wavelength
from bedexit.sim.scenario import SPEED_OF_LIGHT, load_scenario, save_scenario
from bedexit.sim.sensor import tilt_switch

QUIET = RfChannelParams(absorption=0.0, shadowing_sigma_db=0.0, rssi_quantum_db=1e-9, sensitivity_dbm=-200.0)


def test_doubling_range_costs_12_041_db():
    for r in (0.5, 1.0, 2.3):
        drop = synth_rssi(r, 922.0, QUIET) - synth_rssi(2 * r, 922.0, QUIET)
        assert drop == pytest.approx(40 * math.log10(2), abs=1e-6)
        assert abs(drop - 12.041) <= 0.001


def test_rssi_decreases_with_range():
    r = np.linspace(0.3, 5.0, 200)
    assert np.all(np.diff(rssi_model_db(r, 922.0, replace(QUIET, absorption=0.05))) < 0)


def test_rssi_deterministic_without_noise():
    a = synth_rssi(np.full(5, 1.7), 923.0, replace(QUIET, rssi_quantum_db=0.5))
    b = synth_rssi(np.full(5, 1.7), 923.0, replace(QUIET, rssi_quantum_db=0.5))
    assert a.tobytes() == b.tobytes()


def test_rssi_monte_carlo_mean():
    params = RfChannelParams(shadowing_sigma_db=2.0, sensitivity_dbm=-200.0)
    rng = np.random.default_rng(0)
    draws = synth_rssi(np.full(10_000, 1.5), 922.0, params, rng=rng)
    clean = rssi_model_db(1.5, 922.0, params)
    assert abs(draws.mean() - clean) <= 3 * 2.0 / 100


def test_rssi_below_sensitivity_is_missing():
    out = synth_rssi(np.array([1.0, 200.0]), 922.0, replace(QUIET, sensitivity_dbm=-70.0))
    assert np.isfinite(out[0]) and np.isnan(out[1])


def test_rssi_never_positive():
    out = synth_rssi(np.array([0.01, 0.02]), 922.0, QUIET)
    assert np.all(out <= 0)


def test_phase_advance_matches_formula():
    f, r, dr = 922.5, 2.0, 0.013
    got = phase_model(r + dr, f) - phase_model(r, f)
    assert got == pytest.approx(4 * math.pi * dr * f * 1e6 / SPEED_OF_LIGHT, abs=1e-6)


def test_half_wavelength_periodicity():
    params = RfChannelParams(phase_quantum_rad=1e-12)
    f = 924.0
    lam = float(wavelength(f))
    a = synth_phase(1.3, f, params, 0.4)
    b = synth_phase(1.3 + lam / 2, f, params, 0.4)
    d = (b - a + math.pi) % (2 * math.pi) - math.pi
    assert abs(d) < 1e-6


def test_channel_gap_at_three_metres():
    gap = phase_model(3.0, 921.0) - phase_model(3.0, 920.0)
    assert gap == pytest.approx(4 * math.pi * 3.0 * 1e6 / SPEED_OF_LIGHT, abs=1e-9)
    assert gap == pytest.approx(0.12575, abs=1e-4)


def test_phase_rate_tracks_radial_velocity():
    v, f, dt = 0.4, 922.0, 1e-3
    t = np.arange(0, 0.1, dt)
    psi = phase_model(1.0 + v * t, f)
    np.testing.assert_allclose(np.diff(psi) / dt, 4 * math.pi * f * 1e6 * v / SPEED_OF_LIGHT, rtol=1e-9)


def test_phase_in_range():
    p = synth_phase(np.linspace(0.2, 6, 1000), 925.0, RfChannelParams(), 5.9)
    assert np.all((p >= 0) & (p < 2 * math.pi))


def test_channels_round_robin():
    params = RfChannelParams()
    ch = channel_at(np.arange(0, 10, params.dwell_s), params)
    assert ch[:params.n_channels].tolist() == list(range(params.n_channels))
    freqs = params.channel_freqs_mhz()
    assert min(freqs) > 920.0 and max(freqs) < 926.0


def test_poisson_count():
    n = poisson_times(20.0, 600.0, np.random.default_rng(1)).size
    assert abs(n - 12000) <= 350
    assert poisson_times(0.0, 600.0, np.random.default_rng(1)).size == 0


def test_constant_pitch_no_flips():
    tr = tilt_switch(np.zeros(500), 0.05, SensorModel(p_stuck=0.0), seed=0)
    assert tr.flip_times.size == 0 and np.all(tr.ids == tr.ids[0])


def test_uniform_rotation_flip_time():
    m = SensorModel(p_stuck=0.0)
    dt, omega = 0.05, math.radians(5.0)  # 5 deg/s
    t = np.arange(0, 20, dt)
    tr = tilt_switch(omega * t, dt, m, seed=0)
    assert tr.flip_times.size == 1
    expect = math.radians(m.threshold_deg + m.hysteresis_deg) / omega
    assert abs(tr.flip_times[0] - expect) <= dt + 1e-9


def test_hysteresis_blocks_retrigger():
    m = SensorModel(p_stuck=0.0)
    dt = 0.05
    pitch = np.radians(np.concatenate([np.linspace(0, 65, 100), 65 + 8 * np.sin(np.linspace(0, 20, 400))]))
    assert tilt_switch(pitch, dt, m, seed=0).flip_times.size == 1


def _crossings(pitch, m):
    hi = math.radians(m.threshold_deg + m.hysteresis_deg)
    lo = math.radians(m.threshold_deg - m.hysteresis_deg)
    state = pitch[0] > math.radians(m.threshold_deg)
    n = 0
    for p in pitch:
        if not state and p > hi:
            state, n = True, n + 1
        elif state and p < lo:
            state, n = False, n + 1
    return n


def test_flip_count_matches_crossings(small_cohort, scenario):
    m = replace(scenario.sensor, p_stuck=0.0)
    for p in small_cohort:
        pose = pose_trajectory(p.script, scenario.dt, 3)
        assert tilt_switch(pose.pitch, scenario.dt, m, seed=0).flip_times.size == _crossings(pose.pitch, m)


def test_trajectory_is_continuous(small_cohort, scenario):
    v_max = 2.0  # m/s, above walking speed and stand-up transitions
    for p in small_cohort:
        pose = pose_trajectory(p.script, scenario.dt, 0)
        step = np.linalg.norm(np.diff(pose.pos, axis=0), axis=1)
        assert step.max() < v_max * scenario.dt


def test_lying_pose_geometry(small_cohort, scenario):
    pose = pose_trajectory(small_cohort[0].script, scenario.dt, 0)
    # middle of the first (lying) activity
    i = int(np.flatnonzero(pose.activity == 0).mean())
    assert abs(math.degrees(pose.pitch[i]) - 90) < 25
    assert abs(pose.pos[i, 2] - scenario.room.mattress_height) < 0.35


def test_labels_tile_record(small_cohort):
    for p in small_cohort:
        ivs = p.record.labels
        assert ivs[0].start == 0.0
        assert all(a.end == b.start for a, b in zip(ivs, ivs[1:]))
        assert ivs[-1].end == pytest.approx(p.record.duration)


def test_exits_coincide_with_scripted_stand_up(small_cohort, scenario):
    for p in small_cohort:
        gt = ground_truth_exits(p.record)
        assert len(gt) == len(p.scripted_exits)
        np.testing.assert_allclose(gt, p.scripted_exits, atol=scenario.dt + 1e-9)


def test_plurality_antenna_while_lying(scenario):
    n = 2000
    pos = np.tile([1.4, 0.95, scenario.room.mattress_height + 0.1], (n, 1))
    pose = PoseSeries(np.arange(n) * 0.05, pos, np.full(n, math.pi / 2), np.zeros(n), np.zeros(n),
                      np.ones(n, bool), np.zeros(n, np.int64), 0.05)
    table = read_process(pose, np.full(n, 2), scenario.room.antennas, scenario.rf, 20.0, seed=0)
    counts = {a: int(np.sum(table.antenna_id == a)) for a in scenario.room.antennas}
    # noise-free received power ranks the antennas
    normal = pose.normal()[0]
    power = {}
    for a, ap in scenario.room.antennas.items():
        to = np.asarray(ap) - pos[0]
        cos = normal @ to / np.linalg.norm(to)
        loss = 10 * math.log10(max(scenario.rf.orientation_floor, abs(cos))) - (scenario.rf.body_loss_db if cos < 0 else 0)
        power[a] = float(rssi_model_db(np.linalg.norm(to), 922.0, scenario.rf)) + loss
    assert max(counts, key=counts.get) == max(power, key=power.get)


def test_zero_rate_gives_empty_stream(scenario, small_cohort):
    pose = pose_trajectory(small_cohort[0].script, scenario.dt, 0)
    assert len(read_process(pose, np.ones(len(pose), int), scenario.room.antennas, scenario.rf, 0.0, seed=0)) == 0


def test_default_cohort_exit_total():
    cohort = generate_cohort(23)
    total = sum(len(ground_truth_exits(p.record)) for p in cohort)
    assert 46 <= total <= 138
    assert total >= 70


def test_patient_seeds_independent_of_cohort_size(scenario):
    a = generate_cohort(3, scenario)[2].record
    b = simulate_patient(2, scenario).record
    assert a.equals(b)


def test_scenario_round_trip(tmp_path, scenario):
    save_scenario(scenario, tmp_path / "s.json")
    assert load_scenario(tmp_path / "s.json") == scenario
