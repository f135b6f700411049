import json

import numpy as np
import pytest

from emonoise.audio import AudioClip, measure, write_wav
from emonoise.env import (
    CATEGORIES,
    EnvSpec,
    NoiseBankError,
    apply_env,
    enumerate_env_grid,
    ingest_noise_bank,
    output_name,
)

from conftest import SR, noise_clip, tone


def test_grid_has_twelve_variants_with_stable_seeds():
    grid = enumerate_env_grid("utt1", seed=3)
    assert len(grid) == 12
    assert [s.variant for s in grid[:4]] == ["NatSt", "NatCo20", "NatCo10", "NatCo0"]
    assert len({s.tag for s in grid}) == 12
    assert [s.seed for s in grid] == [s.seed for s in enumerate_env_grid("utt1", seed=3)]
    assert grid[0].seed != enumerate_env_grid("utt2", seed=3)[0].seed


def test_extended_grid_adds_short_and_medium():
    grid = enumerate_env_grid("u", extended=True)
    assert len(grid) == 12 + 3 * 2 * 3
    assert all(s.extended for s in grid[12:])


def test_spec_validation():
    with pytest.raises(ValueError):
        EnvSpec("Nat", "Co", None)
    with pytest.raises(ValueError):
        EnvSpec("Nat", "St", 10.0)
    with pytest.raises(ValueError):
        EnvSpec("Rain", "Co", 10.0)
    assert output_name("u1", EnvSpec("Hum", "Co", 0.0)) == "u1__env_Hum_Co_0_Co.wav"


def test_start_placement_fades_over_first_half(small_bank):
    clip = tone(dur=1.0)
    out = apply_env(clip, EnvSpec("Nat", "St", None), small_bank)
    diff = out.samples - clip.samples
    half = len(clip) // 2
    assert np.all(diff[half:] == 0)
    first, last = diff[: half // 4], diff[3 * half // 4 : half]
    assert measure(first).rms > 3 * measure(last).rms


@pytest.mark.parametrize("length,frac", [("Co", 1.0), ("Me", 0.5)])
def test_continuous_placement_coverage(small_bank, length, frac):
    clip = tone(dur=2.0)
    out = apply_env(clip, EnvSpec("Hum", "Co", 10.0, length, seed=4), small_bank)
    touched = np.flatnonzero(out.samples != clip.samples)
    span = touched[-1] - touched[0] + 1
    assert span == pytest.approx(frac * len(clip), abs=2)


def test_short_placement_is_bounded(small_bank):
    clip = tone(dur=3.0)
    out = apply_env(clip, EnvSpec("Int", "Co", 10.0, "Sh", seed=9), small_bank)
    touched = np.flatnonzero(out.samples != clip.samples)
    assert touched[-1] - touched[0] + 1 <= int(0.1 * len(clip))


def test_apply_env_deterministic_per_seed(small_bank):
    clip = tone(dur=0.5)
    spec = EnvSpec("Nat", "Co", 10.0, seed=11)
    a = apply_env(clip, spec, small_bank)
    b = apply_env(clip, spec, small_bank)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_apply_env_rejects_tiny_clip(small_bank):
    with pytest.raises(ValueError):
        apply_env(AudioClip(np.ones(800) * 0.1, SR), EnvSpec("Nat", "Co", 10.0), small_bank)


def test_ingest_maps_labels_and_skips(tmp_path):
    for label, seed in (("rain", 1), ("crowd", 2), ("sirens", 3), ("mystery", 4)):
        d = tmp_path / label
        d.mkdir()
        write_wav(noise_clip(seed=seed, sr=22050, dur=0.3), d / "a.wav")
    write_wav(AudioClip(np.zeros(1000), SR), tmp_path / "rain" / "silent.wav")
    cmap = {"rain": "Nat", "crowd": "Hum", "sirens": "Int"}
    bank = ingest_noise_bank(tmp_path, cmap)
    assert bank.sample_rate == SR
    assert sorted(bank.categories()) == sorted(CATEGORIES)
    assert bank.skipped == {"mystery": 1, "rain": 1}
    for e in bank.entries:
        assert measure(e.clip).db_fs == pytest.approx(-20.0, abs=1e-6)


def test_ingest_empty_category_is_error(tmp_path):
    (tmp_path / "rain").mkdir()
    write_wav(noise_clip(dur=0.2), tmp_path / "rain" / "a.wav")
    (tmp_path / "map.json").write_text(json.dumps({"rain": "Nat", "crowd": "Hum"}))
    with pytest.raises(NoiseBankError, match="Hum"):
        ingest_noise_bank(tmp_path, tmp_path / "map.json")
