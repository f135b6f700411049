"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from emonoise.attack import (
    AttackConfig,
    AttackSample,
    DegradationOrdering,
    NoiseSources,
    measure_kind_damage,
    perturb,
    run_attack,
    run_conditions,
)
from emonoise.audio import AudioClip, measure, mix_at_snr, read_wav, write_wav
from emonoise.classifier import CallableHandle, ReferenceHandle, TrainConfig, train_reference, weighted_loss_and_grad
from emonoise.classifier.handles import featurize
from emonoise.classifier.model import class_weights
from emonoise.cli import main
from emonoise.env import EnvSpec
from emonoise.features import apply_znorm, extract_mfb, fit_speaker_stats
from emonoise.harness import ExperimentConfig, make_folds, run_experiment, uar
from emonoise.perception import CHANGING, PRESERVING, lint_passes, lint_recipe, lookup
from emonoise.synth.transforms import SynthSpec, fade, reverberate, speed_segment, speed_utterance
from emonoise.synth.tsm import pitch_shift
from emonoise.toy import make_toy_corpus, rms_threshold_oracle, write_toy_dataset

from conftest import SR, noise_clip, tone

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def _regression_snr(out, signal, noise, offset):
    n = len(noise)
    A = np.stack([signal[offset : offset + n], noise], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, out[offset : offset + n], rcond=None)
    return 10 * np.log10(np.mean((a * signal[offset : offset + n]) ** 2) / np.mean((b * noise) ** 2))


def test_1_snr_exactness(verdict, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errors = []
    for i in range(100):
        n_sig = int(rng.integers(1600, 32000))
        n_noise = int(rng.integers(800, 40000))
        amp = rng.uniform(0.01, 0.9)
        if i % 2:
            sig = tone(rng.uniform(100, 3000), n_sig / SR, amp=amp)
        else:
            sig = noise_clip(int(rng.integers(1 << 30)), n_sig / SR, amp=amp / 3)
        nz = noise_clip(int(rng.integers(1 << 30)), n_noise / SR, amp=rng.uniform(0.01, 0.5))
        snr = float(rng.choice([0.0, 10.0, 20.0]))
        offset = int(rng.integers(0, n_sig // 2))
        out = mix_at_snr(sig, nz, snr, offset=offset)
        # re-measure from the 16-bit file that would be written to disk
        path = tmp_path / f"{i}.wav"
        write_wav(out, path)
        placed = nz.samples[: min(len(nz), len(sig) - offset)]
        got = _regression_snr(read_wav(path).samples, sig.samples, placed, offset)
        errors.append(abs(got - snr))
    elapsed = time.perf_counter() - t0
    worst = max(errors)
    verdict(1, worst <= 0.1 and elapsed < 30, f"max |SNR error| {worst:.4f} dB over 100 triples in {elapsed:.1f}s")


def _peak_freq(x):
    n = 8 * len(x)
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n))
    k = int(np.argmax(spec[1:-1])) + 1
    a, b, c = np.log(spec[k - 1 : k + 2])
    return (k + 0.5 * (a - c) / (a - 2 * b + c)) * SR / n


def test_2_transform_contracts(verdict):
    t0 = time.perf_counter()
    problems = []
    for dur in (1.0, 2.3, 4.0):
        clip = noise_clip(3, dur)
        for rate in (1.25, 0.75):
            got = speed_utterance(clip, rate).duration
            if abs(got - dur / rate) > 0.010:
                problems.append(f"SpeedUtt {rate} on {dur}s: {got:.4f}s")
        for frac in (0.1, 0.25):
            seg = frac * clip.duration
            got = speed_segment(clip, 1.25, frac, seed=1).duration
            if abs(got - (dur - seg + seg / 1.25)) > 0.010:
                problems.append(f"SpeedSeg {frac} on {dur}s: {got:.4f}s")

    flat = AudioClip(np.full(10 * SR, 0.5), SR)
    out_f, in_f = fade(flat, "out").samples / 0.5, fade(flat, "in").samples / 0.5
    for t in (0.0, 1.0, 3.3, 7.5, 9.99):
        i = int(t * SR)
        if abs(out_f[i] - (1 - 0.02 * i / SR)) > 1e-3 or abs(in_f[i] - (1 - 0.02 * (10 - i / SR))) > 1e-3:
            problems.append(f"fade profile at {t}s")

    f = _peak_freq(pitch_shift(tone(440.0, 1.0), 1.25).samples)
    if abs(f / 550.0 - 1) > 0.02:
        problems.append(f"pitch 440 -> {f:.1f} Hz")

    x = noise_clip(4, 0.5, amp=0.05)
    if not np.allclose(reverberate(x, rir=AudioClip(np.array([1.0]), SR)).samples, x.samples, atol=1e-12):
        problems.append("reverb identity")
    h = np.zeros(1201)
    h[0], h[1200] = 1.0, 0.4
    echo = x.samples.copy()
    echo[1200:] += 0.4 * x.samples[:-1200]
    if not np.allclose(reverberate(x, rir=AudioClip(h, SR)).samples, echo, atol=1e-12):
        problems.append("two-tap echo")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 120
    verdict(2, ok, f"{len(problems)} contract violations {problems} in {elapsed:.1f}s; pitch probe {f:.1f} Hz")


def test_3_feature_front_end(verdict):
    rng = np.random.default_rng(3)
    bad = []
    for n in rng.integers(400, 48000, 50):
        seq = extract_mfb(AudioClip(rng.normal(0, 0.1, int(n)), SR))
        if seq.frames.shape != ((int(n) - 400) // 160 + 1, 40):
            bad.append(int(n))
    seqs = [extract_mfb(noise_clip(i, 0.4 + 0.1 * i, amp=0.02 * (1 + i)), f"u{i}", f"S{i % 3}") for i in range(9)]
    stats = fit_speaker_stats(seqs)
    dev = 0.0
    for spk in stats:
        z = np.concatenate([apply_znorm(s, stats).frames for s in seqs if s.speaker_id == spk])
        dev = max(dev, np.abs(z.mean(0)).max(), np.abs(z.std(0) - 1).max())
    verdict(3, not bad and dev <= 1e-6, f"frame-count mismatches {len(bad)}/50; max z-norm deviation {dev:.2e}")


def test_4_reference_classifier(verdict, toy):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 6))
    y = rng.integers(0, 3, 30)
    cw = class_weights(y)
    W = rng.normal(scale=0.5, size=(3, 7))
    _, g = weighted_loss_and_grad(W, X, y, cw, 1e-3)
    num = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        d = np.zeros_like(W)
        d[idx] = 1e-6
        num[idx] = (weighted_loss_and_grad(W + d, X, y, cw, 1e-3)[0] - weighted_loss_and_grad(W - d, X, y, cw, 1e-3)[0]) / 2e-6
    rel = np.abs(g - num).max() / np.abs(num).max()

    recs = toy.records
    stats = fit_speaker_stats(extract_mfb(toy.clips[r.utt_id], r.utt_id, r.speaker) for r in recs)
    feats = {r.utt_id: featurize(toy.clips[r.utt_id], stats[r.speaker]) for r in recs}
    plan = make_folds(recs, 5, seed=0)
    fold = plan.folds[0]
    part = {role: [r for r in recs if r.speaker in getattr(fold, role)] for role in ("train", "val", "test")}
    mat = {k: np.stack([feats[r.utt_id] for r in v]) for k, v in part.items()}
    model = train_reference(mat["train"], [r.label for r in part["train"]], mat["val"], [r.label for r in part["val"]])
    pred = model.predict(mat["test"])
    held = {a: uar([r.label.index(a) for r in part["test"]], pred[a]) for a in ("activation", "valence")}

    # shuffled labels, pooled over speaker-independent folds
    perm = np.random.default_rng(5).permutation(len(recs))
    shuffled = {r.utt_id: recs[j].label for r, j in zip(recs, perm)}
    y_true, y_pred = [], []
    for f in plan.folds:
        tr = [r for r in recs if r.speaker in f.train]
        va = [r for r in recs if r.speaker in f.val]
        te = [r for r in recs if r.speaker in f.test]
        m = train_reference(
            np.stack([feats[r.utt_id] for r in tr]), [shuffled[r.utt_id] for r in tr],
            np.stack([feats[r.utt_id] for r in va]), [shuffled[r.utt_id] for r in va],
            TrainConfig(seed=7), axes=("activation",),
        )
        y_pred.extend(m.predict(np.stack([feats[r.utt_id] for r in te]))["activation"])
        y_true.extend(shuffled[r.utt_id].index("activation") for r in te)
    chance = uar(y_true, y_pred)
    ok = rel <= 1e-4 and held["activation"] >= 0.90 and abs(chance - 1 / 3) <= 0.05
    verdict(
        4,
        ok,
        f"gradient rel err {rel:.1e}; held-out UAR act {held['activation']:.3f} (val {held['valence']:.3f}); "
        f"shuffled-label UAR {chance:.3f}",
    )


def test_5_degradation_and_recovery(verdict, toy):
    t0 = time.perf_counter()
    grid = tuple(EnvSpec(c, "Co", 0.0, "Co") for c in ("Nat", "Hum", "Int"))
    bundle = run_experiment(ExperimentConfig("leave-one-noise-out", grid, seed=0, jobs=4), toy.corpus)
    res = bundle.results
    # hygiene: no held-out kind among any training variant of its run
    for run in bundle.provenance["runs"].values():
        for fold in run["folds"]:
            assert not any(t.split("_")[1] == run["held_out"] for t in fold["variant_tags"])
    parts, ok = [], True
    for axis in ("activation", "valence"):
        losses = [-r[f"delta_{axis}"] for r in res["rows"]]
        ratios = [r[f"aug_gain_{axis}"] / -r[f"delta_{axis}"] for r in res["rows"]]
        ok &= min(losses) >= 0.10 and float(np.mean(ratios)) >= 0.5
        parts.append(
            f"{axis}: loss {'/'.join(f'{x:.2f}' for x in losses)}, recovered {'/'.join(f'{x:.2f}' for x in ratios)}"
        )
    elapsed = time.perf_counter() - t0
    verdict(5, ok and elapsed < 300, "; ".join(parts) + f" in {elapsed:.0f}s")


def _quiet(seed):
    x = noise_clip(seed + 5000, 1.0, amp=1.0).samples
    return AudioClip(0.03 * x / np.sqrt(np.mean(x**2)), SR)


def test_6_attack_correctness(verdict, small_bank):
    src = NoiseSources(bank=small_bank)
    rng = np.random.default_rng(6)
    mismatches, over_budget = 0, 0
    for i in range(50):
        clip = _quiet(i)
        fn = rms_threshold_oracle(measure(clip).rms * float(rng.uniform(1.001, 1.5)))
        k = int(rng.integers(1, 30))
        cfg = AttackConfig(k=max(k, 4), kinds=("Nat", "Hum", "Int"), seed=i)
        res = run_attack(clip, "low", CallableHandle(fn), cfg, src, f"u{i}")
        over_budget += res.queries_used > cfg.k or len(res.trace) > cfg.k
        first = res.searches[0]
        noise = dict(src.sounds(first.sound_id.split("_")[0]))[first.sound_id]
        flips = [fn(perturb(clip, noise, s)).activation != "low" for s in cfg.snr_grid]
        scan = max((s for s, f in zip(cfg.snr_grid, flips) if f), default=None)
        mismatches += first.best_snr_db != scan
    # a flip that holds only at 0 dB is not a success, whatever the budget
    zero_only = run_attack(
        _quiet(99), "low", CallableHandle(rms_threshold_oracle(0.03 * 1.3)), AttackConfig(k=25), src, "z"
    )
    rule_ok = not zero_only.success and all(s.best_snr_db in (None, 0.0) for s in zero_only.searches)
    ok = mismatches == 0 and over_budget == 0 and rule_ok
    verdict(6, ok, f"bisection vs scan mismatches {mismatches}/50; over-budget traces {over_budget}; 0 dB-only flip success={zero_only.success}")


def test_7_attack_condition_ordering(verdict, toy):
    t0 = time.perf_counter()
    recs = toy.records
    stats = fit_speaker_stats(extract_mfb(toy.clips[r.utt_id], r.utt_id, r.speaker) for r in recs)
    held = {"S06", "S07", "S08", "S09"}
    train = [r for r in recs if r.speaker not in held]
    test = [r for r in recs if r.speaker in held]
    X = np.stack([featurize(toy.clips[r.utt_id], stats[r.speaker]) for r in train])
    handle = ReferenceHandle(train_reference(X, [r.label for r in train]), stats, target_axis="valence")
    src = NoiseSources(toy.corpus.bank, toy.corpus.events)
    calib = [AttackSample(r.utt_id, toy.clips[r.utt_id], r.speaker) for r in test[::3]]
    samples = [AttackSample(r.utt_id, toy.clips[r.utt_id], r.speaker) for i, r in enumerate(test) if i % 3]
    damage = measure_kind_damage(calib, handle, src, src.additive_kinds())
    base = AttackConfig(seed=0, ordering=DegradationOrdering.from_degradation(damage))
    results = run_conditions(samples, handle, base, src, jobs=4)
    pif = {(r["corr"], r["eval"]): [r["pif"][k] for k in ("5", "15", "25")] for r in results["summary"]["rows"]}
    mono = all(v[0] <= v[1] <= v[2] for v in pif.values())
    eval_dom = all(pif[(c, False)][i] >= pif[(c, True)][i] for c in (False, True) for i in range(3))
    corr_dom = all(pif[(True, e)][i] >= pif[(False, e)][i] - 0.02 for e in (False, True) for i in range(3))
    elapsed = time.perf_counter() - t0
    table = "; ".join(f"corr={int(c)},eval={int(e)}: {'/'.join(f'{x:.2f}' for x in v)}" for (c, e), v in pif.items())
    verdict(
        7,
        mono and eval_dom and corr_dom and elapsed < 300,
        f"{len(samples)} samples, P_IF@5/15/25 {table}; monotone={mono} eval={eval_dom} corr={corr_dom} in {elapsed:.0f}s",
    )


def test_8_perception_ledger(verdict):
    published = {
        ("FillerS", ""): (0.06, 0.03),
        ("FillerL", ""): (0.10, 0.06),
        ("Laugh", ""): (0.16, 0.17),
        ("Cry", ""): (0.20, 0.22),
        ("SpeedUtt", "1.25x"): (0.13, 0.03),
        ("SpeedUtt", "0.75x"): (0.28, 0.06),
        ("Pitch", "1.25x"): (0.22, 0.07),
        ("Pitch", "0.75x"): (0.29, 0.10),
    }
    table_ok = all(
        (lookup(k, v).act_change_ratio, lookup(k, v).val_change_ratio) == r and lookup(k, v).verdict == CHANGING
        for (k, v), r in published.items()
    )
    table_ok &= all(lookup(k).verdict == PRESERVING for k in ("Nat", "Hum", "Int", "SpeedSeg", "Reverb", "DropW"))
    rejected = [
        SynthSpec("SpeedUtt", {"rate": 1.25}),
        SynthSpec("Pitch", {"ratio": 0.75}),
        SynthSpec("FillerS"),
        SynthSpec("FillerL"),
        SynthSpec("Laugh"),
        SynthSpec("Cry"),
    ]
    rejects = [not lint_passes(lint_recipe([s])) for s in rejected]
    overrides = [lint_passes(lint_recipe([s], allow_perception_changing=True)) for s in rejected]
    env_ok = lint_passes(lint_recipe([EnvSpec(c, "Co", 0.0, "Co") for c in ("Nat", "Hum", "Int")]))
    ok = table_ok and all(rejects) and all(overrides) and env_ok
    verdict(8, ok, f"published ratios exact={table_ok}; rejected {sum(rejects)}/6 without override; env recipe accepted={env_ok}")


def test_9_augment_determinism(verdict, tmp_path):
    paths = write_toy_dataset(tmp_path / "data", n_utterances=6, seed=9)
    recipe = tmp_path / "recipe.json"
    recipe.write_text(
        json.dumps(
            {
                "seed": 11,
                "env_grid": True,
                "specs": [
                    {"type": "synth", "kind": "SpeedSeg", "params": {"rate": 1.25, "fraction": 0.2}},
                    {"type": "synth", "kind": "Reverb", "params": {"rt60_s": 0.4}},
                    {"type": "synth", "kind": "FadeOut"},
                ],
            }
        )
    )
    trees = []
    for run, jobs in enumerate(("1", "4", "1", "8")):
        out = tmp_path / f"out{run}"
        code = main(
            ["augment", "--manifest", str(paths["manifest"]), "--recipe", str(recipe),
             "--noise-bank", str(paths["noise_bank"]), "--out-dir", str(out), "--jobs", jobs]
        )
        assert code == 0
        trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    n_wav = sum(name.endswith(".wav") for name in trees[0])
    same = all(t == trees[0] for t in trees[1:])
    verdict(9, same and n_wav == 6 * 15, f"{n_wav} WAVs byte-identical across 4 runs (jobs 1/4/1/8): {same}")
