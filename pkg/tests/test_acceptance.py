"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``python tests/test_acceptance.py`` (or ``pytest -s``) to
see the summary lines.  The KDDCup99 criteria need the 10% data file named by
the CHAD_KDD_PATH environment variable and fail when it is absent.
"""
import math
import sys
import time

import numpy as np
import pandas as pd
import pytest

from chad.cli import main as cli_main
from chad.data import encode_frame, fit_schema, write_decl
from chad.evaluation import ExperimentConfig, ScoredSet, average_precision, latent_trace
from chad.kdd import ENV_VAR, desk_scale, find_kdd
from chad.model import ArchConfig, ChadModel
from chad.motivation import SyntheticConfig, run_motivation
from chad.negsampler import SamplerConfig, category_probs, perturb_batch
from chad.nn import numerical_gradcheck
from chad.synthetic import mixed_table
from chad.trainer import TrainConfig, indicators, param_checksum, schedule, substream, train

from conftest import make_dataset, make_schema
from test_evaluation import ap_oracle


@pytest.fixture
def verdict(capsys):
    def say(n: int, ok: bool, detail: str, flag: bool = False):
        word = "FLAG" if flag else ("PASS" if ok else "FAIL")
        with capsys.disabled():
            print(f"\n[criterion {n}] {word}: {detail}")
        assert ok, detail
    return say


# -- 1 ----------------------------------------------------------------------

def test_c1_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"rec": 0.0, "est": 0.0}
    for i in range(20):
        k = int(rng.integers(1, 4))
        arities = tuple(int(a) for a in rng.integers(2, 7, size=k))
        r = int(rng.integers(1, 6))
        widths = tuple(sorted(rng.integers(2, 9, size=int(rng.integers(1, 3))), reverse=True))
        # low thresholds so embeddings and the continuous transform are exercised too
        arch = ArchConfig(widths=widths, ae_dropout=0.0, est_dropout=0.0,
                          embed_threshold=int(rng.integers(2, 9)), cont_threshold=int(rng.integers(1, 6)),
                          cont_dim=int(rng.integers(1, 4)))
        schema = make_schema(arities, r)
        model = ChadModel(schema, arch, np.random.default_rng(i))
        d = make_dataset(schema, 5, i)
        nc, nv = perturb_batch(d.cat, d.cont, schema, SamplerConfig(negatives=3), rng)
        noise = rng.normal(size=(nc.shape[0], model.latent_dim))
        gamma = float(rng.uniform(1, 2))
        for kind, kw in (("rec", dict(rec_weight=1.0)), ("est", dict(rec_weight=0.0, use_est=True, gamma=gamma))):
            def f():
                losses, grads = model.loss_and_grads(d.cat, d.cont, nc, nv, training=False, noise=noise,
                                                     latent_noise=False, **kw)
                return losses["total"], grads
            worst[kind] = max(worst[kind], numerical_gradcheck(f, model.params(), h=1e-5))
    dt = time.perf_counter() - t0
    verdict(1, max(worst.values()) <= 1e-4 and dt < 60,
            f"max rel err L_R {worst['rec']:.2e}, L_est {worst['est']:.2e} (<= 1e-4); {dt:.1f}s")


# -- 2 ----------------------------------------------------------------------

def test_c2_ap_oracle(verdict):
    rng = np.random.default_rng(7)
    worst, checked = 0.0, 0
    while checked < 1000:
        n = int(rng.integers(2, 21))
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            continue
        scores = rng.integers(0, 6, n).astype(float) if rng.random() < 0.5 else rng.random(n)
        low = bool(rng.integers(2))
        got = average_precision(ScoredSet(scores, labels, low))
        worst = max(worst, abs(got - ap_oracle(list(scores), list(labels), low)))
        checked += 1
    hand = [average_precision(ScoredSet([0.1, 0.9], [1, 0])),
            average_precision(ScoredSet([0.9, 0.1], [1, 0])),
            average_precision(ScoredSet([0.1, 0.2, 0.3], [1, 0, 1]))]
    ok_hand = hand[0] == 1.0 and hand[1] == 0.5 and abs(hand[2] - 5 / 6) <= 1e-15
    verdict(2, worst <= 1e-12 and ok_hand,
            f"1000 instances, max |AP - oracle| = {worst:.1e}; hand examples {hand}")


# -- 3 ----------------------------------------------------------------------

def test_c3_sampler_stats(verdict):
    n = 100_000
    schema = make_schema((100, 10, 1), 35)
    cfg = SamplerConfig(delta=0.5)
    cat = np.zeros((1, 3), np.int64)
    cont = np.full((1, 35), 0.5)
    _, nv, info = perturb_batch(cat, cont, schema, cfg, np.random.default_rng(3), m=n, details=True)
    p = category_probs(schema.arities, cfg.dampening).probs
    chosen = info["chosen"]
    freq = chosen.sum(axis=0) / chosen.sum()
    z_sel = np.abs(freq - p) / np.sqrt(p * (1 - p) / chosen.sum())
    per_row = (info["up"] | info["down"]).sum(axis=1)
    d = nv - cont
    up, down = d[info["up"]], d[info["down"]]
    sd = math.sqrt(1 / 12)
    z_up = abs(up.mean() - 1.0) / (sd / math.sqrt(up.size))
    z_down = abs(down.mean() - 0.0) / (sd / math.sqrt(down.size))
    ok = (np.all(z_sel <= 3) and np.allclose(p, [0.827, 0.147, 0.026], atol=5e-4)
          and per_row.min() == per_row.max() == 16 and z_up <= 3 and z_down <= 3)
    verdict(3, ok, f"freq {np.round(freq, 4).tolist()} vs {np.round(p, 4).tolist()} (max {z_sel.max():.2f} sd); "
                   f"{per_row.min()}-{per_row.max()} continuous per sample; "
                   f"noise means {up.mean():+.4f} ({z_up:.2f} sd) / {down.mean():+.4f} ({z_down:.2f} sd)")


# -- 4 ----------------------------------------------------------------------

def test_c4_motivation(verdict):
    t0 = time.perf_counter()
    rows = [run_motivation(SyntheticConfig(), seed=s) for s in range(10)]
    dt = time.perf_counter() - t0
    df = pd.DataFrame(rows)
    order = int(((df["Contrast"] > df["K-means k=2"]) & (df["K-means k=2"] > df["GMM k=2"])).sum())
    m = df.mean()
    ok = (order >= 8 and m["Contrast"] >= 0.85 and m["GMM k=2"] <= 0.6
          and m["K-means k=1"] <= m["K-means k=2"] - 0.25 and dt < 300)
    verdict(4, ok, f"ordering in {order}/10 seeds; means contrast {m['Contrast']:.3f}, "
                   f"K-means k=2 {m['K-means k=2']:.3f}, GMM {m['GMM k=2']:.3f}, "
                   f"K-means k=1 {m['K-means k=1']:.3f}; {dt:.0f}s")


# -- 5, 6 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def kdd_result():
    path = find_kdd()
    if path is None:
        return None
    t0 = time.perf_counter()
    res = desk_scale(path, ExperimentConfig(n_runs=3, n_anomaly_sets=3, anomaly_ratio=0.2,
                                            train_size=10_000, seed=0))
    return res, time.perf_counter() - t0


def test_c5_kdd_desk_scale(verdict, kdd_result):
    if kdd_result is None:
        verdict(5, False, f"KDDCup99 10% file not found; set {ENV_VAR} to its path")
    res, dt = kdd_result
    ap = res.report.mean
    detail = f"mean AP {res.report.cell()} over {len(res.report.records)} mixes; {dt / 60:.1f} min"
    if 0.85 <= ap < 0.90:
        verdict(5, True, detail + " (below 0.90 target)", flag=True)
    else:
        verdict(5, ap >= 0.90 and dt <= 1200, detail)


def test_c6_ratio_trend(verdict, kdd_result):
    if kdd_result is None:
        verdict(6, False, f"KDDCup99 10% file not found; set {ENV_VAR} to its path")
    res, _ = kdd_result
    lo, hi = res.sweep[0.02], res.sweep[0.10]
    ok = hi >= lo - 0.03 and res.mean_normal_score > res.mean_attack_score
    verdict(6, ok, f"AP at 2% {lo:.4f}, at 10% {hi:.4f}; mean score normal "
                   f"{res.mean_normal_score:.4f} > attacks {res.mean_attack_score:.4f}")


# -- 7, 8 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    df, decl = mixed_table(n_normal=800, n_anomaly=10, seed=11)
    df = df[df.label == "normal"]
    schema = fit_schema(df, decl)
    data, _ = encode_frame(df, schema)
    cfg = TrainConfig(batch_size=64, seed=5)  # default 50/10/25 epochs
    model = ChadModel(schema, ArchConfig(), substream(5, "init"))
    model, log = train(model, data, cfg)
    return model, log, data, cfg


def test_c7_latent_noise_trace(verdict, trained):
    model, _, data, _ = trained
    t = latent_trace(model, data, SamplerConfig(), 100_000, np.random.default_rng(0))
    want = t["clean"] + t["p"]
    rel = abs(t["noisy"] - want) / want
    verdict(7, rel <= 0.05 and t["n"] == 100_000,
            f"trace noisy {t['noisy']:.3f} vs clean {t['clean']:.3f} + p {t['p']} (rel diff {rel:.4f})")


def test_c8_schedule(verdict, trained):
    model, log, data, cfg = trained
    ep = log.epochs
    n_batches = math.ceil(len(data) / cfg.batch_size)
    table = all(
        e.rec_batches == sum(indicators(e.phase, b)[0] for b in range(n_batches))
        and e.est_batches == sum(indicators(e.phase, b)[1] for b in range(n_batches))
        for e in ep)
    truth = ([indicators(1, b) for b in (0, 1)] == [(1, 0)] * 2
             and [indicators(2, b) for b in (0, 1)] == [(1, 1), (1, 0)]
             and [indicators(3, b) for b in (0, 1)] == [(0, 1)] * 2)
    lam = [e.lam for e in ep if e.phase < 3]
    lam_ok = lam == [1.0] * 50 + [math.exp(-t) for t in range(1, 11)]
    g3 = [e.gamma for e in ep if e.phase == 3]
    gamma_ok = bool(np.all(np.diff(g3) >= 0)) and g3[-1] == cfg.gamma_max
    frozen = {e.ae_checksum for e in ep if e.phase == 3} == {ep[59].ae_checksum} \
        == {param_checksum(model, model.autoencoder_param_names())}
    verdict(8, table and truth and lam_ok and gamma_ok and frozen,
            f"indicators {table and truth}, lambda {lam_ok}, gamma {g3[0]}->{g3[-1]} {gamma_ok}, "
            f"autoencoder frozen in phase 3 {frozen}")


# -- 9 ----------------------------------------------------------------------

def test_c9_determinism(verdict, tmp_path):
    df, decl = mixed_table(n_normal=400, n_anomaly=150, seed=2)
    df[df.label == "normal"].drop(columns="label").to_csv(tmp_path / "train.csv", index=False)
    df.to_csv(tmp_path / "labeled.csv", index=False)
    df.drop(columns="label").sample(frac=0.3, random_state=0).to_csv(tmp_path / "test.csv", index=False)
    write_decl(decl, tmp_path / "schema.ini")
    (tmp_path / "run.ini").write_text(
        f"[run]\nseed = 13\n[data]\nschema = {tmp_path / 'schema.ini'}\n"
        f"train = {tmp_path / 'train.csv'}\nlabeled = {tmp_path / 'labeled.csv'}\n"
        "[train]\nbatch_size = 64\nphase1_epochs = 5\nphase2_epochs = 3\nphase3_epochs = 5\n"
        "[experiment]\nn_runs = 2\nn_anomaly_sets = 2\n")
    codes = []
    for out in ("a", "b"):
        o = tmp_path / out
        codes += [cli_main(["train", "--config", str(tmp_path / "run.ini"), "--out", str(o)]),
                  cli_main(["score", "--model", str(o / "model.chad"), "--data", str(tmp_path / "test.csv"),
                            "--threshold", "0.5", "--out", str(o)]),
                  cli_main(["eval", "--config", str(tmp_path / "run.ini"), "--with-fae-r", "--out", str(o)]),
                  cli_main(["sweep", "--config", str(tmp_path / "run.ini"), "--out", str(o)])]
    files = ["model.chad", "scores.csv", "rejected.csv", "eval_report.jsonl", "sweep_report.jsonl"]
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files}
    verdict(9, codes == [0] * 8 and all(same.values()),
            f"exit codes {codes}; byte-identical: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
