"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line at its stated tolerance."""

import time

import numpy as np
import pytest

from conftest import contracting_system, random_schedule, random_stable
from ssmlab.certify import (StorageCertificate, comparison_bound_check, contraction_holds,
                            dissipation_residual, dyadic_windows, iss_bound_check,
                            kernel_energy_holds, kernel_energy_residual, kernel_output_residual,
                            lmi_violation_sweep, uniform_contraction_check, DEFAULT_X_GRID)
from ssmlab.cli import main
from ssmlab.experiments import run_experiment2, seeded_initial_state
from ssmlab.numlin import lyapunov_residual, lyapunov_solve, sym_eigen
from ssmlab.ssm import AffineGatedSystem, InputSignal, Mode, ModeSwitchedSystem, Schedule, simulate


@pytest.fixture
def verdict(capsys):
    def emit(n, title, ok, detail, seconds=None):
        timing = f" [{seconds:.1f} s]" if seconds is not None else ""
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {title}: {detail}{timing}")
        assert ok, detail
    return emit


def test_criterion_1_lyapunov(verdict):
    t0 = time.perf_counter()
    worst_res, worst_eig = 0.0, np.inf
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 2 + seed % 7
        A = random_stable(rng, n)
        Q = lyapunov_solve(A, np.eye(n))
        worst_res = max(worst_res, lyapunov_residual(A, Q, np.eye(n)))
        worst_eig = min(worst_eig, sym_eigen(Q).values[-1])
    dt = time.perf_counter() - t0
    ok = worst_res <= 1e-8 and worst_eig >= -1e-9 and dt < 5
    verdict(1, "Lyapunov correctness", ok,
            f"max residual {worst_res:.2e} <= 1e-8, min eig {worst_eig:.3e} >= -1e-9", dt)


def test_criterion_2_exp2_closed_forms(verdict):
    t0 = time.perf_counter()
    res = run_experiment2()
    dt = time.perf_counter() - t0
    s = res.summary
    err1 = np.max(np.abs(np.array(s["Q1_diag"]) - [2.5, 5 / 3, 1.25]))
    err2 = np.max(np.abs(np.array(s["Q2_diag"]) - [2.5, 5 / 3, 0.0]))
    honest, bad = s["honest"], s["violating"]
    ok = (err1 <= 1e-10 and err2 <= 1e-10 and honest["ranks"][:2] == [3, 2] and honest["monotone"]
          and honest["loewner_ok"] and not bad["monotone"] and not bad["loewner_ok"] and dt < 10)
    verdict(2, "Experiment 2 closed forms", ok,
            f"|Q1 err| {err1:.1e}, |Q2 err| {err2:.1e}, honest ranks {honest['ranks']}, "
            f"violating ranks {bad['ranks']} monotone={bad['monotone']} loewner={bad['loewner_ok']}", dt)


def test_criterion_3_state_collapse(verdict):
    worst = 0.0
    for seed in range(10):
        h0 = seeded_initial_state(seed)
        assert abs(np.linalg.norm(h0) - np.sqrt(3)) < 1e-12
        s = run_experiment2(seed=seed).summary
        worst = max(worst, s["max_abs_h3_after_6s"])
    verdict(3, "Experiment 2 state collapse", worst < 1e-6,
            f"max |h3(t)| on [6, 15] over 10 seeds = {worst:.2e} < 1e-6")


def test_criterion_4_exp1(verdict, experiment_runs):
    result, _, dt = experiment_runs("exp1")
    c = result.summary["conditions"]
    hip, stb, uns = c["hippo_like"], c["random_stable"], c["random_unstable"]
    fit_err = {k: abs(c[k]["gamma_fit"] - abs(c[k]["rightmost_re"])) / abs(c[k]["rightmost_re"])
               for k in ("hippo_like", "random_stable")}
    ratio = result.summary["decay_time_ratio_stable_over_hippo"]
    cond_ok = abs(hip["Q0_cond"] - 21) <= 0.5 * 21 and abs(stb["Q0_cond"] - 13) <= 0.5 * 13
    ok = (hip["Q0_positive_definite"] and stb["Q0_positive_definite"]
          and not uns["Q0_positive_definite"] and uns["diverged"]
          and max(fit_err.values()) <= 0.10 and ratio <= 1 / 3 and cond_ok and dt < 60)
    verdict(4, "Experiment 1 definiteness and decay", ok,
            f"Q0 PD hippo/stable/unstable = {hip['Q0_positive_definite']}/{stb['Q0_positive_definite']}/"
            f"{uns['Q0_positive_definite']}, fit errors {fit_err['hippo_like']:.1%}/{fit_err['random_stable']:.1%}"
            f" <= 10%, decay-time ratio {ratio:.3f} <= 0.333, cond {hip['Q0_cond']:.1f} (21 +-50%)/"
            f"{stb['Q0_cond']:.1f} (13 +-50%)", dt)


def _dissipation_case(seed, passive):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 4
    B = rng.standard_normal((n, 2))
    if passive:
        sys = AffineGatedSystem(-2.0 * np.eye(n), -np.eye(n), B, B.T)
    else:
        sys = AffineGatedSystem(0.5 * np.eye(n), 0.2 * np.eye(n), B, B.T)
    T = 4.0
    sched = random_schedule(rng, T)
    cert = StorageCertificate.constant(np.eye(n), 0.0, T)
    lmi = lmi_violation_sweep(sys, cert, DEFAULT_X_GRID, [0.0]).max_violation
    traj = simulate(sys, sched, InputSignal("white_noise", seed=seed, sample_dt=1e-2),
                    rng.standard_normal(n), 1e-3)
    windows = dyadic_windows(0.0, T)
    r = dissipation_residual(traj, cert, windows)
    excess = max(ri - 1e-5 * (b - a) for ri, (a, b) in zip(r, windows))
    return lmi, excess


def test_criterion_5_lmi_dissipation(verdict):
    t0 = time.perf_counter()
    good = [_dissipation_case(s, True) for s in range(50)]
    bad = [_dissipation_case(1000 + s, False) for s in range(50)]
    dt = time.perf_counter() - t0
    good_ok = all(lmi == 0.0 and ex <= 0 for lmi, ex in good)
    bad_ok = all(lmi > 0 and ex > 0 for lmi, ex in bad)
    verdict(5, "Dissipation/LMI consistency", good_ok and bad_ok and dt < 120,
            f"passive: max LMI {max(g[0] for g in good):.1e}, worst residual - 1e-5*len "
            f"{max(g[1] for g in good):.2e} <= 0; violating: {sum(b[1] > 0 for b in bad)}/50 fail a window", dt)


def test_criterion_6_kernel_conditions(verdict):
    Q = np.diag([1.0, 1.0, 0.0])
    r0 = kernel_output_residual(Q, [np.diag([1.0, 1.0, 0.0])])
    r1 = kernel_output_residual(Q, [np.eye(3)])
    re = kernel_energy_residual(Q, np.zeros((3, 3)), 0.1)
    ok = r0 == 0.0 and abs(r1 - 1.0) <= 1e-12 and abs(re - 0.2) <= 1e-12 and not kernel_energy_holds(re)
    verdict(6, "Kernel conditions", ok,
            f"output residual {r0:g} (C=diag(1,1,0)), {r1:g} (C=I); energy residual {re:g}, "
            f"rejected={not kernel_energy_holds(re)}")


def test_criterion_7_iss(verdict):
    t0 = time.perf_counter()
    delta, c = 0.5, 1.0
    scalar = ModeSwitchedSystem((Mode([[-delta]], [[1.0]], [[1.0]]),))
    traj = simulate(scalar, Schedule.constant(0, 0.0, 40.0), InputSignal("constant", value=c), [0.0], 1e-3)
    tight = iss_bound_check(traj, 1.0, 1.0, delta, 1.0).min_margin

    margins = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sys, Q = contracting_system(rng, 4, delta)
        A_list = [sys.params(x)[0] for x in DEFAULT_X_GRID]
        assert contraction_holds(uniform_contraction_check(Q, None, A_list, delta))
        inp = InputSignal("white_noise", amplitude=1.0, seed=seed, sample_dt=0.05)
        tr = simulate(sys, random_schedule(rng, 10.0), inp, rng.standard_normal(4), 1e-2)
        w = np.linalg.eigvalsh(Q)
        margins.append(iss_bound_check(tr, w[0], w[-1], delta, np.linalg.norm(sys.B, 2)).min_margin)

    d2, K, psi0 = 0.7, 1.3, 2.0
    t = np.linspace(0.0, 10.0, 10001)
    a = 0.5 * K
    psi = a / d2 + a * (d2 * np.sin(t) - np.cos(t)) / (d2**2 + 1)
    psi = psi + (psi0 - (a / d2 - a / (d2**2 + 1))) * np.exp(-d2 * t)
    comp = comparison_bound_check(t, psi, d2, K, 1.0 + np.sin(t))
    comp_err = float(np.max(np.abs(comp.margins)))
    dt = time.perf_counter() - t0
    ok = -1e-6 <= tight <= 1e-3 and min(margins) >= -1e-6 and comp_err <= 1e-5 and dt < 60
    verdict(7, "ISS bound", ok,
            f"tight scalar margin {tight:.2e} in [-1e-6, 1e-3]; 20 contracting 4-D systems min margin "
            f"{min(margins):.3e} >= -1e-6; comparison |margin| {comp_err:.1e} <= 1e-5", dt)


def test_criterion_8_exp3(verdict, experiment_runs):
    result, _, dt = experiment_runs("exp3")
    m = result.summary["metrics"]
    b, r = m["baseline"], m["regularized"]
    checks = {
        "reg LMI <= 0.01": r["max_lmi_violation"] <= 0.01,
        "base LMI >= 1": b["max_lmi_violation"] >= 1.0,
        "state ratio <= 0.25": r["max_state_norm"] <= 0.25 * b["max_state_norm"],
        "MSE ratio <= 1.5": r["task_mse_test"] <= 1.5 * b["task_mse_test"],
    }
    verdict(8, "Experiment 3 table", all(checks.values()) and dt < 600,
            f"LMI {r['max_lmi_violation']:.1e} / {b['max_lmi_violation']:.2f}, max |h| "
            f"{r['max_state_norm']:.3f} / {b['max_state_norm']:.3f} "
            f"(ratio {r['max_state_norm'] / b['max_state_norm']:.3f}), MSE {r['task_mse_test']:.4f} / "
            f"{b['task_mse_test']:.4f} (ratio {r['task_mse_test'] / b['task_mse_test']:.3f})"
            + "".join(f"; failed {k}" for k, v in checks.items() if not v), dt)


def test_criterion_9_determinism(verdict, experiment_runs, tmp_path):
    t0 = time.perf_counter()
    mismatched, compared = [], 0
    for name in ("exp1", "exp2", "exp3"):
        _, first, _ = experiment_runs(name)
        assert main(["--config", str(first / "manifest.json"), "--outdir", str(tmp_path)]) == 0
        second = tmp_path / name
        for f in sorted(first.iterdir()):
            if f.suffix in (".csv", ".json", ".svg"):
                compared += 1
                if f.read_bytes() != (second / f.name).read_bytes():
                    mismatched.append(f"{name}/{f.name}")
    dt = time.perf_counter() - t0
    verdict(9, "Determinism", not mismatched,
            f"{compared - len(mismatched)}/{compared} files byte-identical on manifest rerun"
            + (f"; differing: {', '.join(mismatched)}" if mismatched else ""), dt)
