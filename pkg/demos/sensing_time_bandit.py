"""Compare sensing-time policies on the four-condition H1 plan followed by an idle stretch.

Run:  python3 demos/sensing_time_bandit.py [runs]
"""

import sys

from specsense import bandit as B


def main(runs: int = 10) -> None:
    actions = B.make_actions(B.A2_TIMES)
    bank = B.cnn_reference_bank(actions)
    weights = B.RewardWeights()

    print("Pd model (GSNR dB -> Pd per sensing time)")
    for g in (15, 8, 0, -5):
        row = "  ".join(f"{a.label}={bank.detection_probability(a, g):.3f}" for a in actions)
        print(f"  {g:>4} dB  {row}")

    print("\nExpected reward per frame under each condition")
    for g in (15, 8, 0, -5):
        vals = {a.label: B.expected_reward(a, B.H1, bank.detection_probability(a, g), weights) for a in actions}
        print(f"  H1 {g:>4} dB  " + "  ".join(f"{k}={v:+.3f}" for k, v in vals.items()))
    vals = {a.label: B.expected_reward(a, B.H0, 0.0, weights) for a in actions}
    print("  H0          " + "  ".join(f"{k}={v:+.3f}" for k, v in vals.items()))

    means = B.compare_policies(B.FIG11_PLAN, actions, bank, weights, seed=0, runs=runs)
    print(f"\nMean average reward over {runs} runs")
    for name, v in sorted(means.items(), key=lambda kv: -kv[1]):
        print(f"  {name:<12} {v:+.4f}")

    trace = B.run_scenario(B.FIG11_PLAN, B.BanditAgent(2, "egreedy"), actions, bank, weights, seed=0)
    print("\nShare of frames spent on the long window, per section (egreedy, run 0)")
    for k, sec in enumerate(B.FIG11_PLAN.sections):
        share = (trace.action_id[trace.section == k] == 1).mean()
        label = "H0" if sec.hypothesis == B.H0 else f"H1 {sec.gsnr_db:g} dB"
        print(f"  {label:<10} {share:.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
