"""Watch tabular Q-learning find a planted architecture.

The evaluator returns 1.0 for one architecture and at most 0.5 elsewhere,
so a successful search must end with the target as its greedy walk.

Run:  python3 demos/planted_search.py [target] [episodes]
"""

import sys

from specsense import nas
from specsense.cnn import ArchSpec


def main(target: str = "C32x5,GAP", episodes: int = 3000) -> None:
    cfg = nas.NasConfig(n_episodes=episodes)
    goal = ArchSpec.parse(target)
    print(f"search space: {nas.count_search_space(cfg):,} architectures")
    result = nas.run_search(cfg, nas.planted_evaluator(goal), seed=0)
    checkpoints = sorted({0, episodes // 4, episodes // 2, 3 * episodes // 4, episodes - 1})
    for n in checkpoints:
        rec = result.log[n]
        print(f"episode {rec.episode:>5}  eps={rec.epsilon:.2f}  reward={rec.reward:.3f}  {rec.arch}")
    best = result.best(cfg)
    print(f"\ngreedy architecture: {best}  ({'target found' if best == goal else 'target missed'})")
    print(f"distinct architectures evaluated: {len(result.cache)}; table entries: {len(result.qtable)}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(args[0] if args else "C32x5,GAP", int(args[1]) if len(args) > 1 else 3000)
