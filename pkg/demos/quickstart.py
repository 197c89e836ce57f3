"""Train one seed on the frozen benchmark and report what stage 2 adds.

    python3 demos/quickstart.py --seed 1 --mode full
"""
import argparse

from agra.experiments import benchmark_run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--mode", default="full")
    parser.add_argument("--stage2-epochs", type=int, default=20)
    args = parser.parse_args()

    outcome = benchmark_run(args.mode, args.seed, stage2_epochs=args.stage2_epochs)
    print("epoch stage  cls_loss  dom_loss  src_acc  tgt_acc  d_acc")
    for row in outcome.history:
        print(f"{row['epoch']:5d} {row['stage']:5d}  {row['cls_loss']:8.4f}  {row['dom_loss']:8.4f}"
              f"  {row['src_acc']:7.3f}  {row['tgt_acc']:7.3f}  {row['d_acc']:5.3f}")
    print(f"\ntarget accuracy after stage 1: {outcome.stage1_tgt_acc:.3f}")
    print(f"target accuracy after stage 2: {outcome.tgt_acc:.3f}")
    print(f"held-out discriminator accuracy: {outcome.d_acc:.3f}")


if __name__ == "__main__":
    main()
