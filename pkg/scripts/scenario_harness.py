"""Scenario#1 / Scenario#2 classifier runs over several split seeds.

Trains one GAN on the damaged surrogate pool, then repeats both scenarios
for each split seed so the spread of CA and MAE is visible.
"""
import argparse

import numpy as np

from shmgan.classifier import ClassifierConfig, test_classifier, train_classifier
from shmgan.signals import (DAMAGED, UNDAMAGED, SurrogateSpec, build_scenario, normalize_pool, segment,
                            synthesize_surrogate)
from shmgan.wdcgan import GanConfig, generate, train_gan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gan-epochs", type=int, default=200)
    ap.add_argument("--classifier-epochs", type=int, default=300)
    ap.add_argument("--split-seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()

    spec = SurrogateSpec()
    und = segment(synthesize_surrogate(spec, UNDAMAGED, np.random.default_rng(11)), 64)
    dam = segment(synthesize_surrogate(spec, DAMAGED, np.random.default_rng(12)), 64)
    gcfg = GanConfig(seg_len=64, channel_widths=[32, 16, 8, 4, 1], critic_iters=5, minibatch=32,
                     epochs=args.gan_epochs, lr_generator=2.5e-4, lr_critic=1e-3, critic_dropout_p=0.0,
                     eval_interval=args.gan_epochs, condition=DAMAGED)
    ckpt, _, _ = train_gan(gcfg, dam, eval_hook=lambda s, e: {})
    fakes = generate(ckpt, 256, np.random.default_rng(5))
    und, dam, fakes = normalize_pool(und), normalize_pool(dam), normalize_pool(fakes)

    ccfg = ClassifierConfig(seg_len=64, channel_widths=[32, 16, 8, 4, 1], epochs=args.classifier_epochs)
    print("seed  scenario  CA     MAE")
    results = {1: [], 2: []}
    for seed in args.split_seeds:
        for sid in (1, 2):
            split = build_scenario(und, dam, fakes, sid, np.random.default_rng(seed))
            _, _, model = train_classifier(ccfg, split)
            m = test_classifier(model, split)
            results[sid].append((m.classification_accuracy, m.mean_absolute_error))
            print(f"{seed:4d}  {sid:8d}  {m.classification_accuracy:.3f}  {m.mean_absolute_error:.3f}")
    for sid, rows in results.items():
        ca, mae = np.array(rows).T
        print(f"scenario {sid}: CA mean {ca.mean():.3f} min {ca.min():.3f}; MAE mean {mae.mean():.3f}")


if __name__ == "__main__":
    main()
