"""Train GearNet on a rotated Gaussian pair and watch target accuracy per step."""
from gearnet import DomainPairSpec, GearNetConfig, build_transition_matrix, make_domain_pair, run

spec = DomainPairSpec(n_classes=4, n_source=500, n_target=500, rotation_deg=40, seed=0)
data = make_domain_pair(spec, build_transition_matrix("uniform", 4, 0.2))  # 20% noisy source labels

cfg = GearNetConfig(steps=3, epochs=30, seed=0)  # quick scale: 3 macro-steps, 30 epochs each
state = run(cfg, data)

for rec in state.history:
    print(f"step {rec.step} {rec.direction:8s} target acc {rec.target_acc:.3f} "
          f"super {rec.super_loss:.3f} guide {rec.guide_loss:.4f}")
print("best", state.best_target_acc, "final", state.final_target_acc)

# swap in another backbone; everything else stays the same
cot = run(GearNetConfig(steps=3, epochs=30, seed=0, backbone="coteaching", noise_rate=0.2), data)
print("co-teaching best", cot.best_target_acc)
